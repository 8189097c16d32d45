"""Shared domain vocabulary: roles, dialogues, labels, severity bands, reports.

All types are immutable values; operations are pure. Canonical wire form of
every type is a JSON object with snake_case fields, integer UTC-second
timestamps, and lowercase snake_case enum strings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from typing import Any, Optional


class DomainError(ValueError):
    """Raised when a precondition or domain invariant is violated."""


class Role(str, Enum):
    PATIENT = "patient"
    FAMILY = "family"
    DOCTOR = "doctor"


class Speaker(str, Enum):
    USER = "user"
    ASSISTANT = "assistant"


class BinaryClass(str, Enum):
    DEPRESSED = "depressed"
    NOT_DEPRESSED = "not_depressed"


class SeverityDegree(str, Enum):
    """Four-band severity scale, totally ordered NORMAL < MILD < MODERATE < SEVERE."""

    NORMAL = "normal"
    MILD = "mild"
    MODERATE = "moderate"
    SEVERE = "severe"

    @property
    def rank(self) -> int:
        return _SEVERITY_ORDER[self]

    def __lt__(self, other: object) -> bool:  # type: ignore[override]
        if not isinstance(other, SeverityDegree):
            return NotImplemented
        return self.rank < other.rank

    def __le__(self, other: object) -> bool:  # type: ignore[override]
        if not isinstance(other, SeverityDegree):
            return NotImplemented
        return self.rank <= other.rank

    def __gt__(self, other: object) -> bool:  # type: ignore[override]
        if not isinstance(other, SeverityDegree):
            return NotImplemented
        return self.rank > other.rank

    def __ge__(self, other: object) -> bool:  # type: ignore[override]
        if not isinstance(other, SeverityDegree):
            return NotImplemented
        return self.rank >= other.rank


_SEVERITY_ORDER = {
    SeverityDegree.NORMAL: 0,
    SeverityDegree.MILD: 1,
    SeverityDegree.MODERATE: 2,
    SeverityDegree.SEVERE: 3,
}

HAMD_MAX = 52


class AdviceKind(str, Enum):
    TREATMENT_STRATEGY = "treatment_strategy"
    CARE_ADVICE = "care_advice"


@dataclass(frozen=True)
class Turn:
    """One utterance in a counseling exchange.

    ``text`` must be non-empty after trimming; ``at`` is integer UTC seconds.
    """

    speaker: Speaker
    text: str
    at: int = 0

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise DomainError("turn text must be non-empty after trimming")


@dataclass(frozen=True)
class SourceLabel:
    """Ground-truth annotation attached to a dialogue or post.

    Any of the three fields may be absent. When both ``hamd`` and
    ``severity`` are present, the severity must equal ``band_hamd(hamd)``.
    """

    binary: Optional[BinaryClass] = None
    severity: Optional[SeverityDegree] = None
    hamd: Optional[int] = None

    def __post_init__(self) -> None:
        if self.hamd is not None:
            if not 0 <= self.hamd <= HAMD_MAX:
                raise DomainError(f"hamd score {self.hamd} outside 0..{HAMD_MAX}")
            if self.severity is not None and self.severity != band_hamd(self.hamd):
                raise DomainError(
                    f"severity {self.severity.value} inconsistent with hamd {self.hamd}"
                )

    def effective_binary(self) -> Optional[BinaryClass]:
        """Binary class stated directly or derivable from severity/hamd."""
        if self.binary is not None:
            return self.binary
        if self.severity is not None:
            return severity_to_binary(self.severity)
        if self.hamd is not None:
            return severity_to_binary(band_hamd(self.hamd))
        return None


@dataclass(frozen=True)
class Dialogue:
    """A multi-turn exchange between one subject (patient or family) and the assistant."""

    id: str
    subject_role: Role
    turns: tuple[Turn, ...]
    day: date
    label: Optional[SourceLabel] = None

    def user_turns(self) -> list[Turn]:
        return [t for t in self.turns if t.speaker == Speaker.USER]


@dataclass(frozen=True)
class SeverityStandard:
    """Guidance text describing how severity degrees are graded."""

    id: str
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise DomainError("severity standard text must be non-empty")


@dataclass(frozen=True)
class Finding:
    """A symptom observed in the dialogue matched against a criteria excerpt."""

    symptom: str
    evidence: str
    criterion: str
    agreement: bool


@dataclass(frozen=True)
class DiagnosticReport:
    """Structured assistive diagnostic report.

    Consistency rules (checked by :func:`validate_report`):
      * ``binary_class`` is depressed iff ``severity`` is not NORMAL
      * ``subtype_category`` is ``"none"`` iff ``binary_class`` is not_depressed
      * ``findings`` may be empty only for a not_depressed report
    """

    id: str
    dialogue_ids: tuple[str, ...]
    binary_class: BinaryClass
    severity: SeverityDegree
    findings: tuple[Finding, ...]
    subtype_category: str
    narrative: Optional[str] = None
    created_at: int = 0


@dataclass(frozen=True)
class Advice:
    """Guidance attached to a report: treatment strategy for the patient, care advice for the family."""

    kind: AdviceKind
    report_id: str
    text: str

    @property
    def audience(self) -> Role:
        return Role.PATIENT if self.kind == AdviceKind.TREATMENT_STRATEGY else Role.FAMILY


def band_hamd(score: int) -> SeverityDegree:
    """Map a HAMD score to its severity band.

    Below 7 is normal, 7-16 mild, 17-23 moderate, 24 and above severe.
    """
    if not isinstance(score, int) or isinstance(score, bool):
        raise DomainError("hamd score must be an integer")
    if not 0 <= score <= HAMD_MAX:
        raise DomainError(f"hamd score {score} outside 0..{HAMD_MAX}")
    if score < 7:
        return SeverityDegree.NORMAL
    if score <= 16:
        return SeverityDegree.MILD
    if score <= 23:
        return SeverityDegree.MODERATE
    return SeverityDegree.SEVERE


def severity_to_binary(sev: SeverityDegree) -> BinaryClass:
    """NORMAL maps to not_depressed; every other degree to depressed."""
    if sev == SeverityDegree.NORMAL:
        return BinaryClass.NOT_DEPRESSED
    return BinaryClass.DEPRESSED


def validate_report(r: DiagnosticReport) -> list[str]:
    """Return all violated report invariants; an empty list means the report is valid."""
    violations: list[str] = []
    depressed = r.binary_class == BinaryClass.DEPRESSED
    if depressed != (r.severity != SeverityDegree.NORMAL):
        violations.append(
            "binary/severity mismatch: binary_class "
            f"{r.binary_class.value} with severity_degree {r.severity.value}"
        )
    if (r.subtype_category == "none") != (r.binary_class == BinaryClass.NOT_DEPRESSED):
        if r.binary_class == BinaryClass.NOT_DEPRESSED:
            violations.append("subtype must be none: subtype_category set on a not_depressed report")
        else:
            violations.append("subtype missing: subtype_category must name a subtype on a depressed report")
    if depressed and not r.findings:
        violations.append("findings empty: a depressed report must cite at least one finding")
    for i, f in enumerate(r.findings):
        if not f.symptom.strip():
            violations.append(f"findings[{i}].symptom empty")
        if not f.criterion.strip():
            violations.append(f"findings[{i}].criterion empty")
    return violations


def validate_dialogue(d: Dialogue, first_speaker: Optional[Speaker] = None) -> list[str]:
    """Structural dialogue checks: alternation, timestamp order, optional opening speaker.

    The first speaker is unconstrained unless ``first_speaker`` is given
    (rewritten dialogues must open with the assistant greeting).
    """
    violations: list[str] = []
    if not d.turns:
        violations.append("dialogue has no turns")
        return violations
    if d.subject_role not in (Role.PATIENT, Role.FAMILY):
        violations.append(f"subject_role must be patient or family, got {d.subject_role.value}")
    if first_speaker is not None and d.turns[0].speaker != first_speaker:
        violations.append(f"opening: first turn must be {first_speaker.value}")
    for prev, cur in zip(d.turns, d.turns[1:]):
        if prev.speaker == cur.speaker:
            violations.append(f"alternation: consecutive {cur.speaker.value} turns")
            break
    for prev, cur in zip(d.turns, d.turns[1:]):
        if cur.at < prev.at:
            violations.append("timestamps: non-decreasing order violated")
            break
    return violations


# --- canonical JSON (de)serialization ---------------------------------------

def turn_to_json(t: Turn) -> dict[str, Any]:
    return {"speaker": t.speaker.value, "text": t.text, "at": t.at}


def turn_from_json(obj: dict[str, Any]) -> Turn:
    return Turn(speaker=Speaker(obj["speaker"]), text=obj["text"], at=int(obj.get("at", 0)))


def label_to_json(l: SourceLabel) -> dict[str, Any]:
    return {
        "binary": l.binary.value if l.binary else None,
        "severity": l.severity.value if l.severity else None,
        "hamd": l.hamd,
    }


def label_from_json(obj: dict[str, Any]) -> SourceLabel:
    return SourceLabel(
        binary=BinaryClass(obj["binary"]) if obj.get("binary") else None,
        severity=SeverityDegree(obj["severity"]) if obj.get("severity") else None,
        hamd=int(obj["hamd"]) if obj.get("hamd") is not None else None,
    )


def dialogue_to_json(d: Dialogue) -> dict[str, Any]:
    return {
        "id": d.id,
        "subject_role": d.subject_role.value,
        "turns": [turn_to_json(t) for t in d.turns],
        "day": d.day.isoformat(),
        "label": label_to_json(d.label) if d.label else None,
    }


def dialogue_from_json(obj: dict[str, Any]) -> Dialogue:
    return Dialogue(
        id=obj["id"],
        subject_role=Role(obj["subject_role"]),
        turns=tuple(turn_from_json(t) for t in obj["turns"]),
        day=date.fromisoformat(obj["day"]),
        label=label_from_json(obj["label"]) if obj.get("label") else None,
    )


def finding_to_json(f: Finding) -> dict[str, Any]:
    return {
        "symptom": f.symptom,
        "evidence": f.evidence,
        "criterion": f.criterion,
        "agreement": f.agreement,
    }


def report_to_json(r: DiagnosticReport) -> dict[str, Any]:
    return {
        "id": r.id,
        "dialogue_ids": list(r.dialogue_ids),
        "binary_class": r.binary_class.value,
        "severity_degree": r.severity.value,
        "findings": [finding_to_json(f) for f in r.findings],
        "subtype_category": r.subtype_category,
        "narrative": r.narrative,
        "created_at": r.created_at,
    }


def finding_from_json(obj: dict[str, Any]) -> Finding:
    return Finding(
        symptom=obj["symptom"],
        evidence=obj.get("evidence", ""),
        criterion=obj["criterion"],
        agreement=bool(obj["agreement"]),
    )


def report_from_json(obj: dict[str, Any]) -> DiagnosticReport:
    """Strict deserialization of the canonical report wire form.

    For tolerant parsing of model output use ``gateway.parse_report``.
    """
    return DiagnosticReport(
        id=obj.get("id", ""),
        dialogue_ids=tuple(obj.get("dialogue_ids", ())),
        binary_class=BinaryClass(obj["binary_class"]),
        severity=SeverityDegree(obj["severity_degree"]),
        findings=tuple(finding_from_json(f) for f in obj["findings"]),
        subtype_category=obj["subtype_category"],
        narrative=obj.get("narrative"),
        created_at=int(obj.get("created_at", 0)),
    )


def advice_to_json(a: Advice) -> dict[str, Any]:
    return {"kind": a.kind.value, "report_id": a.report_id, "text": a.text}


def advice_from_json(obj: dict[str, Any]) -> Advice:
    return Advice(kind=AdviceKind(obj["kind"]), report_id=obj["report_id"], text=obj["text"])
