"""Prompt assembly for the three prompt families plus chat personas.

Every bundle is the ordered concatenation of named sections: an instruction
(T), rules or analysis context (R or C), and a query (Q). Templates are
UTF-8 text assets with literal ``{{slot}}`` placeholders, grouped per
locale; substitution is literal with no escaping so prompts stay auditable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import date, datetime, timezone
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

from .domain import (
    Advice,
    DiagnosticReport,
    Dialogue,
    DomainError,
    Role,
    SeverityStandard,
    SourceLabel,
    Speaker,
)
from .retrieval import CriteriaDocument

_TEMPLATE_ROOT = Path(__file__).parent / "templates"
_SLOT_RE = re.compile(r"\{\{(\w+)\}\}")

STEP_MARKERS = ("Step 1:", "Step 2:", "Step 3:", "Step 4:")

USER_PREFIX = "User:"
ASSISTANT_PREFIX = "Counselor:"


class PromptKind(str, Enum):
    DIALOGUE_REWRITE = "dialogue_rewrite"
    REPORT_WITH_PRIORS = "report_with_priors"
    REPORT_INFERENCE = "report_inference"
    COUNSELOR_PERSONA = "counselor_persona"
    CYCLICAL_ANALYSIS = "cyclical_analysis"
    ADVICE_GENERATION = "advice_generation"


@dataclass(frozen=True)
class PromptOptions:
    """Ablation switches and locale for prompt assembly."""

    use_rag: bool = True
    use_cot: bool = True
    locale: str = "en"


@dataclass(frozen=True)
class RewriteLimits:
    """Length constraints stated by the rewrite rules and enforced on results."""

    min_turns: int = 4
    max_turns: int = 20
    max_turn_chars: int = 600


@dataclass(frozen=True)
class PromptBundle:
    """A rendered prompt with its named sections in order T, (R|C), Q."""

    kind: PromptKind
    parts: tuple[tuple[str, str], ...]
    options: PromptOptions

    @property
    def rendered(self) -> str:
        return "".join(text for _, text in self.parts)

    @property
    def contains_priors(self) -> bool:
        return self.kind == PromptKind.REPORT_WITH_PRIORS

    def part(self, name: str) -> str:
        for n, text in self.parts:
            if n == name:
                return text
        raise KeyError(name)


@lru_cache(maxsize=None)
def load_template(locale: str, name: str) -> str:
    path = _TEMPLATE_ROOT / locale / f"{name}.txt"
    if not path.exists():
        raise DomainError(f"no template {name!r} for locale {locale!r}")
    return path.read_text(encoding="utf-8")


def render_template(locale: str, name: str, **slots: str) -> str:
    text = load_template(locale, name)
    for key, value in slots.items():
        text = text.replace("{{" + key + "}}", value)
    unresolved = _SLOT_RE.search(text)
    if unresolved:
        raise DomainError(f"template {name!r} has unresolved slot {unresolved.group(1)!r}")
    return text


def format_dialogue(d: Dialogue) -> str:
    """Transcript with the User:/Counselor: line convention."""
    prefix = {Speaker.USER: USER_PREFIX, Speaker.ASSISTANT: ASSISTANT_PREFIX}
    return "\n".join(f"{prefix[t.speaker]} {t.text}" for t in d.turns)


def format_label(label: SourceLabel) -> str:
    parts = []
    if label.binary is not None:
        parts.append(f"binary={label.binary.value}")
    if label.severity is not None:
        parts.append(f"severity={label.severity.value}")
    if label.hamd is not None:
        parts.append(f"hamd={label.hamd}")
    return "; ".join(parts) if parts else "unspecified"


def format_report_block(report: DiagnosticReport) -> str:
    """Report fields for advice prompts. Findings keep symptom/criterion/agreement
    but drop the evidence quote so advice never leaks dialogue text."""
    lines = [
        f"classification: {report.binary_class.value}",
        f"severity: {report.severity.value}",
        f"subtype: {report.subtype_category}",
    ]
    for f in report.findings:
        word = "agrees" if f.agreement else "disagrees"
        lines.append(f"finding: {f.symptom} ({word} with: {f.criterion})")
    if report.narrative:
        lines.append(f"narrative: {report.narrative}")
    return "\n".join(lines)


def render_criteria_block(locale: str, criteria: CriteriaDocument) -> str:
    return render_template(
        locale, "criteria_block", subtype_name=criteria.subtype_name, criteria_text=criteria.text
    )


def default_severity_standard(locale: str = "en") -> SeverityStandard:
    return SeverityStandard(id=f"severity-banding-{locale}", text=load_template(locale, "severity_standard"))


def build_dialogue_rewrite_prompt(
    post: str, label: SourceLabel, limits: RewriteLimits = RewriteLimits(), locale: str = "en"
) -> PromptBundle:
    """P1: instruction + the eight rewrite rules + a query embedding the post."""
    if not post.strip():
        raise DomainError("post must be non-empty")
    del label  # carried by the post record; the rewrite prompt itself stays label-free
    opts = PromptOptions(locale=locale)
    t = load_template(locale, "rewrite_instruction")
    r = render_template(
        locale,
        "rewrite_rules",
        min_turns=str(limits.min_turns),
        max_turns=str(limits.max_turns),
        max_turn_chars=str(limits.max_turn_chars),
    )
    q = render_template(locale, "rewrite_query", post=post)
    return PromptBundle(
        kind=PromptKind.DIALOGUE_REWRITE, parts=(("T", t), ("R", r), ("Q", q)), options=opts
    )


def build_report_prompt(
    dialogue: Dialogue,
    label: SourceLabel,
    criteria: Optional[CriteriaDocument],
    std: SeverityStandard,
    opts: PromptOptions = PromptOptions(),
) -> PromptBundle:
    """P2: report generation with prior knowledge (label, criteria, severity standard).

    ``use_cot`` selects the four-step chain versus a single direct-answer
    instruction; ``use_rag`` controls whether the criteria document section
    appears (and requires ``criteria`` when on).
    """
    if opts.use_rag and criteria is None:
        raise DomainError("use_rag requires a retrieved criteria document")
    criteria_block = render_criteria_block(opts.locale, criteria) if opts.use_rag and criteria else ""
    t = load_template(opts.locale, "report_instruction")
    c = render_template(
        opts.locale,
        "report_cot" if opts.use_cot else "report_direct",
        label=format_label(label),
        dialogue=format_dialogue(dialogue),
        criteria_block=criteria_block,
        severity_standard=std.text,
    )
    q = load_template(opts.locale, "report_query")
    return PromptBundle(
        kind=PromptKind.REPORT_WITH_PRIORS, parts=(("T", t), ("C", c), ("Q", q)), options=opts
    )


def build_inference_prompt(dialogue: Dialogue, opts: PromptOptions = PromptOptions()) -> PromptBundle:
    """P2': the deployment-time prompt with all prior knowledge removed.

    Contains only the task instruction, the dialogue context, and the fixed
    JSON query: no label, no criteria text, no severity-standard text.
    """
    t = load_template(opts.locale, "inference_instruction")
    c = render_template(opts.locale, "inference_context", dialogue=format_dialogue(dialogue))
    q = load_template(opts.locale, "report_query")
    return PromptBundle(
        kind=PromptKind.REPORT_INFERENCE, parts=(("T", t), ("C", c), ("Q", q)), options=opts
    )


def build_counselor_persona(subject_role: Role, locale: str = "en") -> PromptBundle:
    """System persona for live chat; patient variant probes feelings, family
    variant probes observed behavior. Neither may issue a diagnosis."""
    if subject_role == Role.PATIENT:
        t = load_template(locale, "persona_patient")
    elif subject_role == Role.FAMILY:
        t = load_template(locale, "persona_family")
    else:
        raise DomainError("counselor persona exists only for patient and family roles")
    opts = PromptOptions(locale=locale)
    return PromptBundle(
        kind=PromptKind.COUNSELOR_PERSONA, parts=(("T", t), ("C", ""), ("Q", "")), options=opts
    )


def _report_day(r: DiagnosticReport) -> date:
    return datetime.fromtimestamp(r.created_at, tz=timezone.utc).date()


def build_cyclical_prompt(
    reports: Sequence[DiagnosticReport],
    window: tuple[date, date],
    locale: str = "en",
) -> PromptBundle:
    """Prompt for the windowed mental-state trend narrative.

    Embeds one dated summary line per report, built from report fields only;
    raw dialogue text never appears here.
    """
    if not reports:
        raise DomainError("cyclical prompt needs at least one report")
    start, end = window
    lines = [f"Period: {start.isoformat()} to {end.isoformat()}"]
    for r in sorted(reports, key=lambda r: r.created_at):
        lines.append(
            f"{_report_day(r).isoformat()}: classification {r.binary_class.value}, "
            f"severity {r.severity.value}, subtype {r.subtype_category}, "
            f"findings {len(r.findings)}"
        )
    opts = PromptOptions(locale=locale)
    t = load_template(locale, "cyclical_instruction")
    c = "\n".join(lines) + "\n\n"
    q = load_template(locale, "cyclical_query")
    return PromptBundle(
        kind=PromptKind.CYCLICAL_ANALYSIS, parts=(("T", t), ("C", c), ("Q", q)), options=opts
    )


def build_advice_prompt(report: DiagnosticReport, audience: Role, locale: str = "en") -> PromptBundle:
    """Prompt for treatment strategy (patient) or care advice (family)."""
    if audience == Role.PATIENT:
        name = "advice_treatment"
    elif audience == Role.FAMILY:
        name = "advice_care"
    else:
        raise DomainError("advice audience must be patient or family")
    text = render_template(locale, name, report_block=format_report_block(report))
    opts = PromptOptions(locale=locale)
    return PromptBundle(
        kind=PromptKind.ADVICE_GENERATION, parts=(("T", text), ("C", ""), ("Q", "")), options=opts
    )
