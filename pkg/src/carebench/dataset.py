"""Dataset construction: social-media posts rewritten into counseling
dialogues, corpus union, report-label generation with a consistency gate,
and instruction-record export for downstream fine-tuning."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import prompts
from .domain import (
    DiagnosticReport,
    Dialogue,
    DomainError,
    Role,
    SourceLabel,
    Speaker,
    Turn,
    dialogue_from_json,
    dialogue_to_json,
    label_from_json,
    label_to_json,
    report_to_json,
    report_from_json,
    severity_to_binary,
    validate_dialogue,
)
from .gateway import ChatMessage, ChatProvider, CompletionParams, complete_chat, request_report
from .prompts import ASSISTANT_PREFIX, USER_PREFIX, PromptOptions, RewriteLimits
from .retrieval import CriteriaCorpus, EmbeddingProvider, extract_user_content, retrieve_criteria
from .domain import SeverityStandard

REWRITE_EPOCH = date(1970, 1, 1)


class TranscriptParseError(DomainError):
    """A rewrite transcript could not be parsed into alternating turns."""


@dataclass(frozen=True)
class Post:
    id: str
    text: str
    label: SourceLabel
    source: str = ""

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise DomainError("post text must be non-empty")


@dataclass(frozen=True)
class DialogueCorpus:
    dialogues: tuple[Dialogue, ...]
    provenance: str = "rewritten"  # rewritten | clinical
    id: str = ""


@dataclass(frozen=True)
class InstructionRecord:
    instruction: str
    input: str
    output: str


@dataclass(frozen=True)
class QuarantineRecord:
    dialogue_id: str
    reason: str
    raw_text: str = ""


@dataclass
class LabelBuildResult:
    pairs: list[tuple[Dialogue, DiagnosticReport]] = field(default_factory=list)
    quarantined: list[QuarantineRecord] = field(default_factory=list)


def parse_transcript(text: str, base_day: date = REWRITE_EPOCH) -> tuple[Turn, ...]:
    """Parse ``Counselor:`` / ``User:`` prefixed lines into turns.

    Lines before the first prefixed line are ignored; unprefixed lines after
    that continue the current turn. Two consecutive turns by the same
    speaker are a parse error.
    """
    del base_day  # reserved: timestamps are synthetic sequence numbers
    turns: list[tuple[Speaker, list[str]]] = []
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        speaker: Optional[Speaker] = None
        body = ""
        if stripped.startswith(ASSISTANT_PREFIX):
            speaker = Speaker.ASSISTANT
            body = stripped[len(ASSISTANT_PREFIX):].strip()
        elif stripped.startswith(USER_PREFIX):
            speaker = Speaker.USER
            body = stripped[len(USER_PREFIX):].strip()
        if speaker is None:
            if turns:
                turns[-1][1].append(stripped)
            continue
        if turns and turns[-1][0] == speaker:
            raise TranscriptParseError(f"two consecutive {speaker.value} lines in transcript")
        turns.append((speaker, [body] if body else []))
    if not turns:
        raise TranscriptParseError("transcript contains no dialogue lines")
    out = []
    for i, (speaker, pieces) in enumerate(turns):
        text_joined = " ".join(pieces).strip()
        if not text_joined:
            raise TranscriptParseError(f"turn {i} has empty text")
        out.append(Turn(speaker=speaker, text=text_joined, at=i))
    return tuple(out)


def rewrite_post_to_dialogue(
    post: Post,
    provider: ChatProvider,
    limits: RewriteLimits = RewriteLimits(),
    locale: str = "en",
    params: CompletionParams = CompletionParams(temperature=0.0),
) -> Dialogue:
    """Rewrite one post into a counseling dialogue via the rewrite prompt.

    The transcript must parse into alternating turns and pass
    :func:`validate_rewritten_dialogue`; the post's label carries over.
    """
    bundle = prompts.build_dialogue_rewrite_prompt(post.text, post.label, limits, locale)
    text = complete_chat([ChatMessage(role="user", content=bundle.rendered)], params, provider)
    turns = parse_transcript(text)
    dialogue = Dialogue(
        id=f"dlg-{post.id}",
        subject_role=Role.PATIENT,
        turns=turns,
        day=REWRITE_EPOCH,
        label=post.label,
    )
    violations = validate_rewritten_dialogue(dialogue, limits)
    if violations:
        raise TranscriptParseError(
            f"rewritten dialogue for post {post.id} invalid: {'; '.join(violations)}"
        )
    return dialogue


def validate_rewritten_dialogue(d: Dialogue, limits: RewriteLimits = RewriteLimits()) -> list[str]:
    """Rule checks for rewritten dialogues: assistant-first opening, strict
    alternation, turn count within limits, per-turn length cap."""
    violations = validate_dialogue(d, first_speaker=Speaker.ASSISTANT)
    if not limits.min_turns <= len(d.turns) <= limits.max_turns:
        violations.append(
            f"turn count: {len(d.turns)} outside [{limits.min_turns}, {limits.max_turns}]"
        )
    for i, t in enumerate(d.turns):
        if len(t.text) > limits.max_turn_chars:
            violations.append(f"turn length: turn {i} exceeds {limits.max_turn_chars} characters")
    return violations


def assemble_chat_corpus(d1: DialogueCorpus, d2: DialogueCorpus) -> DialogueCorpus:
    """Union of the two corpora, d1 order then d2 order; duplicate ids rejected."""
    seen: set[str] = set()
    for d in d1.dialogues + d2.dialogues:
        if d.id in seen:
            raise DomainError(f"duplicate dialogue id across corpora: {d.id}")
        seen.add(d.id)
    return DialogueCorpus(
        dialogues=d1.dialogues + d2.dialogues,
        provenance=f"{d1.provenance}+{d2.provenance}",
        id=f"{d1.id}+{d2.id}",
    )


def build_report_labels(
    corpus: DialogueCorpus,
    provider: ChatProvider,
    embedder: EmbeddingProvider,
    criteria: CriteriaCorpus,
    std: SeverityStandard,
    opts: PromptOptions = PromptOptions(),
    params: CompletionParams = CompletionParams(temperature=0.0),
) -> LabelBuildResult:
    """Generate a report label for every dialogue using the full-priors prompt.

    A record is quarantined (never silently dropped) when generation fails
    or when the generated binary class contradicts the source label.
    """
    result = LabelBuildResult()
    for dialogue in corpus.dialogues:
        if dialogue.label is None:
            raise DomainError(f"dialogue {dialogue.id} carries no source label")
        expected_binary = dialogue.label.effective_binary()
        if expected_binary is None:
            raise DomainError(f"dialogue {dialogue.id} label has no derivable binary class")
        try:
            doc = None
            if opts.use_rag:
                content = extract_user_content(dialogue)
                doc = retrieve_criteria(content, criteria, embedder).document
            bundle = prompts.build_report_prompt(dialogue, dialogue.label, doc, std, opts)
            report = request_report(
                [ChatMessage(role="user", content=bundle.rendered)], provider, params
            )
        except Exception as exc:
            result.quarantined.append(
                QuarantineRecord(
                    dialogue_id=dialogue.id,
                    reason=f"generation failed: {exc}",
                    raw_text=getattr(exc, "raw_text", ""),
                )
            )
            continue
        if report.binary_class != expected_binary:
            result.quarantined.append(
                QuarantineRecord(
                    dialogue_id=dialogue.id,
                    reason=(
                        f"label contradiction: generated {report.binary_class.value}, "
                        f"source label {expected_binary.value}"
                    ),
                )
            )
            continue
        report = report.__class__(**{**report.__dict__, "id": f"lbl-{dialogue.id}", "dialogue_ids": (dialogue.id,)})
        result.pairs.append((dialogue, report))
    return result


def make_instruction_record(
    dialogue: Dialogue, report: DiagnosticReport, opts: PromptOptions = PromptOptions()
) -> InstructionRecord:
    """One fine-tuning record: prior-free instruction, dialogue input, report output."""
    bundle = prompts.build_inference_prompt(dialogue, opts)
    return InstructionRecord(
        instruction=bundle.rendered,
        input=json.dumps(dialogue_to_json(dialogue), ensure_ascii=False, sort_keys=True),
        output=json.dumps(report_to_json(report), ensure_ascii=False, sort_keys=True),
    )


def export_instruction_records(
    pairs: Sequence[tuple[Dialogue, DiagnosticReport]],
    opts: PromptOptions = PromptOptions(),
) -> str:
    """Serialize pairs as JSONL; export∘import∘export is byte-identical."""
    lines = []
    for dialogue, report in pairs:
        rec = make_instruction_record(dialogue, report, opts)
        lines.append(
            json.dumps(
                {"instruction": rec.instruction, "input": rec.input, "output": rec.output},
                ensure_ascii=False,
                sort_keys=True,
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


def import_instruction_records(text: str) -> list[tuple[Dialogue, DiagnosticReport]]:
    pairs = []
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        dialogue = dialogue_from_json(json.loads(obj["input"]))
        report = report_from_json(json.loads(obj["output"]))
        pairs.append((dialogue, report))
    return pairs


def split_train_test(
    corpus: DialogueCorpus, test_fraction: float, seed: int
) -> tuple[DialogueCorpus, DialogueCorpus]:
    """Deterministic exact partition with |test| = round(test_fraction * N)."""
    if not 0 < test_fraction < 1:
        raise DomainError("test_fraction must lie strictly between 0 and 1")
    n = len(corpus.dialogues)
    n_test = round(test_fraction * n)
    if n_test == 0 or n_test == n:
        raise DomainError(f"degenerate split: N={n}, fraction={test_fraction} gives empty side")
    indices = list(range(n))
    random.Random(seed).shuffle(indices)
    test_idx = set(indices[:n_test])
    train = tuple(d for i, d in enumerate(corpus.dialogues) if i not in test_idx)
    test = tuple(d for i, d in enumerate(corpus.dialogues) if i in test_idx)
    return (
        DialogueCorpus(dialogues=train, provenance=corpus.provenance, id=f"{corpus.id}-train"),
        DialogueCorpus(dialogues=test, provenance=corpus.provenance, id=f"{corpus.id}-test"),
    )


# --- JSONL ingestion adapters -------------------------------------------

def load_posts(path: str | Path) -> list[Post]:
    """Posts from JSONL records {"id", "text", "label"[, "source"]}."""
    posts = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        obj = json.loads(line)
        try:
            posts.append(
                Post(
                    id=str(obj["id"]),
                    text=obj["text"],
                    label=label_from_json(obj.get("label") or {}),
                    source=obj.get("source", ""),
                )
            )
        except (KeyError, DomainError) as exc:
            raise DomainError(f"{path}:{lineno}: bad post record: {exc}") from exc
    return posts


def load_dialogues(path: str | Path, provenance: str = "clinical") -> DialogueCorpus:
    dialogues = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            dialogues.append(dialogue_from_json(json.loads(line)))
        except (KeyError, ValueError) as exc:
            raise DomainError(f"{path}:{lineno}: bad dialogue record: {exc}") from exc
    return DialogueCorpus(dialogues=tuple(dialogues), provenance=provenance, id=str(path))


def save_dialogues(corpus: DialogueCorpus, path: str | Path) -> None:
    lines = [json.dumps(dialogue_to_json(d), ensure_ascii=False) for d in corpus.dialogues]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def save_pairs(pairs: Sequence[tuple[Dialogue, DiagnosticReport]], path: str | Path) -> None:
    """Labeled pairs as JSONL {"dialogue", "report"} (the pre-export form)."""
    lines = [
        json.dumps(
            {"dialogue": dialogue_to_json(d), "report": report_to_json(r)}, ensure_ascii=False
        )
        for d, r in pairs
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_pairs(path: str | Path) -> list[tuple[Dialogue, DiagnosticReport]]:
    pairs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        pairs.append((dialogue_from_json(obj["dialogue"]), report_from_json(obj["report"])))
    return pairs


def save_quarantine(records: Sequence[QuarantineRecord], path: str | Path) -> None:
    lines = [
        json.dumps(
            {"dialogue_id": q.dialogue_id, "reason": q.reason, "raw_text": q.raw_text},
            ensure_ascii=False,
        )
        for q in records
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
