"""Report pipeline: dialogue in, validated draft report out, plus advice
generation and the windowed cyclical mental-state summary."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from datetime import date, timedelta
from typing import Callable, Iterable, Optional, Sequence

from . import prompts
from .domain import (
    Advice,
    AdviceKind,
    DiagnosticReport,
    Dialogue,
    DomainError,
    Role,
    SeverityDegree,
    SeverityStandard,
    validate_dialogue,
    validate_report,
)
from .gateway import ChatMessage, ChatProvider, CompletionParams, complete_chat, request_report
from .prompts import PromptOptions
from .retrieval import CriteriaCorpus, EmbeddingProvider, extract_user_content, retrieve_criteria

SCORE_ABSENT = 0
_SEVERITY_SCORES = {
    SeverityDegree.NORMAL: 25,
    SeverityDegree.MILD: 50,
    SeverityDegree.MODERATE: 75,
    SeverityDegree.SEVERE: 100,
}


def severity_score(sev: Optional[SeverityDegree]) -> int:
    """Daily score mapping: absent 0, normal 25, mild 50, moderate 75, severe 100."""
    if sev is None:
        return SCORE_ABSENT
    return _SEVERITY_SCORES[sev]


@dataclass(frozen=True)
class PipelineConfig:
    prompt_options: PromptOptions = PromptOptions()
    include_family_content_in_retrieval: bool = False
    corpus_id: str = ""
    std_id: str = ""


@dataclass(frozen=True)
class SessionStat:
    """Interaction-log entry consumed by the cyclical summary."""

    day: date
    user_turns: int


@dataclass(frozen=True)
class CyclicalSummary:
    window: tuple[date, date]
    login_count: int
    user_turn_count: int
    daily_scores: tuple[tuple[date, int], ...]
    distribution: dict[str, int]
    average_score: float
    narrative: str


NO_DATA_NARRATIVE = "No assessment reports were released in this period."
NARRATIVE_UNAVAILABLE = "Narrative unavailable: the analysis service could not be reached."


class ReportGenerationError(RuntimeError):
    """Pipeline failure; ``raw_text`` carries the model output for audit."""

    def __init__(self, message: str, raw_text: str = "") -> None:
        super().__init__(message)
        self.raw_text = raw_text


class ReportPipeline:
    """Wires retrieval, prompt assembly, and the chat gateway together."""

    def __init__(
        self,
        chat_provider: ChatProvider,
        embedder: EmbeddingProvider,
        corpus: Optional[CriteriaCorpus],
        std: Optional[SeverityStandard] = None,
        cfg: PipelineConfig = PipelineConfig(),
        clock: Callable[[], int] = lambda: int(time.time()),
    ) -> None:
        if cfg.prompt_options.use_rag and corpus is None:
            raise DomainError("use_rag requires a criteria corpus")
        self.chat_provider = chat_provider
        self.embedder = embedder
        self.corpus = corpus
        self.std = std or prompts.default_severity_standard(cfg.prompt_options.locale)
        self.cfg = cfg
        self.clock = clock

    # -- report generation ----------------------------------------------

    def _retrieval_content(self, patient: Optional[Dialogue], family: Optional[Dialogue]) -> str:
        pieces = []
        if patient is not None:
            pieces.append(extract_user_content(patient))
        if family is not None and (patient is None or self.cfg.include_family_content_in_retrieval):
            pieces.append(extract_user_content(family))
        return "\n".join(pieces)

    def generate_report(
        self,
        patient_dialogue: Optional[Dialogue],
        family_dialogue: Optional[Dialogue] = None,
        params: CompletionParams = CompletionParams(temperature=0.0),
    ) -> DiagnosticReport:
        """Produce a validated draft report for the given dialogue(s).

        At inference no label or severity standard is supplied; when RAG is
        on, the retrieved criteria document is spliced into the prompt
        between the dialogue context and the query.
        """
        if patient_dialogue is None and family_dialogue is None:
            raise DomainError("at least one dialogue required")
        primary = patient_dialogue if patient_dialogue is not None else family_dialogue
        assert primary is not None
        for d in (patient_dialogue, family_dialogue):
            if d is not None:
                violations = validate_dialogue(d)
                if violations:
                    raise DomainError(f"dialogue {d.id} invalid: {'; '.join(violations)}")

        opts = self.cfg.prompt_options
        bundle = prompts.build_inference_prompt(primary, opts)
        blocks = [bundle.part("T"), bundle.part("C")]
        if patient_dialogue is not None and family_dialogue is not None:
            blocks.append(
                prompts.render_template(
                    opts.locale, "family_context", dialogue=prompts.format_dialogue(family_dialogue)
                )
            )
        if opts.use_rag:
            assert self.corpus is not None
            content = self._retrieval_content(patient_dialogue, family_dialogue)
            result = retrieve_criteria(content, self.corpus, self.embedder)
            blocks.append(prompts.render_criteria_block(opts.locale, result.document))
        blocks.append(bundle.part("Q"))
        prompt_text = "".join(blocks)

        messages = [ChatMessage(role="user", content=prompt_text)]
        try:
            report = request_report(messages, self.chat_provider, params)
        except Exception as exc:
            raw = getattr(exc, "raw_text", "")
            raise ReportGenerationError(f"report generation failed: {exc}", raw_text=raw) from exc

        dialogue_ids = tuple(d.id for d in (patient_dialogue, family_dialogue) if d is not None)
        report = replace(
            report,
            id=f"rpt-{primary.id}-{primary.day.isoformat()}",
            dialogue_ids=dialogue_ids,
            created_at=self.clock(),
        )
        violations = validate_report(report)
        if violations:
            raise ReportGenerationError(f"generated report invalid: {'; '.join(violations)}")
        return report

    # -- advice ----------------------------------------------------------

    def generate_advice(
        self,
        report: DiagnosticReport,
        audience: Role,
        params: CompletionParams = CompletionParams(temperature=0.0),
    ) -> Advice:
        """Treatment strategy for the patient, care advice for the family.

        The prompt consumes report fields only; dialogue text never reaches
        the advice chain.
        """
        violations = validate_report(report)
        if violations:
            raise DomainError(f"report invalid: {'; '.join(violations)}")
        bundle = prompts.build_advice_prompt(report, audience, self.cfg.prompt_options.locale)
        text = complete_chat(
            [ChatMessage(role="user", content=bundle.rendered)], params, self.chat_provider
        )
        kind = AdviceKind.TREATMENT_STRATEGY if audience == Role.PATIENT else AdviceKind.CARE_ADVICE
        return Advice(kind=kind, report_id=report.id, text=text)

    # -- cyclical analysis -------------------------------------------------

    def cyclical_analysis(
        self,
        reports: Sequence[tuple[date, DiagnosticReport]],
        sessions: Iterable[SessionStat],
        window: tuple[date, date],
        exclude_absent_days: bool = False,
        params: CompletionParams = CompletionParams(temperature=0.0),
    ) -> CyclicalSummary:
        """Windowed summary: daily scores, distribution, interaction counts,
        average, and an LLM trend narrative.

        The day score comes from that day's latest released report (absent
        days score 0). The average divides by every day in the window;
        ``exclude_absent_days`` switches to dividing by report days only.
        """
        start, end = window
        if end < start:
            raise DomainError("window end precedes start")

        by_day: dict[date, DiagnosticReport] = {}
        for day, report in reports:
            if start <= day <= end:
                # Later released report wins the day (callers pass releases in order).
                by_day[day] = report

        daily: list[tuple[date, int]] = []
        distribution: dict[str, int] = {}
        day = start
        while day <= end:
            report = by_day.get(day)
            if report is None:
                daily.append((day, SCORE_ABSENT))
            else:
                daily.append((day, severity_score(report.severity)))
                distribution[report.severity.value] = distribution.get(report.severity.value, 0) + 1
            day += timedelta(days=1)

        if exclude_absent_days:
            scored = [s for _, s in daily if s != SCORE_ABSENT] or [0]
            average = sum(scored) / len(scored)
        else:
            average = sum(s for _, s in daily) / len(daily)

        login_count = 0
        user_turn_count = 0
        for stat in sessions:
            if start <= stat.day <= end:
                login_count += 1
                user_turn_count += stat.user_turns

        window_reports = [r for d, r in sorted(by_day.items())]
        if not window_reports:
            narrative = NO_DATA_NARRATIVE
        else:
            bundle = prompts.build_cyclical_prompt(
                window_reports, window, self.cfg.prompt_options.locale
            )
            try:
                narrative = complete_chat(
                    [ChatMessage(role="user", content=bundle.rendered)], params, self.chat_provider
                )
            except Exception:
                narrative = NARRATIVE_UNAVAILABLE

        return CyclicalSummary(
            window=window,
            login_count=login_count,
            user_turn_count=user_turn_count,
            daily_scores=tuple(daily),
            distribution=distribution,
            average_score=average,
            narrative=narrative,
        )


def cyclical_summary_to_json(s: CyclicalSummary) -> dict:
    return {
        "window": {"from": s.window[0].isoformat(), "to": s.window[1].isoformat()},
        "login_count": s.login_count,
        "user_turn_count": s.user_turn_count,
        "daily_scores": [{"date": d.isoformat(), "score": v} for d, v in s.daily_scores],
        "distribution": dict(s.distribution),
        "average_score": s.average_score,
        "narrative": s.narrative,
    }
