"""Provider-agnostic chat completion plus fixed-format report extraction.

The scripted provider is a deterministic test double: ordered match rules
over the last user message, first match wins. The remote provider speaks a
documented chat endpoint so any vendor can sit behind the same contract.
"""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import httpx

from .domain import (
    BinaryClass,
    DiagnosticReport,
    DomainError,
    Finding,
    SeverityDegree,
    validate_report,
)
from .retrieval import TransportError


class GatewayError(RuntimeError):
    """Base class for chat-completion failures."""


class ProviderError(GatewayError):
    """The provider answered with an error of its own."""


class JsonExtractionError(GatewayError):
    """No syntactically valid top-level JSON object in the text."""


class ReportParseError(GatewayError):
    """Model text could not be mapped to a valid diagnostic report.

    ``raw_text`` carries the offending model output for audit.
    """

    def __init__(self, message: str, raw_text: str = "") -> None:
        super().__init__(message)
        self.raw_text = raw_text


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise DomainError(f"unknown chat role {self.role!r}")
        if self.role in ("user", "assistant") and not self.content:
            raise DomainError(f"{self.role} message content must be non-empty")


@dataclass(frozen=True)
class CompletionParams:
    temperature: float = 0.0
    max_tokens: int = 2048
    timeout_ms: int = 30_000
    retries: int = 0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise DomainError("temperature must be >= 0")
        if self.max_tokens <= 0 or self.timeout_ms <= 0 or self.retries < 0:
            raise DomainError("max_tokens and timeout_ms must be positive, retries >= 0")


class ChatProvider(Protocol):
    def complete(self, messages: Sequence[ChatMessage], params: CompletionParams) -> str: ...


@dataclass(frozen=True)
class ScriptedRule:
    """Ordered canned-response rule; ``match`` is a substring, or a regex when flagged."""

    match: str
    response: str
    is_regex: bool = False

    def matches(self, text: str) -> bool:
        if self.is_regex:
            return re.search(self.match, text) is not None
        return self.match in text


class ScriptedProvider:
    """Pure function of (rules, messages): replies with the first matching
    rule's response, else the declared default."""

    def __init__(self, rules: Sequence[ScriptedRule] = (), default_response: str = "I hear you.") -> None:
        self.rules = tuple(rules)
        self.default_response = default_response
        self.call_log: list[str] = []

    def complete(self, messages: Sequence[ChatMessage], params: CompletionParams) -> str:
        last_user = messages[-1].content
        self.call_log.append(last_user)
        for rule in self.rules:
            if rule.matches(last_user):
                return rule.response
        return self.default_response


def load_scripted_rules(path: str | Path) -> list[ScriptedRule]:
    """Load rules from JSONL records {"match", "response"[, "regex"]}."""
    rules = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        obj = json.loads(line)
        if "match" not in obj or "response" not in obj:
            raise DomainError(f"{path}:{lineno}: rule needs match and response")
        rules.append(
            ScriptedRule(match=obj["match"], response=obj["response"], is_regex=bool(obj.get("regex")))
        )
    return rules


class RemoteChatProvider:
    """Client for a documented chat endpoint.

    Request: ``{"model", "messages": [{"role", "content"}], "temperature",
    "max_tokens"}``; response: ``{"content": str}``. The credential is read
    from an environment variable and sent as a bearer header.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        credential_env: Optional[str] = None,
        client: httpx.Client | None = None,
    ) -> None:
        self._endpoint = endpoint
        self._model = model
        self._credential_env = credential_env
        self._client = client or httpx.Client()

    def complete(self, messages: Sequence[ChatMessage], params: CompletionParams) -> str:
        headers = {}
        if self._credential_env:
            token = os.environ.get(self._credential_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": self._model,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        try:
            resp = self._client.post(
                self._endpoint, json=body, headers=headers, timeout=params.timeout_ms / 1000.0
            )
        except httpx.HTTPError as exc:
            raise TransportError(f"chat endpoint unreachable: {exc}") from exc
        if resp.status_code >= 500:
            raise TransportError(f"chat endpoint returned {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderError(f"chat endpoint rejected request: {resp.status_code} {resp.text}")
        content = resp.json().get("content")
        if not isinstance(content, str):
            raise ProviderError("chat endpoint response missing 'content'")
        return content


def complete_chat(
    messages: Sequence[ChatMessage],
    params: CompletionParams,
    provider: ChatProvider,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Run one chat completion, retrying transport failures with exponential backoff."""
    if not messages:
        raise DomainError("at least one message required")
    if messages[-1].role != "user":
        raise DomainError("last message must have role user")
    attempt = 0
    while True:
        try:
            return provider.complete(messages, params)
        except TransportError:
            if attempt >= params.retries:
                raise
            sleep(min(0.5 * 2**attempt, 8.0))
            attempt += 1


def extract_json(text: str) -> dict:
    """Return the first syntactically valid top-level JSON object in the text.

    Scans balanced top-level braces rather than trusting code fences, so
    prose prefixes/suffixes and ```json fences are all tolerated.
    """
    decoder = json.JSONDecoder()
    idx = text.find("{")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(text, idx)
        except json.JSONDecodeError:
            idx = text.find("{", idx + 1)
            continue
        if isinstance(obj, dict):
            return obj
        idx = text.find("{", idx + 1)
    raise JsonExtractionError("no JSON object found in model output")


_REQUIRED_REPORT_FIELDS = ("binary_class", "severity_degree", "findings", "subtype_category")
_REQUIRED_FINDING_FIELDS = ("symptom", "evidence", "criterion", "agreement")


def parse_report(text: str) -> DiagnosticReport:
    """Extract and validate the fixed-format report from model output.

    Unknown fields are ignored; a missing required field, an enum value
    outside the vocabulary, or a domain-invariant violation raises a
    :class:`ReportParseError` naming the offending field.
    """
    try:
        obj = extract_json(text)
    except JsonExtractionError as exc:
        raise ReportParseError(str(exc), raw_text=text) from exc
    for name in _REQUIRED_REPORT_FIELDS:
        if name not in obj:
            raise ReportParseError(f"missing required field: {name}", raw_text=text)
    try:
        binary = BinaryClass(obj["binary_class"])
    except ValueError:
        raise ReportParseError(
            f"binary_class value {obj['binary_class']!r} outside vocabulary", raw_text=text
        ) from None
    try:
        severity = SeverityDegree(obj["severity_degree"])
    except ValueError:
        raise ReportParseError(
            f"severity_degree value {obj['severity_degree']!r} outside vocabulary", raw_text=text
        ) from None
    if not isinstance(obj["findings"], list):
        raise ReportParseError("findings must be a list", raw_text=text)
    findings = []
    for i, raw in enumerate(obj["findings"]):
        if not isinstance(raw, dict):
            raise ReportParseError(f"findings[{i}] must be an object", raw_text=text)
        for name in _REQUIRED_FINDING_FIELDS:
            if name not in raw:
                raise ReportParseError(f"missing required field: findings[{i}].{name}", raw_text=text)
        if not isinstance(raw["agreement"], bool):
            raise ReportParseError(f"findings[{i}].agreement must be a boolean", raw_text=text)
        findings.append(
            Finding(
                symptom=str(raw["symptom"]),
                evidence=str(raw["evidence"]),
                criterion=str(raw["criterion"]),
                agreement=raw["agreement"],
            )
        )
    subtype = obj["subtype_category"]
    if not isinstance(subtype, str) or not subtype:
        raise ReportParseError("subtype_category must be a non-empty string", raw_text=text)
    narrative = obj.get("narrative")
    if narrative is not None and not isinstance(narrative, str):
        raise ReportParseError("narrative must be a string or null", raw_text=text)
    report = DiagnosticReport(
        id=str(obj.get("id", "")),
        dialogue_ids=tuple(str(x) for x in obj.get("dialogue_ids", ())),
        binary_class=binary,
        severity=severity,
        findings=tuple(findings),
        subtype_category=subtype,
        narrative=narrative,
        created_at=int(obj.get("created_at", 0)),
    )
    violations = validate_report(report)
    if violations:
        raise ReportParseError("; ".join(violations), raw_text=text)
    return report


CORRECTIVE_MESSAGE = "Output only the JSON object for the report, with no other text."

REPORT_PARAMS = CompletionParams(temperature=0.0)


def request_report(
    messages: Sequence[ChatMessage],
    provider: ChatProvider,
    params: CompletionParams = REPORT_PARAMS,
    sleep: Callable[[float], None] = time.sleep,
) -> DiagnosticReport:
    """Chat completion pinned for report generation: temperature 0 and at most
    one corrective round when the reply is not a parseable report."""
    if params.temperature != 0.0:
        raise DomainError("report generation pins temperature 0")
    text = complete_chat(messages, params, provider, sleep=sleep)
    try:
        return parse_report(text)
    except ReportParseError:
        corrective = [
            *messages,
            ChatMessage(role="assistant", content=text or "(empty)"),
            ChatMessage(role="user", content=CORRECTIVE_MESSAGE),
        ]
        retry_text = complete_chat(corrective, params, provider, sleep=sleep)
        return parse_report(retry_text)
