"""Two-step factual verification and the factual-accuracy rate.

Step 0 screens a response with five independent samples and keeps the modal
verdict; step 1 verifies flagged responses against a pluggable knowledge
source (a live search endpoint or a local article snapshot) so the whole
check can run offline.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Protocol, Sequence

import requests

from .core import ScoreReport
from .errors import (
    DomainError,
    EmptyInput,
    KnowledgeSourceUnavailable,
    ScreenInconclusive,
    TieUnresolved,
    UnparseableVerdict,
)
from .gateway import (
    DEFAULT_MAX_OUTPUT,
    DEFAULT_TEMPERATURE,
    CompletionRequest,
    Gateway,
)


class ScreenVerdict(str, Enum):
    CLEAN = "Clean"
    SUSPECT_INACCURACY = "SuspectInaccuracy"
    SUSPECT_OMISSION = "SuspectOmission"


class RetrievalVerdict(str, Enum):
    SUPPORTED = "Supported"
    REFUTED = "Refuted"
    NOT_FOUND = "NotFound"


@dataclass(frozen=True)
class Evidence:
    source_title: str
    snippet: str

    def to_dict(self) -> dict:
        return {"source_title": self.source_title, "snippet": self.snippet}


@dataclass(frozen=True)
class FactVerdict:
    """Screen verdict plus, for flagged responses, the retrieval outcome."""

    response_id: str
    screen_verdict: ScreenVerdict
    retrieval_verdict: RetrievalVerdict | None = None
    evidence: tuple[Evidence, ...] = ()
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        flagged = self.screen_verdict is not ScreenVerdict.CLEAN
        if flagged != (self.retrieval_verdict is not None):
            raise DomainError("retrieval verdict present exactly when the screen flagged")

    @property
    def factually_clean(self) -> bool:
        """Clean screen, or flagged but supported by retrieved evidence."""
        return (
            self.screen_verdict is ScreenVerdict.CLEAN
            or self.retrieval_verdict is RetrievalVerdict.SUPPORTED
        )

    def to_dict(self) -> dict:
        return {
            "response_id": self.response_id,
            "screen_verdict": self.screen_verdict.value,
            "retrieval_verdict": self.retrieval_verdict.value if self.retrieval_verdict else None,
            "evidence": [e.to_dict() for e in self.evidence],
            "notes": list(self.notes),
        }


SCREEN_PROMPT = """You are checking a model response for factual problems.

Query: {query}

Response: {response}

Answer two questions about the response:
(1) Are there any factual inaccuracies in it?
(2) Does it neglect factual information that the query requires?

Reply with exactly one verdict word on the first line:
CLEAN if neither problem is present,
INACCURATE if it contains a factual inaccuracy,
OMISSION if it neglects required factual information."""

EVIDENCE_PROMPT = """Decide whether the evidence below supports or refutes the claim.

Claim: {claim}

Evidence:
{evidence}

Reply with exactly one word on the first line: SUPPORTED if the evidence backs the claim, REFUTED if the evidence contradicts it."""

_SCREEN_WORDS = {
    "CLEAN": ScreenVerdict.CLEAN,
    "INACCURATE": ScreenVerdict.SUSPECT_INACCURACY,
    "OMISSION": ScreenVerdict.SUSPECT_OMISSION,
}

_SUPPORT_RE = re.compile(r"\b(SUPPORTED|REFUTED)\b", re.IGNORECASE)


def extract_screen_verdict(text: str) -> ScreenVerdict:
    match = re.search(r"\b(CLEAN|INACCURATE|OMISSION)\b", text, re.IGNORECASE)
    if not match:
        raise UnparseableVerdict(f"no screen verdict in: {text[:120]!r}")
    return _SCREEN_WORDS[match.group(1).upper()]


def extract_support_verdict(text: str) -> RetrievalVerdict:
    match = _SUPPORT_RE.search(text)
    if not match:
        raise UnparseableVerdict(f"no support verdict in: {text[:120]!r}")
    word = match.group(1).upper()
    return RetrievalVerdict.SUPPORTED if word == "SUPPORTED" else RetrievalVerdict.REFUTED


# ---------------------------------------------------------------------------
# Knowledge clients
# ---------------------------------------------------------------------------

class KnowledgeClient(Protocol):
    def search(self, claim_text: str, limit: int = 3) -> list[Evidence]:
        ...


_WORD_RE = re.compile(r"[a-z0-9]{4,}")


def _content_words(text: str) -> set[str]:
    return set(_WORD_RE.findall(text.lower()))


class LocalSnapshotClient:
    """Offline knowledge source: a directory of plain-text article files.

    File names (minus extension, underscores as spaces) are article titles.
    Retrieval ranks articles by content-word overlap with the claim and
    returns the best-matching paragraph of each hit.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise KnowledgeSourceUnavailable(f"snapshot directory missing: {self.directory}")
        self.calls = 0

    def search(self, claim_text: str, limit: int = 3) -> list[Evidence]:
        self.calls += 1
        claim_words = _content_words(claim_text)
        scored: list[tuple[int, str, str]] = []
        for path in sorted(self.directory.glob("*.txt")):
            body = path.read_text(encoding="utf-8")
            overlap = len(claim_words & _content_words(body))
            if overlap > 0:
                title = path.stem.replace("_", " ")
                scored.append((overlap, title, body))
        scored.sort(key=lambda item: (-item[0], item[1]))
        results = []
        for _, title, body in scored[:limit]:
            results.append(Evidence(source_title=title, snippet=self._best_paragraph(body, claim_words)))
        return results

    @staticmethod
    def _best_paragraph(body: str, claim_words: set[str]) -> str:
        paragraphs = [p.strip() for p in body.split("\n\n") if p.strip()]
        if not paragraphs:
            return body[:480]
        best = max(paragraphs, key=lambda p: len(claim_words & _content_words(p)))
        return best[:480]


class LiveSearchClient:
    """HTTP search endpoint returning JSON results with title/snippet fields."""

    def __init__(self, endpoint_url: str, session: Any | None = None, timeout: float = 30.0):
        self.endpoint_url = endpoint_url
        self.session = session or requests.Session()
        self.timeout = timeout
        self.calls = 0

    def search(self, claim_text: str, limit: int = 3) -> list[Evidence]:
        self.calls += 1
        try:
            response = self.session.get(
                self.endpoint_url,
                params={"q": claim_text, "limit": limit},
                timeout=self.timeout,
            )
        except Exception as exc:
            raise KnowledgeSourceUnavailable(f"search endpoint unreachable: {exc}") from exc
        if not 200 <= response.status_code < 300:
            raise KnowledgeSourceUnavailable(
                f"search endpoint returned status {response.status_code}"
            )
        return [
            Evidence(source_title=item.get("title", ""), snippet=item.get("snippet", ""))
            for item in response.json()[:limit]
        ]


# ---------------------------------------------------------------------------
# Fact checker
# ---------------------------------------------------------------------------

class FactChecker:
    """Screens responses and verifies flagged ones against the knowledge source."""

    def __init__(
        self,
        gateway: Gateway,
        model_name: str,
        knowledge: KnowledgeClient | None = None,
        temperature: float = DEFAULT_TEMPERATURE,
        max_output: int = DEFAULT_MAX_OUTPUT,
        screen_samples: int = 5,
    ):
        self.gateway = gateway
        self.model_name = model_name
        self.knowledge = knowledge
        self.temperature = temperature
        self.max_output = max_output
        self.screen_samples = screen_samples
        # Screening may run in parallel; retrieval is serialized per client
        # so a shared knowledge source is never hammered concurrently.
        self._retrieval_lock = threading.Lock()

    def _request(self, prompt: str) -> CompletionRequest:
        return CompletionRequest(
            model_name=self.model_name,
            user_text=prompt,
            temperature=self.temperature,
            max_output=self.max_output,
        )

    def screen(self, query_text: str, response_text: str) -> ScreenVerdict:
        """Modal verdict over five independent screening samples."""
        if not query_text.strip() or not response_text.strip():
            raise DomainError("query and response must be non-empty")
        prompt = SCREEN_PROMPT.format(query=query_text, response=response_text)
        try:
            majority = self.gateway.sample_majority(
                self._request(prompt), extract_screen_verdict, k=self.screen_samples
            )
        except TieUnresolved as exc:
            raise ScreenInconclusive(str(exc)) from exc
        return majority.outcome

    def retrieve_verify(self, claim_text: str) -> tuple[RetrievalVerdict, tuple[Evidence, ...]]:
        """Look the claim up in the knowledge source and judge the evidence."""
        if self.knowledge is None:
            raise KnowledgeSourceUnavailable("no knowledge client configured")
        with self._retrieval_lock:
            evidence = tuple(self.knowledge.search(claim_text))
        if not evidence:
            return RetrievalVerdict.NOT_FOUND, ()
        listing = "\n".join(f"[{e.source_title}] {e.snippet}" for e in evidence)
        prompt = EVIDENCE_PROMPT.format(claim=claim_text, evidence=listing)
        text = self.gateway.complete(self._request(prompt)).text
        try:
            verdict = extract_support_verdict(text)
        except UnparseableVerdict:
            text = self.gateway.complete(
                self._request(prompt + "\n\nOnly the single word, nothing else.")
            ).text
            verdict = extract_support_verdict(text)
        return verdict, evidence

    def check_response(self, query_text: str, response_text: str, response_id: str) -> FactVerdict:
        """Full pipeline for one response: screen, then retrieval when flagged.

        An inconclusive screen (tied samples) is treated as suspect rather
        than clean, so it still goes through retrieval.
        """
        notes: tuple[str, ...] = ()
        try:
            verdict = self.screen(query_text, response_text)
        except ScreenInconclusive as exc:
            verdict = ScreenVerdict.SUSPECT_INACCURACY
            notes = (f"screen inconclusive, treated as suspect: {exc}",)
        if verdict is ScreenVerdict.CLEAN:
            return FactVerdict(response_id=response_id, screen_verdict=verdict, notes=notes)
        retrieval, evidence = self.retrieve_verify(response_text)
        return FactVerdict(
            response_id=response_id,
            screen_verdict=verdict,
            retrieval_verdict=retrieval,
            evidence=evidence,
            notes=notes,
        )


def fact_rate(verdicts: Sequence[FactVerdict], reports: Sequence[ScoreReport]) -> Fraction:
    """Fraction of hallucinated responses that are factually accurate.

    ``reports`` must hold only hallucinated responses (perfect=false), with a
    fact verdict for each. A response counts as accurate when its screen was
    clean or the retrieval supported it.
    """
    if not reports:
        raise EmptyInput("no hallucinated responses to rate")
    if any(report.perfect for report in reports):
        raise DomainError("fact_rate applies to hallucinated (non-perfect) responses only")
    by_response = {verdict.response_id: verdict for verdict in verdicts}
    clean = 0
    for report in reports:
        verdict = by_response.get(report.response_id)
        if verdict is None:
            raise DomainError(f"no fact verdict for response {report.response_id!r}")
        if verdict.factually_clean:
            clean += 1
    return Fraction(clean, len(reports))
