"""Model-call gateway with live, record, and replay backends.

Every module issues completions through :class:`Gateway`. The replay backend
makes whole pipeline runs byte-identical, the record backend captures live
traffic into replayable fixtures, and the sampling helpers implement the two
self-consistency protocols (agreement of consecutive samples, and majority
over an odd sample count).
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Protocol

import requests

from .errors import (
    AuthError,
    DomainError,
    MissingFixture,
    NoConsensus,
    TieUnresolved,
    TransportError,
)

API_BASE_ENV = "EVAL_API_BASE"
API_KEY_ENV = "EVAL_API_KEY"

#: Default sampling temperature for generation and scoring stages. The judge
#: protocol was also reported at temperature 0; both are plain configuration.
DEFAULT_TEMPERATURE = 0.3

DEFAULT_MAX_OUTPUT = 1024
DEFAULT_MAX_IN_FLIGHT = 4
TRANSPORT_RETRIES = 3
RETRY_BACKOFF_SECONDS = 0.5


class BackendKind(str, Enum):
    LIVE = "Live"
    REPLAY = "Replay"


@dataclass(frozen=True)
class CompletionRequest:
    model_name: str
    user_text: str
    system_text: str | None = None
    temperature: float = DEFAULT_TEMPERATURE
    max_output: int = DEFAULT_MAX_OUTPUT
    seed_hint: int | None = None

    def __post_init__(self) -> None:
        if not self.model_name:
            raise DomainError("model_name must be non-empty")
        if not self.user_text:
            raise DomainError("user_text must be non-empty")
        if self.temperature < 0:
            raise DomainError("temperature must be non-negative")
        if self.max_output <= 0:
            raise DomainError("max_output must be positive")


def request_digest(req: CompletionRequest) -> str:
    """Stable content hash of the request.

    A pure function of (model_name, system_text, user_text, temperature,
    max_output); seed hints and retries never change it.
    """
    payload = json.dumps(
        {
            "model_name": req.model_name,
            "system_text": req.system_text,
            "user_text": req.user_text,
            "temperature": repr(float(req.temperature)),
            "max_output": req.max_output,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CompletionResult:
    text: str
    request_digest: str
    backend: BackendKind
    latency_ms: int = 0


class Backend(Protocol):
    def fetch(self, req: CompletionRequest, sample_index: int) -> tuple[str, BackendKind]:
        """Return the response text for the given sample of the request."""
        ...


# ---------------------------------------------------------------------------
# Fixture store
# ---------------------------------------------------------------------------

class FixtureStore:
    """One JSON file per request digest, holding indexed sampled responses."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()

    def _path(self, digest: str) -> Path:
        return self.root / f"{digest}.json"

    def lookup(self, digest: str, sample_index: int) -> str | None:
        path = self._path(digest)
        if not path.exists():
            return None
        data = json.loads(path.read_text(encoding="utf-8"))
        return data.get("responses", {}).get(str(sample_index))

    def store(self, req: CompletionRequest, digest: str, sample_index: int, text: str) -> None:
        # Read-modify-write under a lock; atomic replace keeps readers safe.
        with self._lock:
            self.root.mkdir(parents=True, exist_ok=True)
            path = self._path(digest)
            if path.exists():
                data = json.loads(path.read_text(encoding="utf-8"))
            else:
                data = {
                    "model_name": req.model_name,
                    "system_text": req.system_text,
                    "user_text": req.user_text,
                    "temperature": float(req.temperature),
                    "max_output": req.max_output,
                    "responses": {},
                }
            data["responses"][str(sample_index)] = text
            tmp = path.with_suffix(".json.tmp")
            tmp.write_text(json.dumps(data, ensure_ascii=False, indent=2), encoding="utf-8")
            os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

class ReplayBackend:
    """Serves recorded fixtures only; unknown requests are an error."""

    def __init__(self, fixture_dir: str | Path):
        self.store = FixtureStore(fixture_dir)

    def fetch(self, req: CompletionRequest, sample_index: int) -> tuple[str, BackendKind]:
        digest = request_digest(req)
        text = self.store.lookup(digest, sample_index)
        if text is None:
            raise MissingFixture(digest, sample_index)
        return text, BackendKind.REPLAY


class LiveHttpBackend:
    """Chat-completion wire protocol over HTTP JSON.

    Endpoint and API key come from EVAL_API_BASE / EVAL_API_KEY unless given
    explicitly. Connection-level failures are retried with exponential
    backoff; non-2xx statuses are application errors and are not retried.
    """

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        session: Any | None = None,
        timeout: float = 120.0,
        max_retries: int = TRANSPORT_RETRIES,
        backoff_seconds: float = RETRY_BACKOFF_SECONDS,
    ):
        self.base_url = (base_url or os.environ.get(API_BASE_ENV, "")).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.session = session or requests.Session()
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_seconds = backoff_seconds

    def fetch(self, req: CompletionRequest, sample_index: int) -> tuple[str, BackendKind]:
        if not self.base_url:
            raise TransportError(f"no endpoint configured (set {API_BASE_ENV})")
        if not self.api_key:
            raise AuthError(f"no API key configured (set {API_KEY_ENV})")
        messages = []
        if req.system_text:
            messages.append({"role": "system", "content": req.system_text})
        messages.append({"role": "user", "content": req.user_text})
        body = {
            "model": req.model_name,
            "messages": messages,
            "temperature": float(req.temperature),
            "max_tokens": req.max_output,
        }
        if req.seed_hint is not None:
            body["seed"] = req.seed_hint
        headers = {"Authorization": f"Bearer {self.api_key}"}
        url = f"{self.base_url}/chat/completions"

        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                response = self.session.post(url, json=body, headers=headers, timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff_seconds * (2**attempt))
                continue
            if response.status_code in (401, 403):
                raise AuthError(f"endpoint rejected credentials ({response.status_code})")
            if not 200 <= response.status_code < 300:
                raise TransportError(f"endpoint returned status {response.status_code}")
            payload = response.json()
            try:
                text = payload["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"malformed completion payload: {exc}") from exc
            return text, BackendKind.LIVE
        raise TransportError(f"transport failed after {self.max_retries + 1} attempts: {last_exc}")


class RecordBackend:
    """Replays existing fixtures and records live responses for the rest."""

    def __init__(self, live: Backend, fixture_dir: str | Path):
        self.live = live
        self.store = FixtureStore(fixture_dir)

    def fetch(self, req: CompletionRequest, sample_index: int) -> tuple[str, BackendKind]:
        digest = request_digest(req)
        cached = self.store.lookup(digest, sample_index)
        if cached is not None:
            return cached, BackendKind.REPLAY
        text, _ = self.live.fetch(req, sample_index)
        self.store.store(req, digest, sample_index, text)
        return text, BackendKind.LIVE


# ---------------------------------------------------------------------------
# Gateway and self-consistency sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AgreementOutcome:
    """Result of consecutive-agreement sampling."""

    outcome: Any
    attempts: int
    raw_texts: tuple[str, ...]


@dataclass(frozen=True)
class MajorityOutcome:
    """Result of fixed-size majority sampling."""

    outcome: Any
    tally: tuple[tuple[Any, int], ...]
    raw_texts: tuple[str, ...]


class Gateway:
    """Issues completions through one backend with bounded concurrency."""

    def __init__(self, backend: Backend, max_in_flight: int = DEFAULT_MAX_IN_FLIGHT):
        if max_in_flight < 1:
            raise DomainError("max_in_flight must be at least 1")
        self._backend = backend
        self._gate = threading.BoundedSemaphore(max_in_flight)

    def complete(self, req: CompletionRequest, sample_index: int = 0) -> CompletionResult:
        """Return the model text for one sample of the request.

        ``sample_index`` distinguishes repeated draws of the same request so
        that fixtures can hold one response per draw; index 0 is the default
        single-shot completion.
        """
        digest = request_digest(req)
        start = time.monotonic()
        with self._gate:
            text, kind = self._backend.fetch(req, sample_index)
        latency = 0 if kind is BackendKind.REPLAY else int((time.monotonic() - start) * 1000)
        return CompletionResult(text=text, request_digest=digest, backend=kind, latency_ms=latency)

    def sample_agree(
        self,
        req: CompletionRequest,
        extract: Callable[[str], Any],
        k_init: int = 2,
        max_attempts: int = 6,
    ) -> AgreementOutcome:
        """Sample until outcomes agree.

        Draws ``k_init`` samples and accepts a unanimous outcome; otherwise
        draws one more at a time and accepts as soon as the two most recent
        outcomes match. The attempt budget guarantees termination, which the
        bare rerun-until-match protocol does not.
        """
        if k_init < 2:
            raise DomainError("k_init must be at least 2")
        if max_attempts < k_init:
            raise DomainError("max_attempts must be at least k_init")
        outcomes: list[Any] = []
        texts: list[str] = []

        def draw(index: int) -> None:
            result = self.complete(req, sample_index=index)
            texts.append(result.text)
            outcomes.append(extract(result.text))

        for i in range(k_init):
            draw(i)
        if all(o == outcomes[0] for o in outcomes):
            return AgreementOutcome(outcomes[0], k_init, tuple(texts))
        attempts = k_init
        while attempts < max_attempts:
            draw(attempts)
            attempts += 1
            if outcomes[-1] == outcomes[-2]:
                return AgreementOutcome(outcomes[-1], attempts, tuple(texts))
        raise NoConsensus(f"no agreement after {attempts} samples: {outcomes}")

    def sample_majority(
        self,
        req: CompletionRequest,
        extract: Callable[[str], Any],
        k: int = 5,
    ) -> MajorityOutcome:
        """Draw ``k`` samples and return the modal outcome.

        ``k`` should be odd (default 5); a tie for the top count raises
        TieUnresolved either way.
        """
        if k < 3:
            raise DomainError("k must be at least 3")
        outcomes: list[Any] = []
        texts: list[str] = []
        for i in range(k):
            result = self.complete(req, sample_index=i)
            texts.append(result.text)
            outcomes.append(extract(result.text))
        counts = Counter(outcomes)
        ranked = counts.most_common()
        if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
            raise TieUnresolved(f"tied outcomes over {k} samples: {dict(counts)}")
        return MajorityOutcome(ranked[0][0], tuple(ranked), tuple(texts))


def gateway_from_flags(
    replay_dir: str | Path | None = None,
    record_dir: str | Path | None = None,
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
) -> Gateway:
    """Build the gateway the CLI flags describe: replay, record, or live."""
    if replay_dir is not None and record_dir is not None:
        raise DomainError("choose either replay or record, not both")
    if replay_dir is not None:
        return Gateway(ReplayBackend(replay_dir), max_in_flight)
    if record_dir is not None:
        return Gateway(RecordBackend(LiveHttpBackend(), record_dir), max_in_flight)
    return Gateway(LiveHttpBackend(), max_in_flight)
