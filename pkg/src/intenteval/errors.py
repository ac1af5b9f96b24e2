"""Exception types shared across the evaluation pipeline."""

from __future__ import annotations


class EvalError(Exception):
    """Base class for every error raised by this package."""


class DomainError(EvalError):
    """A value violates a documented precondition or invariant."""


class EmptyConstraintSet(DomainError):
    """A sufficient constraint set has no constraints; scoring would divide by zero."""


class LabelMismatch(EvalError):
    """Satisfaction labels do not cover the constraint set exactly."""


class EmptyInput(EvalError):
    """An aggregate was requested over an empty collection."""


# --- gateway ---------------------------------------------------------------

class MissingFixture(EvalError):
    """Replay backend has no recorded response for this request."""

    def __init__(self, digest: str, sample_index: int = 0):
        self.digest = digest
        self.sample_index = sample_index
        super().__init__(f"no fixture for digest {digest} (sample {sample_index})")


class TransportError(EvalError):
    """Live backend failed after bounded retries, or returned a non-2xx status."""


class AuthError(EvalError):
    """Missing or rejected credentials for the live backend."""


class NoConsensus(EvalError):
    """Self-consistency sampling exhausted its attempt budget without agreement."""


class TieUnresolved(EvalError):
    """Majority sampling produced two outcomes with the same top count."""


# --- constraint mapping ----------------------------------------------------

class MalformedOutput(EvalError):
    """Mapping output lacks the terminal listing marker or an entry after it."""


class UnknownTier(EvalError):
    """A listing entry carries a priority label outside Mandatory/Important/Optional."""


class MappingFailed(EvalError):
    """Decomposition failed even after the single re-ask."""


# --- scoring ---------------------------------------------------------------

class UnparseableVerdict(EvalError):
    """Judge output contained no extractable verdict after the re-ask."""


# --- fact checking ---------------------------------------------------------

class ScreenInconclusive(EvalError):
    """Self-consistency screening tied; the response cannot be called clean."""


class KnowledgeSourceUnavailable(EvalError):
    """The configured knowledge client cannot serve retrieval requests."""


# --- benchmark generation --------------------------------------------------

class GenerationRejected(EvalError):
    """A synthesized task failed validation twice."""


class PoolTooSmall(EvalError):
    """More constraints requested than the pool holds."""


class InsufficientArticles(EvalError):
    """Fewer than three candidate articles were supplied."""


# --- batch runner ----------------------------------------------------------

class ResumeConflict(EvalError):
    """A run was requested against a ledger that is already sealed."""


class CellTooSmall(EvalError):
    """A corpus cell holds fewer tasks than the requested sample size."""


class EmptyLedger(EvalError):
    """The ledger holds no usable records for the requested analysis."""


# --- analytics -------------------------------------------------------------

class LengthMismatch(EvalError):
    """Paired vectors have different lengths."""


class ConstantVector(EvalError):
    """Correlation is undefined for a constant input vector."""


class DegenerateData(EvalError):
    """All data points are identical; the density is a spike at that value.

    ``spike_at`` carries the repeated value so callers that want a point-mass
    representation can build one.
    """

    def __init__(self, spike_at: float):
        self.spike_at = spike_at
        super().__init__(f"all points identical (spike at {spike_at})")
