"""Exception hierarchy shared by every jobgraph module.

Errors that map to malformed user input (files, configs) derive from
:class:`DataError` so the CLI can translate them to exit code 2; numeric
blow-ups derive from :class:`NumericError` (exit code 3).
"""

from __future__ import annotations


class JobGraphError(Exception):
    """Base class for all jobgraph errors."""


class DataError(JobGraphError):
    """Malformed input data or files."""


class NumericError(JobGraphError):
    """Numeric failure (divergence, non-finite values)."""


# -- graph schema ------------------------------------------------------------

class DimensionMismatch(JobGraphError):
    pass


class NonFiniteFeature(JobGraphError):
    pass


class SignatureMismatch(JobGraphError):
    pass


class MissingEndpoint(JobGraphError):
    pass


class InvalidWeight(JobGraphError):
    pass


class MissingNode(JobGraphError):
    pass


class ConfigMismatch(JobGraphError):
    """Sampler or model configuration inconsistent with the data it is applied to."""


# -- file formats ------------------------------------------------------------

class GraphParseError(DataError):
    """Graph file violates the line format; carries the offending location."""

    def __init__(self, path: str, line_no: int, reason: str):
        self.path = path
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{path}:{line_no}: {reason}")


class CheckpointError(DataError):
    pass


class ConfigError(DataError):
    """Run configuration rejected; names the offending key."""


# -- model -------------------------------------------------------------------

class ShapeMismatch(JobGraphError):
    pass


class ZeroNormEmbedding(JobGraphError):
    def __init__(self, side: str, index: int):
        self.side = side
        self.index = index
        super().__init__(f"zero-norm embedding: {side} index {index}")


class InvalidLabel(JobGraphError):
    pass


class StaleForwardState(JobGraphError):
    """backward() called without a matching forward pass over the same parameters."""


# -- training ----------------------------------------------------------------

class EmptyDataset(JobGraphError):
    pass


class EmptyEvalSet(JobGraphError):
    pass


class DivergenceDetected(NumericError):
    def __init__(self, batch_index: int, message: str = ""):
        self.batch_index = batch_index
        super().__init__(message or f"non-finite loss at batch {batch_index}")


class TemporalLeakage(JobGraphError):
    """Examples dated inside the encoder-training window reached the ranker."""

    def __init__(self, offenders):
        self.offenders = list(offenders)
        shown = ", ".join(str(o) for o in self.offenders[:5])
        more = "" if len(self.offenders) <= 5 else f" (+{len(self.offenders) - 5} more)"
        super().__init__(f"examples not after the embedding cutoff: {shown}{more}")


# -- nearline ----------------------------------------------------------------

class MalformedEvent(DataError):
    pass


class UnknownNode(JobGraphError):
    pass


# -- synth -------------------------------------------------------------------

class InfeasibleConfig(JobGraphError):
    pass
