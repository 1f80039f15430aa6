"""Exception types shared across the package.

The CLI maps these onto its exit-code contract, so raising the right class
matters more than the message text.
"""


class DriftlabError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(DriftlabError, ValueError):
    """Invalid configuration: bad field value, unknown key, infeasible setup."""


class ShapeError(DriftlabError, ValueError):
    """Array shapes do not compose."""


class NumericError(DriftlabError, ArithmeticError):
    """Non-finite value where a finite one is required."""


class DegenerateVectorError(DriftlabError, ValueError):
    """Vector norm too close to zero for a direction-based computation."""


class InvalidDistributionError(DriftlabError, ValueError):
    """Row is not a valid probability vector."""


class RefinementError(DriftlabError, RuntimeError):
    """Pseudo-label refinement cannot proceed (no active centroids)."""


class EmptyInputError(DriftlabError, ValueError):
    """Operation requires at least one sample."""


class IngestError(DriftlabError, ValueError):
    """External data file violates the documented schema."""


class FreezeViolationError(DriftlabError, RuntimeError):
    """Parameters that must stay constant for the whole run have changed."""


class LedgerError(DriftlabError, ValueError):
    """Metrics ledger is incomplete or inconsistent for the requested metric."""
