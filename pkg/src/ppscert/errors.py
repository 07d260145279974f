"""Exception hierarchy. Each class maps to one failure mode callers can act on."""


class PPSError(Exception):
    """Base class for every error raised by ppscert."""


class RejectedInputError(PPSError, ValueError):
    """An argument violates an operation's precondition."""


class UnsupportedOracleError(PPSError):
    """The testbed/distribution pair has no exact ground-truth mode."""


class DominationError(PPSError):
    """A reweighting density is zero (or non-finite) where the target has failure mass."""


class DegenerateChainError(PPSError):
    """Markov chain acceptance fell below the usable floor."""


class InsufficientDataError(PPSError):
    """Too few observations for the requested fit."""


class FitError(PPSError):
    """A parametric fit produced non-finite parameters."""


class ImpracticalConditioningError(PPSError):
    """Rejection sampling outside the safe region would accept too rarely."""


class UnreliableBinningError(PPSError):
    """Histogram bins lacking surrogate samples carry too much failure mass."""


class NonCertifiableError(PPSError):
    """A ledger term was produced by a method that cannot back a certificate."""


class ConfigError(PPSError):
    """A run configuration is malformed, violates the schema, or names an invalid setting."""
