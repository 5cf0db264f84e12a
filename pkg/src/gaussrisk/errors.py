"""Exception hierarchy.

Every error carries the process exit code the command-line front end maps it
to, so library callers and the CLI agree on error categories.
"""


class GaussRiskError(Exception):
    exit_code = 3


class ConfigError(GaussRiskError):
    exit_code = 2


class DimensionMismatch(GaussRiskError, ValueError):
    exit_code = 2


class DomainError(GaussRiskError, ValueError):
    pass


class NotPositiveDefinite(GaussRiskError, ValueError):
    pass


class EmptyIndexSet(GaussRiskError, ValueError):
    pass


class OverlappingSets(GaussRiskError, ValueError):
    pass


class NoPositiveComponent(GaussRiskError, ValueError):
    pass


class AmbiguousActiveSet(GaussRiskError):
    pass


class EnumerationOverflow(GaussRiskError):
    pass


class RegimeMismatch(GaussRiskError):
    exit_code = 4


class TooFewAcceptedSamples(GaussRiskError):
    exit_code = 5
