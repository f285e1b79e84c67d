"""Exception hierarchy shared by every stage of the toolkit."""


class NightLightsError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(NightLightsError, ValueError):
    """A file does not follow its binary or text layout."""


class TruncationError(FormatError):
    """A payload is shorter or longer than its header promises."""


class RangeError(NightLightsError, ValueError):
    """A value lies outside its admissible domain."""


class ShapeError(NightLightsError, ValueError):
    """Two grids (or a grid and a mask) do not share the same geometry."""


class SequencingError(NightLightsError, ValueError):
    """Years are not strictly consecutive where differencing needs them."""


class ConsistencyError(NightLightsError, ValueError):
    """A region mask and its table disagree."""


class RegionLookupError(NightLightsError, KeyError):
    """A region id is not present in the mask table."""


class EmptyScopeError(NightLightsError):
    """A scope has no active pixel in a given year."""


class InsufficientDataError(NightLightsError):
    """Too few observations for the requested statistic."""


class UndefinedError(NightLightsError, ValueError):
    """A statistic is undefined for its input, e.g. zero variance."""


class EmptyEstimateError(NightLightsError):
    """No pixel holds a growth state in both years of a transition."""


class UndefinedChainError(NightLightsError, ValueError):
    """A transition matrix has a row without observations."""


class IdentificationError(NightLightsError, ValueError):
    """The fixed-effects design is rank deficient."""


class FeasibilityError(NightLightsError, ValueError):
    """A synthetic panel specification cannot be realised in the DN range."""


class DataError(NightLightsError, ValueError):
    """Input series contain values the estimator cannot use."""


class ConfigError(NightLightsError, ValueError):
    """A run configuration is malformed or inconsistent with its inputs."""
