"""Exception hierarchy shared by all modules."""


class SysRiskError(Exception):
    """Base class for library errors."""


class ValidationError(SysRiskError, ValueError):
    """Input data violates a schema or panel invariant."""


class ParseError(ValidationError):
    """A row of an input file could not be parsed."""


class SampleSizeError(SysRiskError, ValueError):
    """Too few observations for the requested estimation."""


class SingularDesignError(SysRiskError, ValueError):
    """Regressor matrix is rank deficient."""


class DegenerateResponseError(SysRiskError, ValueError):
    """Response variable has a single class or no variation."""


class FeasibilityError(SysRiskError, ValueError):
    """Requested enumeration is too large to carry out exactly."""
