"""Exception and warning types raised across the package."""


class JointClustError(Exception):
    """Base class for package errors."""


class SingularDesign(JointClustError, ValueError):
    """The weighted regression design is rank-deficient."""


class InvalidLevel(JointClustError, ValueError):
    """A categorical value outside the known levels."""


class UnsupportedColumnType(JointClustError, TypeError):
    """The estimator cannot handle a column of this type."""


class DegenerateComponent(JointClustError, RuntimeError):
    """A mixture component lost (almost) all of its mass."""


class NoRoot(JointClustError, ValueError):
    """A calibration target cannot be reached inside the search bracket."""


class SchemaError(JointClustError, ValueError):
    """A data file or artifact does not match its schema."""


class LengthMismatch(JointClustError, ValueError):
    """Two label vectors of different lengths."""


class NonConvergenceWarning(UserWarning):
    """An iterative routine stopped at its iteration cap."""
