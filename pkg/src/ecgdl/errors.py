"""Exception hierarchy shared across the package."""


class EcgDlError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(EcgDlError):
    """Tensor shapes or lengths are incompatible with an operation."""


class ConfigError(EcgDlError):
    """Invalid configuration value, file, or model/method pairing."""


class NumericalError(EcgDlError):
    """A forward pass produced non-finite values, or training diverged."""


class IncompatibleModelError(ConfigError):
    """An explanation method was requested for an architecture that lacks it."""


class CaptureDisabledError(EcgDlError):
    """Gate/state capture was requested on a model built without it."""
