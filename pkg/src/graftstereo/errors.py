"""Exception types raised by the engine.

Everything derives from GraftStereoError so callers (and the CLI) can catch
engine failures in one place. I/O failures from the OS are left as OSError.
"""


class GraftStereoError(Exception):
    """Base class for all engine errors."""


class ShapeMismatch(GraftStereoError, ValueError):
    """Tensor shapes or channel counts are incompatible with an operation."""


class AxisOutOfRange(GraftStereoError, IndexError):
    """Requested axis does not exist for the given shape."""


class DisparityOutOfRange(GraftStereoError, ValueError):
    """d_max is negative or not smaller than the image width."""


class FormatError(GraftStereoError, ValueError):
    """A serialized file is malformed (bad magic, truncation, bad fields)."""


class NonPositiveTemperature(GraftStereoError, ValueError):
    """Softmax temperature must be > 0."""


class NonPositiveScale(GraftStereoError, ValueError):
    """Distribution scale parameter must be > 0."""


class EmptyMask(GraftStereoError, ValueError):
    """A loss or metric was asked to average over zero pixels."""


class ChannelMismatch(GraftStereoError, ValueError):
    """Cost volume channel count does not match what a module was built for."""


class GraphNotRecorded(GraftStereoError, RuntimeError):
    """backward() called on a value that is not part of a recorded graph."""


class EmptyDataset(GraftStereoError, ValueError):
    """Training was started on an empty dataset."""


class DivergenceDetected(GraftStereoError, RuntimeError):
    """Training loss became NaN/Inf; aborted with diagnostics."""


class ConfigError(GraftStereoError, ValueError):
    """Invalid or inconsistent pipeline configuration."""
