"""Exception hierarchy shared by all stages."""


class PanofuseError(Exception):
    """Base class for every error raised by this package."""


class DegenerateTransformError(PanofuseError, ValueError):
    """A 4x4 transform is malformed, non-rigid or singular."""


class ConfigurationError(PanofuseError, ValueError):
    """Inputs that must agree with each other do not (lengths, specs, widths)."""


class DimensionError(PanofuseError, ValueError):
    """Tensor shapes do not line up."""


class LabelError(PanofuseError, ValueError):
    """A class label is outside the valid range."""


class FormatError(PanofuseError, ValueError):
    """A binary or text file does not follow its declared layout."""


class GenerationError(PanofuseError, RuntimeError):
    """Synthetic scene placement failed after the retry budget."""
