"""Exception hierarchy shared across the package."""


class FreqDefenseError(Exception):
    """Base class for all package errors."""


class ShapeError(FreqDefenseError, ValueError):
    """Tensor shapes are invalid or do not match."""


class SizedInputError(FreqDefenseError, ValueError):
    """Input exceeds the configured element cap."""


class SymmetryError(FreqDefenseError, ValueError):
    """A spectrum or filter is not conjugate symmetric where it must be."""


class SpecError(FreqDefenseError, ValueError):
    """A declarative spec (layer, loss, attack, defense) is malformed."""


class CompositionError(ShapeError):
    """Consecutive network layers do not compose."""


class EstimationError(FreqDefenseError, ValueError):
    """Filter or spectrum estimation was asked to work on nothing."""


class MaskConstructionError(FreqDefenseError, ValueError):
    """A targeted attack could not build its fake segmentation mask."""


class FormatError(FreqDefenseError, ValueError):
    """A persisted file is truncated or malformed."""


class ConfigError(FreqDefenseError, ValueError):
    """An experiment configuration is invalid."""
