"""
Exception hierarchy for panorama_iqa.

Every failure raised by the library derives from PanoramaIQAError so callers
(and the command layer) can catch the whole family at once. Errors about bad
values also derive from ValueError.
"""

from typing import Optional


class PanoramaIQAError(Exception):
    """Base class for all panorama_iqa errors."""


# ==================== Geometry ====================


class DomainError(PanoramaIQAError, ValueError):
    """An argument lies outside the domain of a mapping."""


class BehindTangentPlaneError(DomainError):
    """A point is on or behind the hemisphere boundary of a tangent plane."""


# ==================== Image / dataset IO ====================


class ImageNotFoundError(PanoramaIQAError, FileNotFoundError):
    """An image, saliency map or manifest file does not exist."""


class MalformedHeaderError(PanoramaIQAError, ValueError):
    """A Netpbm header is missing, unsupported or unparsable."""


class TruncatedDataError(PanoramaIQAError, ValueError):
    """A Netpbm file ends before all samples were read."""


class DimensionMismatchError(PanoramaIQAError, ValueError):
    """A saliency map cannot be aligned with its image."""


class ManifestParseError(PanoramaIQAError, ValueError):
    """A manifest line could not be parsed."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class DuplicateEntryError(PanoramaIQAError, ValueError):
    """The same image path appears twice in a manifest."""


class SplitError(PanoramaIQAError, ValueError):
    """A manifest cannot be split (too few scenes)."""


# ==================== Sampling / model ====================


class EmptyGridError(PanoramaIQAError, ValueError):
    """A region grid has no regions to sample from."""


class EmptyInputError(PanoramaIQAError, ValueError):
    """An operation received an empty sequence where one item is required."""


class PatchSizeError(PanoramaIQAError, ValueError):
    """A viewport resolution is not divisible by the patch size."""


class ShapeMismatchError(PanoramaIQAError, ValueError):
    """Tensor shapes are inconsistent with the model configuration."""


class TooManyPatchesError(PanoramaIQAError, ValueError):
    """A viewport yields more patches than the positional table holds."""


class SourceIndexError(PanoramaIQAError, ValueError):
    """A source index is outside the source-embedding table."""


class NumericOverflowError(PanoramaIQAError, ArithmeticError):
    """A forward pass produced a non-finite intermediate value."""


# ==================== Training ====================


class NonFiniteGradientError(PanoramaIQAError, ArithmeticError):
    """Backpropagation produced a non-finite gradient."""


class NonFiniteUpdateError(PanoramaIQAError, ArithmeticError):
    """An optimizer step produced non-finite parameters; it was rolled back."""


class CheckpointError(PanoramaIQAError):
    """A checkpoint file is unreadable or has an unsupported format."""


class ConfigMismatchError(CheckpointError, ValueError):
    """A checkpoint was produced with an incompatible model configuration."""


# ==================== Metrics ====================


class UndefinedMetricError(PanoramaIQAError, ValueError):
    """A correlation metric is undefined for the given input."""


class FitFailureError(PanoramaIQAError, ArithmeticError):
    """Every start of the logistic fit diverged."""


# ==================== Configuration ====================


class ConfigError(PanoramaIQAError, ValueError):
    """A configuration value is invalid."""

    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")
