"""Exception taxonomy shared across the pipeline."""


class MaskGateError(Exception):
    """Base class for all pipeline errors."""


class EmptyMaskError(MaskGateError):
    """An operation required a mask with at least one foreground pixel."""


class MalformedHeaderError(MaskGateError):
    """A tensor file header is missing, corrupt, or not the expected format."""


class ShapeMismatchError(MaskGateError):
    """Declared and actual shapes disagree."""


class NonFiniteValueError(MaskGateError):
    """A payload contains NaN or infinite values."""


class BoxOutOfBoundsError(MaskGateError):
    """A box extends beyond the raster it indexes into."""


class BoxSmallerThanStrideError(MaskGateError):
    """A box maps to an empty footprint at feature resolution."""


class EmptyFootprintError(MaskGateError):
    """A detection box covers no feature cells."""


class PromptOutsideCropError(MaskGateError):
    """A segmentation prompt (point or box prior) falls outside its crop."""


class SeedOutsideConstraintError(MaskGateError):
    """The region-growing seed lies outside the constraint box."""


class BackendUnavailableError(MaskGateError):
    """The remote segmentation backend could not be reached."""


class SegmentProtocolError(MaskGateError):
    """The remote backend replied with something that is not the wire protocol."""


class DimensionMismatchError(MaskGateError):
    """A returned mask does not match the crop dimensions."""


class WindowMaskMismatchError(MaskGateError):
    """A per-slice mask does not match its window's dimensions."""


class EmptyBackgroundError(MaskGateError):
    """No background pixels available, even after the fallback annulus."""


class PlacementFailureError(MaskGateError):
    """Rejection sampling could not place all blobs without overlap."""


class MalformedAnnotationError(MaskGateError):
    """An annotation file violates the schema."""


class MissingImageError(MaskGateError):
    """An annotation references an image file that does not exist."""


class ConfigInvalidError(MaskGateError):
    """The pipeline configuration failed validation."""
