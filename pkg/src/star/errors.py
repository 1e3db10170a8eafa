"""Exception types shared across the pipeline."""


class StarError(Exception):
    """Base class for all errors raised by this package."""


class UnsupportedFormatError(StarError):
    """File is not a raster format we can open (PNG, flat or pyramidal TIFF)."""


class DecodeError(StarError):
    """Pixel data exists but could not be decoded."""


class OutOfBoundsError(StarError):
    """Requested region exceeds the slide extent. Reads never clamp silently."""


class EmptyMaskError(StarError):
    """Mask has no foreground pixel, so no ROI can be derived."""


class DimMismatchError(StarError):
    """Two rasters that must share dimensions do not."""


class InvalidStepError(StarError):
    """Angular step does not evenly divide the full circle."""


class KernelTooLargeError(StarError):
    """Correlation kernel exceeds the target in some dimension."""


class DegenerateKernelError(StarError):
    """Adaptive scaling would shrink the kernel below one pixel."""


class SchemaError(StarError):
    """Persisted parameter file fails validation."""


class ExtentTooSmallError(StarError):
    """Image extent is smaller than one tile."""


class InvalidNameError(StarError):
    """Stain/slide label contains separator characters or grid index overflows."""


class OutOfCanvasError(StarError):
    """A grid shift would push the template footprint entirely off the target."""
