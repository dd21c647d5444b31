"""Exception types shared across the pipeline."""


class ConfigError(Exception):
    """Invalid, unreadable, or inconsistent run configuration."""


class GeometryError(Exception):
    """Degenerate geometric input (collinear points, singular transform)."""


class PointAtInfinityError(GeometryError):
    """Projective mapping sent a point to infinity (denominator below cutoff)."""


class ImageDecodeError(Exception):
    """A raster file could not be decoded."""


class GeoExportError(Exception):
    """Map export impossible because the run carries no GPS data."""


class EvalError(Exception):
    """Malformed prediction or ground-truth record."""
