"""Exception types raised across the package."""


class ScanNormError(Exception):
    """Base class for all package errors."""


class EmptyCloud(ScanNormError):
    pass


class EmptyMesh(ScanNormError):
    pass


class EmptySelection(ScanNormError):
    """A mask selected no lidar points."""


class NoCluster(ScanNormError):
    """Every point was classified as DBSCAN noise."""


class MeshEmpty(ScanNormError):
    """Surface completion produced no triangles."""


class TooFewPoints(ScanNormError):
    """Instance is below the surface-completion point threshold."""


class NoHits(ScanNormError):
    pass


class UnknownPreset(ScanNormError, KeyError):
    pass


class MalformedFile(ScanNormError, ValueError):
    pass


class MissingMatrix(MalformedFile):
    pass


class ManifestMissing(ScanNormError, FileNotFoundError):
    pass


class SizeMismatch(ScanNormError, ValueError):
    pass


class DegenerateNeighborhood(UserWarning):
    """Normal estimated from collinear neighbors; direction is arbitrary."""
