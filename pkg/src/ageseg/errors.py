"""Exception types shared across the package."""


class AgesegError(Exception):
    """Base class for all errors raised by this package."""


class VolumeFormatError(AgesegError):
    """File is not a volume format we understand (bad magic, bad header)."""


class TruncatedVolumeError(AgesegError):
    """Header declares more payload than the file actually contains."""


class LabelDomainError(AgesegError):
    """Label data violates its domain (negative, non-integral, unmapped)."""


class MappingError(AgesegError):
    """Class-mapping file is malformed (duplicate source, bad target)."""


class ComparisonError(AgesegError):
    """Two volumes/masks that must share a grid do not."""


class EmptyMaskError(AgesegError):
    """An operation that needs at least one foreground voxel got none."""


class ParameterError(AgesegError):
    """A numeric parameter is outside its allowed domain."""


class ManifestError(AgesegError):
    """A manifest is empty, inconsistent, or references unknown cases."""
