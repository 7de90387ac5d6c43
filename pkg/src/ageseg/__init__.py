"""Age-stratified segmentation evaluation and continual-learning testbed."""

from .volume import LabelVolume, ScalarVolume, read_volume, write_volume

__version__ = "0.1.0"

__all__ = [
    "ScalarVolume",
    "LabelVolume",
    "read_volume",
    "write_volume",
    "__version__",
]
