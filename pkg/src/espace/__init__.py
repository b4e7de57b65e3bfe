"""Entire-space multi-task conversion modeling toolkit."""

__version__ = "0.1.0"

from .samples import Dataset, FieldSchema, SparseSample, clicked_subset, time_split, validate

__all__ = [
    "Dataset",
    "FieldSchema",
    "SparseSample",
    "clicked_subset",
    "time_split",
    "validate",
    "__version__",
]
