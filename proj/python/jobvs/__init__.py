"""Joint brain and vessel segmentation of TOF-MRA volumes (C++ core)."""

from ._jobvs import (
    DataError,
    Model,
    NumericalError,
    UsageError,
    average_precision,
    cl_dice,
    dsc,
    load_volume,
    max_f1,
    phantom,
    resample,
    save_volume,
    skeletonize,
    zscore,
)

__all__ = [
    "DataError",
    "Model",
    "NumericalError",
    "UsageError",
    "average_precision",
    "cl_dice",
    "dsc",
    "load_volume",
    "max_f1",
    "phantom",
    "resample",
    "save_volume",
    "skeletonize",
    "zscore",
]
