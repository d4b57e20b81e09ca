from .dataset import Split, count_splits, load_split
from .generate import FAMILIES, SPLITS, DataConfig, SampleRecord, generate_dataset, make_sample
from .metrics import MetricsReport, auc, iou_fake_only, overall, pixel_f1

__all__ = [
    "FAMILIES",
    "SPLITS",
    "DataConfig",
    "MetricsReport",
    "SampleRecord",
    "Split",
    "auc",
    "count_splits",
    "generate_dataset",
    "iou_fake_only",
    "load_split",
    "make_sample",
    "overall",
    "pixel_f1",
]
