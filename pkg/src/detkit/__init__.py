"""Augmentation, masked-image-modeling data tools, TTA, box fusion and COCO AP for small-data detection."""

__version__ = "0.1.0"

from .geometry import Box, Detection, SizeClass, clip, iou, size_class
from .data_io import AnnotatedImage, DataError, PipelineConfig, ResultSet, load_annotations, load_results, save_results
from .fusion import FusionParams, nms, rank_and_select, wbf
from .evaluation import EvalReport, evaluate

__all__ = [
    "AnnotatedImage",
    "Box",
    "DataError",
    "Detection",
    "EvalReport",
    "FusionParams",
    "PipelineConfig",
    "ResultSet",
    "SizeClass",
    "clip",
    "evaluate",
    "iou",
    "load_annotations",
    "load_results",
    "nms",
    "rank_and_select",
    "save_results",
    "size_class",
    "wbf",
]
