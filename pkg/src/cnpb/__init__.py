"""Crop-novel-paste-base dataset augmentation for few-shot object detection."""

from .datasets import Annotation, Category, Dataset, ImageRecord, split_base_novel
from .geometry import Box, iou, summed_iou

__all__ = [
    "Annotation",
    "Box",
    "Category",
    "Dataset",
    "ImageRecord",
    "iou",
    "split_base_novel",
    "summed_iou",
]
