"""評価モジュール

合成図形の検出、軌跡整合性 (mIoU・重心距離)、フレーム間の特徴類似度を提供します。
"""
from .detector import detect_shape, CONTRAST_THRESHOLD
from .metrics import (
    BoxSequence,
    MetricReport,
    miou,
    centroid_distance,
    per_frame_iou,
    per_frame_centroid_distance,
    evaluate_boxes,
    aggregate_reports,
)
from .similarity import BackboneFeatureProvider, frame_similarity

__all__ = [
    "detect_shape",
    "CONTRAST_THRESHOLD",
    "BoxSequence",
    "MetricReport",
    "miou",
    "centroid_distance",
    "per_frame_iou",
    "per_frame_centroid_distance",
    "evaluate_boxes",
    "aggregate_reports",
    "BackboneFeatureProvider",
    "frame_similarity",
]
