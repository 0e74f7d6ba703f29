"""軌跡整合性の評価指標モジュール

検出ボックス列と目標軌跡から mIoU と重心距離 (画像対角で正規化) を計算します。
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torchvision.ops import box_iou

from src.data_synth.rendering import PixelVideo
from src.exceptions import ValidationError
from src.payloads import TrajectorySpec
from .detector import detect_shape

Corners = Tuple[float, float, float, float]


@dataclass
class BoxSequence:
    """フレームごとのボックス (x0, y0, x1, y1) ピクセル。未検出のフレームはNone"""
    boxes: List[Optional[Corners]]
    height: int
    width: int

    def __post_init__(self):
        for index, box in enumerate(self.boxes):
            if box is not None and not (box[0] < box[2] and box[1] < box[3]):
                raise ValidationError(f"ボックスの座標が不正です (フレーム{index}): {box}", field="boxes")

    def __len__(self) -> int:
        return len(self.boxes)

    @property
    def detection_rate(self) -> float:
        if not self.boxes:
            return 0.0
        return sum(box is not None for box in self.boxes) / len(self.boxes)

    def centers(self) -> List[Optional[Tuple[float, float]]]:
        return [None if b is None else ((b[0] + b[2]) / 2, (b[1] + b[3]) / 2) for b in self.boxes]

    def shifted(self, dx: float, dy: float) -> "BoxSequence":
        return BoxSequence(
            [None if b is None else (b[0] + dx, b[1] + dy, b[2] + dx, b[3] + dy) for b in self.boxes],
            self.height,
            self.width,
        )

    @classmethod
    def from_trajectory(cls, traj: TrajectorySpec, height: int, width: int) -> "BoxSequence":
        """正規化ボックス軌跡をピクセルボックス列に変換"""
        return cls([box.to_pixels(height, width) for box in traj.boxes], height, width)

    @classmethod
    def from_video(cls, video: PixelVideo, background: Sequence[float] = (1.0, 1.0, 1.0)) -> "BoxSequence":
        """各フレームで図形を検出"""
        boxes = [detect_shape(video.data[:, f], background) for f in range(video.num_frames)]
        return cls([None if b is None else tuple(float(v) for v in b) for b in boxes], video.height, video.width)


GroundTruth = Union[BoxSequence, TrajectorySpec]


def _as_boxes(gt: GroundTruth, like: BoxSequence) -> BoxSequence:
    if isinstance(gt, TrajectorySpec):
        return BoxSequence.from_trajectory(gt, like.height, like.width)
    return gt


def _check_lengths(pred: BoxSequence, gt: BoxSequence) -> None:
    if len(pred) != len(gt):
        raise ValidationError(f"フレーム数が一致しません (予測: {len(pred)}, 正解: {len(gt)})", field="frames")


def per_frame_iou(pred: BoxSequence, gt: GroundTruth) -> List[float]:
    """フレームごとのIoU (どちらかが未検出のフレームは0)"""
    target = _as_boxes(gt, pred)
    _check_lengths(pred, target)
    values = []
    for a, b in zip(pred.boxes, target.boxes):
        if a is None or b is None:
            values.append(0.0)
            continue
        iou = box_iou(torch.tensor([a], dtype=torch.float64), torch.tensor([b], dtype=torch.float64))
        values.append(float(iou[0, 0]))
    return values


def miou(pred: BoxSequence, gt: GroundTruth) -> float:
    """フレーム平均のIoU

    Raises:
        ValidationError: フレーム数が一致しない場合
    """
    values = per_frame_iou(pred, gt)
    return sum(values) / len(values) if values else 0.0


def per_frame_centroid_distance(pred: BoxSequence, gt: GroundTruth) -> List[float]:
    """フレームごとの重心距離 / 画像対角 (未検出のフレームは1.0)"""
    target = _as_boxes(gt, pred)
    _check_lengths(pred, target)
    diagonal = math.hypot(pred.height, pred.width)
    values = []
    for a, b in zip(pred.centers(), target.centers()):
        if a is None or b is None:
            values.append(1.0)
        else:
            values.append(math.hypot(a[0] - b[0], a[1] - b[1]) / diagonal)
    return values


def centroid_distance(pred: BoxSequence, gt: GroundTruth) -> float:
    """フレーム平均の重心距離 (画像対角で正規化)

    Raises:
        ValidationError: フレーム数が一致しない場合
    """
    values = per_frame_centroid_distance(pred, gt)
    return sum(values) / len(values) if values else 0.0


@dataclass
class MetricReport:
    """1本の動画の評価結果"""
    miou: float
    centroid_distance: float
    detection_rate: float
    per_frame_iou: List[float] = field(default_factory=list)
    per_frame_cd: List[float] = field(default_factory=list)
    frame_similarity: Optional[float] = None
    name: str = ""

    def to_record(self) -> Dict[str, str]:
        record = {
            "NAME": self.name,
            "MIOU": f"{self.miou:.6f}",
            "CD": f"{self.centroid_distance:.6f}",
            "DETECTION_RATE": f"{self.detection_rate:.6f}",
            "PER_FRAME_IOU": ",".join(f"{v:.6f}" for v in self.per_frame_iou),
            "PER_FRAME_CD": ",".join(f"{v:.6f}" for v in self.per_frame_cd),
        }
        if self.frame_similarity is not None:
            record["FRAME_SIMILARITY"] = f"{self.frame_similarity:.6f}"
        return record

    def __str__(self) -> str:
        text = f"mIoU: {self.miou:.4f}, CD: {self.centroid_distance:.4f}, 検出率: {self.detection_rate:.2f}"
        if self.frame_similarity is not None:
            text += f", フレーム類似度: {self.frame_similarity:.4f}"
        return text


def evaluate_boxes(pred: BoxSequence, gt: GroundTruth, name: str = "") -> MetricReport:
    ious = per_frame_iou(pred, gt)
    cds = per_frame_centroid_distance(pred, gt)
    return MetricReport(
        miou=sum(ious) / len(ious) if ious else 0.0,
        centroid_distance=sum(cds) / len(cds) if cds else 0.0,
        detection_rate=pred.detection_rate,
        per_frame_iou=ious,
        per_frame_cd=cds,
        name=name,
    )


def aggregate_reports(reports: Sequence[MetricReport]) -> Dict[str, float]:
    """複数の評価結果の平均"""
    if not reports:
        return {"count": 0}
    summary = {
        "count": len(reports),
        "miou": float(np.mean([r.miou for r in reports])),
        "centroid_distance": float(np.mean([r.centroid_distance for r in reports])),
        "detection_rate": float(np.mean([r.detection_rate for r in reports])),
    }
    similarities = [r.frame_similarity for r in reports if r.frame_similarity is not None]
    if similarities:
        summary["frame_similarity"] = float(np.mean(similarities))
    return summary
