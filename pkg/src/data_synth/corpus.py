"""学習コーパス生成モジュール

図形と色のクラスを条件ラベルとして、移動図形動画のコーパスを生成・保存します。
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from src.exceptions import ValidationError
from src.payloads import MotionSpec
from .container import read_container, write_container
from .rendering import generate_moving_shape_video, check_dims
from .trajectories import TRAJECTORY_KINDS, random_trajectory

# クラスインデックスが条件ラベル y になる
SHAPE_CLASSES: List[Tuple[str, Tuple[float, float, float]]] = [
    ("square", (1.0, 0.0, 0.0)),
    ("circle", (0.0, 0.0, 1.0)),
    ("square", (0.0, 0.6, 0.0)),
    ("circle", (0.8, 0.0, 0.8)),
]


@dataclass
class CorpusConfig:
    """コーパス生成設定"""
    num_videos: int = 256
    num_frames: int = 16
    height: int = 16
    width: int = 16
    num_classes: int = 2
    min_size: int = 1
    max_size: int = 3
    trajectory_kinds: List[str] = field(default_factory=lambda: list(TRAJECTORY_KINDS))
    seed: int = 0

    def validate(self) -> None:
        check_dims(self.num_frames, self.height, self.width)
        if not 2 <= self.num_classes <= len(SHAPE_CLASSES):
            raise ValidationError(f"クラス数は2以上{len(SHAPE_CLASSES)}以下です: {self.num_classes}", field="num_classes")
        if self.num_videos <= 0:
            raise ValidationError("動画数は正である必要があります", field="num_videos")
        if not 0 <= self.min_size <= self.max_size:
            raise ValidationError("図形サイズの範囲が不正です", field="min_size")
        unknown = [k for k in self.trajectory_kinds if k not in TRAJECTORY_KINDS]
        if unknown:
            raise ValidationError(f"未知の軌跡種別です: {unknown}", field="trajectory_kinds")


@dataclass
class ShapeCorpus:
    """合成コーパス: 動画 [N, 3, F, H, W] とラベル [N]"""
    videos: np.ndarray
    labels: np.ndarray
    specs: List[MotionSpec] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.videos.shape[0])

    def save(self, directory: Union[str, Path]) -> Path:
        directory = Path(directory)
        write_container(self.videos, directory / "videos.mgt", {"kind": "corpus_videos"})
        write_container(self.labels, directory / "labels.mgt", {"kind": "corpus_labels"})
        return directory

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "ShapeCorpus":
        directory = Path(directory)
        videos = read_container(directory / "videos.mgt")
        labels = read_container(directory / "labels.mgt")
        if videos.shape[0] != labels.shape[0]:
            raise ValidationError(
                f"動画とラベルの件数が一致しません ({videos.shape[0]} != {labels.shape[0]})",
                field="corpus",
            )
        return cls(videos=videos, labels=labels)


def build_corpus(config: CorpusConfig, logger: Optional[logging.Logger] = None) -> ShapeCorpus:
    """設定に従って学習コーパスを生成 (同じ設定なら同一のバイト列)"""
    logger = logger or logging.getLogger(__name__)
    config.validate()
    rng = np.random.default_rng(config.seed)

    videos = np.empty((config.num_videos, 3, config.num_frames, config.height, config.width), dtype=np.float32)
    labels = np.empty(config.num_videos, dtype=np.int64)
    specs: List[MotionSpec] = []

    for index in range(config.num_videos):
        label = int(rng.integers(0, config.num_classes))
        shape, color = SHAPE_CLASSES[label]
        size = int(rng.integers(config.min_size, config.max_size + 1))
        kind = config.trajectory_kinds[int(rng.integers(0, len(config.trajectory_kinds)))]

        side = min(config.height, config.width)
        low = (size + 0.5) / side
        high = (side - size - 0.5) / side
        extent = (2 * size + 1) / side
        trajectory = random_trajectory(rng, kind, config.num_frames, low, high, extent, extent)

        spec = MotionSpec(shape=shape, size=size, color=color, trajectory=trajectory)
        videos[index] = generate_moving_shape_video(spec, config.num_frames, config.height, config.width).data
        labels[index] = label
        specs.append(spec)

    logger.info(f"コーパスを生成しました: {config.num_videos}本 (クラス数: {config.num_classes})")
    return ShapeCorpus(videos=videos, labels=labels, specs=specs)
