"""キーポイント追跡モジュール

ピクセル座標から特徴グリッドへの写像と、相関パターンのargmaxを連鎖させる貪欲追跡を提供します。
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import torch

from src.backbone.taps import FeatureVolume, TapSet
from src.payloads import KeyPoint, PointPath
from .pattern import extract_pattern

FLAT_TOLERANCE = 1e-12

GridPoint = Tuple[int, int]


def map_point_to_grid(
    point: Union[KeyPoint, Tuple[int, int]],
    grid_size: Tuple[int, int],
    video_size: Tuple[int, int],
) -> GridPoint:
    """ピクセル位置 (y, x) を特徴グリッド上の位置に最近傍で写像 (グリッドにクランプ)"""
    y, x = (point.y, point.x) if isinstance(point, KeyPoint) else point
    grid_h, grid_w = grid_size
    height, width = video_size
    j = (int(y) * grid_h) // height
    k = (int(x) * grid_w) // width
    return (min(max(j, 0), grid_h - 1), min(max(k, 0), grid_w - 1))


@dataclass
class PointTrack:
    """レイヤーごとのキーポイントのグリッド位置

    ``positions[layer_id][n]`` はフレーム ``start_frame + n`` の位置です。
    ``flagged`` は平坦なマップで位置を引き継いだフレームです。
    """
    start_frame: int
    positions: Dict[int, List[GridPoint]] = field(default_factory=dict)
    flagged: Dict[int, List[int]] = field(default_factory=dict)

    def at(self, layer_id: int, frame: int) -> GridPoint:
        return self.positions[layer_id][frame - self.start_frame]

    @property
    def end_frame(self) -> int:
        lengths = {len(p) for p in self.positions.values()}
        return self.start_frame + (max(lengths) if lengths else 1) - 1


def _video_size(volume: FeatureVolume, video_size: Optional[Tuple[int, int]]) -> Tuple[int, int]:
    if video_size is not None:
        return video_size
    grid_h, grid_w = volume.grid_size
    return grid_h * volume.scale, grid_w * volume.scale


def track_point(
    taps: TapSet,
    p0: KeyPoint,
    tau: float,
    video_size: Optional[Tuple[int, int]] = None,
    mode: str = "divide",
    logger: Optional[logging.Logger] = None,
) -> PointTrack:
    """貪欲なargmax連鎖でキーポイントを追跡

    p_{f+1} は p_f から local=1 で計算した M_{f+1} のargmaxです。
    同値の最大は行優先で最小のセルを選び、平坦なマップでは p_f を引き継いでフラグを立てます。

    Args:
        taps: 参照動画の特徴
        p0: 開始キーポイント (ピクセル座標)
        tau: 温度
        video_size: 動画の (H, W) (Noneなら特徴の倍率から計算)
        mode: 温度モード
        logger: ロガー
    """
    logger = logger or logging.getLogger(__name__)
    track = PointTrack(start_frame=p0.frame)
    for volume in taps:
        size = _video_size(volume, video_size)
        p0.validate(volume.num_frames, *size)
        current = map_point_to_grid(p0, volume.grid_size, size)
        positions = [current]
        flagged: List[int] = []
        for frame in range(p0.frame, volume.num_frames - 1):
            with torch.no_grad():
                pattern = extract_pattern(volume, current, frame, tau, local=1, mode=mode, logger=logger)
            scores = pattern.maps[0]
            if float(scores.max() - scores.min()) <= FLAT_TOLERANCE:
                flagged.append(frame + 1)
            else:
                flat_index = int(torch.argmax(scores.flatten()))
                current = divmod(flat_index, scores.shape[1])
            positions.append(current)
        track.positions[volume.layer_id] = positions
        track.flagged[volume.layer_id] = flagged
        if flagged:
            logger.debug(f"平坦なマップのため位置を引き継ぎました (layer={volume.layer_id}, frames={flagged})")
    return track


def track_from_path(
    taps: TapSet,
    path: PointPath,
    video_size: Optional[Tuple[int, int]] = None,
) -> PointTrack:
    """注入されたピクセル軌跡 (正解トラック) を各レイヤーのグリッドに写像"""
    track = PointTrack(start_frame=path.start_frame)
    for volume in taps:
        size = _video_size(volume, video_size)
        track.positions[volume.layer_id] = [map_point_to_grid(p, volume.grid_size, size) for p in path.positions]
        track.flagged[volume.layer_id] = []
    return track
