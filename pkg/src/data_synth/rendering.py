"""合成動画レンダリングモジュール

移動図形の動画と、ボックス軌跡の参照動画を描画します。
描画はアンチエイリアスなしのハードエッジで、検出オラクルが厳密に一致します。
"""
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.exceptions import ValidationError, TrajectoryError
from src.payloads import MotionSpec, TrajectorySpec

MIN_FRAMES = 2
MIN_SIDE = 8
MAX_FRAMES = 128
MAX_SIDE = 256

BOX_COLOR = (0.0, 0.0, 0.0)
BOX_BACKGROUND = (1.0, 1.0, 1.0)


@dataclass
class PixelVideo:
    """ピクセル空間の動画 [3, F, H, W]、値域[0,1]"""
    data: np.ndarray
    fps: int = 8

    @property
    def num_frames(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[2])

    @property
    def width(self) -> int:
        return int(self.data.shape[3])

    def validate(self) -> None:
        if self.data.ndim != 4 or self.data.shape[0] != 3:
            raise ValidationError(f"動画は[3, F, H, W]である必要があります: {self.data.shape}", field="data")
        check_dims(self.num_frames, self.height, self.width)
        if not np.all(np.isfinite(self.data)) or self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ValidationError("動画の値は[0,1]の有限値である必要があります", field="data")


def check_dims(num_frames: int, height: int, width: int) -> None:
    """動画サイズが設定範囲内かを検証"""
    if not MIN_FRAMES <= num_frames <= MAX_FRAMES:
        raise ValidationError(f"フレーム数は{MIN_FRAMES}以上{MAX_FRAMES}以下です: {num_frames}", field="F")
    for name, side in (("H", height), ("W", width)):
        if not MIN_SIDE <= side <= MAX_SIDE:
            raise ValidationError(f"辺の長さは{MIN_SIDE}以上{MAX_SIDE}以下です: {side}", field=name)


def to_pixel_index(u: float, size: int) -> int:
    """正規化座標をピクセル中心のインデックスに変換 (u*size - 0.5 を四捨五入、0.5は切り上げ)"""
    return int(math.floor(u * size))


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def box_pixel_extent(cx: float, cy: float, w: float, h: float, height: int, width: int) -> Tuple[int, int, int, int]:
    """正規化ボックスを半開区間のピクセル範囲 (x0, y0, x1, y1) に変換 (フレームでクリップ)"""
    x0 = min(max(round_half_up((cx - w / 2) * width), 0), width)
    x1 = min(max(round_half_up((cx + w / 2) * width), 0), width)
    y0 = min(max(round_half_up((cy - h / 2) * height), 0), height)
    y1 = min(max(round_half_up((cy + h / 2) * height), 0), height)
    # 丸めで空になった場合も最低1ピクセル残す
    if x1 <= x0:
        x0, x1 = (x0, x0 + 1) if x0 < width else (width - 1, width)
    if y1 <= y0:
        y0, y1 = (y0, y0 + 1) if y0 < height else (height - 1, height)
    return x0, y0, x1, y1


def _blank(num_frames: int, height: int, width: int, background) -> np.ndarray:
    video = np.empty((3, num_frames, height, width), dtype=np.float32)
    video[:] = np.asarray(background, dtype=np.float32)[:, None, None, None]
    return video


def generate_moving_shape_video(spec: MotionSpec, num_frames: int, height: int, width: int, fps: int = 8) -> PixelVideo:
    """移動図形の動画を生成

    フレーム f では、軌跡ボックス f の中心に図形を描画します。

    Args:
        spec: 図形の仕様
        num_frames: フレーム数
        height: 高さ
        width: 幅
        fps: フレームレート (メタデータのみ)

    Returns:
        描画された動画

    Raises:
        TrajectoryError: 図形がフレームからはみ出す場合 (フレーム番号付き)
    """
    spec.validate()
    check_dims(num_frames, height, width)
    if spec.trajectory.num_frames != num_frames:
        raise ValidationError(
            f"軌跡のフレーム数が一致しません (軌跡: {spec.trajectory.num_frames}, 動画: {num_frames})",
            field="trajectory",
        )

    video = _blank(num_frames, height, width, spec.background)
    ys, xs = np.mgrid[0:height, 0:width]
    color = np.asarray(spec.color, dtype=np.float32)
    r = spec.size

    for f, box in enumerate(spec.trajectory.boxes):
        cy = to_pixel_index(box.cy, height)
        cx = to_pixel_index(box.cx, width)
        if cy - r < 0 or cx - r < 0 or cy + r > height - 1 or cx + r > width - 1:
            raise TrajectoryError("図形がフレームからはみ出しています", frame_index=f)
        if spec.shape == "square":
            mask = (np.abs(ys - cy) <= r) & (np.abs(xs - cx) <= r)
        else:
            mask = (ys - cy) ** 2 + (xs - cx) ** 2 <= r * r
        video[:, f][:, mask] = color[:, None]

    return PixelVideo(data=video, fps=fps)


def synthesize_box_reference(traj: TrajectorySpec, num_frames: int, height: int, width: int, fps: int = 8) -> PixelVideo:
    """ボックス軌跡から参照動画を合成 (白背景に黒の塗りつぶしボックス)"""
    traj.validate()
    check_dims(num_frames, height, width)
    if traj.num_frames != num_frames:
        raise ValidationError(
            f"軌跡のフレーム数が一致しません (軌跡: {traj.num_frames}, 動画: {num_frames})",
            field="trajectory",
        )

    video = _blank(num_frames, height, width, BOX_BACKGROUND)
    for f, box in enumerate(traj.boxes):
        x0, y0, x1, y1 = box_pixel_extent(box.cx, box.cy, box.w, box.h, height, width)
        video[:, f, y0:y1, x0:x1] = np.asarray(BOX_COLOR, dtype=np.float32)[:, None, None]
    return PixelVideo(data=video, fps=fps)


def box_center_pixels(traj: TrajectorySpec, height: int, width: int) -> list:
    """各フレームのボックス中心をピクセル位置 (y, x) で返す"""
    return [
        (
            min(max(to_pixel_index(box.cy, height), 0), height - 1),
            min(max(to_pixel_index(box.cx, width), 0), width - 1),
        )
        for box in traj.boxes
    ]
