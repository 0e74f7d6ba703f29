"""軌跡生成モジュール

評価用の8種類のボックス軌跡と、学習コーパス用のランダム軌跡を生成します。
"""
import math
from typing import Callable, Dict, List, Tuple

import numpy as np

from src.payloads import Box, TrajectorySpec

BENCHMARK_BOX_SIZE = 0.3


def _linear(start: Tuple[float, float], end: Tuple[float, float]) -> Callable[[float], Tuple[float, float]]:
    def path(s: float) -> Tuple[float, float]:
        return (start[0] + (end[0] - start[0]) * s, start[1] + (end[1] - start[1]) * s)
    return path


def _wave(s: float) -> Tuple[float, float]:
    return (0.2 + 0.6 * s, 0.5 + 0.25 * math.sin(2 * math.pi * s))


def _zigzag(s: float) -> Tuple[float, float]:
    y = 0.2 + 1.2 * s if s <= 0.5 else 0.8 - 1.2 * (s - 0.5)
    return (0.2 + 0.6 * s, y)


BENCHMARK_PATHS: Dict[str, Callable[[float], Tuple[float, float]]] = {
    "left_to_right": _linear((0.2, 0.5), (0.8, 0.5)),
    "right_to_left": _linear((0.8, 0.5), (0.2, 0.5)),
    "top_to_bottom": _linear((0.5, 0.2), (0.5, 0.8)),
    "bottom_to_top": _linear((0.5, 0.8), (0.5, 0.2)),
    "diagonal_down": _linear((0.2, 0.2), (0.8, 0.8)),
    "diagonal_up": _linear((0.2, 0.8), (0.8, 0.2)),
    "wave": _wave,
    "zigzag": _zigzag,
}


def trajectory_from_path(
    path: Callable[[float], Tuple[float, float]],
    num_frames: int,
    box_w: float = BENCHMARK_BOX_SIZE,
    box_h: float = BENCHMARK_BOX_SIZE,
) -> TrajectorySpec:
    """パラメトリックな中心経路を等間隔にサンプリングして軌跡を作成"""
    boxes = []
    for f in range(num_frames):
        s = f / (num_frames - 1) if num_frames > 1 else 0.0
        cx, cy = path(s)
        boxes.append(Box(cx, cy, box_w, box_h))
    return TrajectorySpec(tuple(boxes))


def static_trajectory(cx: float, cy: float, w: float, h: float, num_frames: int) -> TrajectorySpec:
    return TrajectorySpec(tuple(Box(cx, cy, w, h) for _ in range(num_frames)))


def linear_trajectory(
    start: Tuple[float, float],
    end: Tuple[float, float],
    num_frames: int,
    w: float,
    h: float,
) -> TrajectorySpec:
    return trajectory_from_path(_linear(start, end), num_frames, w, h)


def benchmark_trajectories(num_frames: int = 16) -> Dict[str, TrajectorySpec]:
    """評価用の8種類のボックス軌跡"""
    return {name: trajectory_from_path(path, num_frames) for name, path in BENCHMARK_PATHS.items()}


def random_trajectory(
    rng: np.random.Generator,
    kind: str,
    num_frames: int,
    low: float,
    high: float,
    w: float,
    h: float,
) -> TrajectorySpec:
    """学習用のランダム軌跡 (linear / sinusoidal / piecewise)

    中心座標は常に [low, high] に収まります。
    """
    if kind == "linear":
        start = tuple(rng.uniform(low, high, size=2))
        end = tuple(rng.uniform(low, high, size=2))
        return trajectory_from_path(_linear(start, end), num_frames, w, h)

    if kind == "sinusoidal":
        mid = (low + high) / 2
        amplitude = rng.uniform(0.0, (high - low) / 2)
        phase = rng.uniform(0.0, 2 * math.pi)
        cycles = rng.uniform(0.5, 1.5)
        horizontal = bool(rng.integers(0, 2))
        x0, x1 = rng.uniform(low, high, size=2)

        def wave(s: float) -> Tuple[float, float]:
            along = x0 + (x1 - x0) * s
            across = mid + amplitude * math.sin(2 * math.pi * cycles * s + phase)
            return (along, across) if horizontal else (across, along)

        return trajectory_from_path(wave, num_frames, w, h)

    if kind == "piecewise":
        knots = rng.uniform(low, high, size=(3, 2))

        def piecewise(s: float) -> Tuple[float, float]:
            if s <= 0.5:
                return tuple(knots[0] + (knots[1] - knots[0]) * (s / 0.5))
            return tuple(knots[1] + (knots[2] - knots[1]) * ((s - 0.5) / 0.5))

        return trajectory_from_path(piecewise, num_frames, w, h)

    raise ValueError(f"未知の軌跡種別です: {kind}")


TRAJECTORY_KINDS: List[str] = ["linear", "sinusoidal", "piecewise"]
