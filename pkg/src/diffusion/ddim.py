"""DDIMモジュール

決定論的 (η=0) なDDIMの更新、反転、サンプリングと、
classifier-free guidance によるノイズ推定の合成を提供します。
"""
import logging
import math
from typing import Callable, Optional, Protocol

import torch

from src.exceptions import NonFiniteError, ValidationError
from .schedule import NoiseSchedule, timestep_grid

# (z_t, t, step_index) -> ε̂
NoiseEstimator = Callable[[torch.Tensor, int, int], torch.Tensor]


class NoisePredictor(Protocol):
    """ε_θ(z_t, t, y) を返すデノイザー (y=None はヌル条件 ∅)"""

    def predict_noise(self, z: torch.Tensor, t: int, y: Optional[int]) -> torch.Tensor:
        ...


def ddim_transfer(z: torch.Tensor, eps: torch.Tensor, t_from: int, t_to: int, schedule: NoiseSchedule) -> torch.Tensor:
    """ẑ0 を予測し、t_to のノイズレベルへ再ノイズ化する (η=0)"""
    a_from = schedule.alpha_bar(t_from)
    a_to = schedule.alpha_bar(t_to)
    if a_from <= 0.0:
        raise ValidationError(f"ᾱ_tが0以下です (t={t_from})", field="alphas_cumprod")
    x0 = (z - math.sqrt(1.0 - a_from) * eps) / math.sqrt(a_from)
    return math.sqrt(a_to) * x0 + math.sqrt(1.0 - a_to) * eps


def predict_x0(z_t: torch.Tensor, eps: torch.Tensor, t: int, schedule: NoiseSchedule) -> torch.Tensor:
    a = schedule.alpha_bar(t)
    return (z_t - math.sqrt(1.0 - a) * eps) / math.sqrt(a)


def ddim_step(
    z_t: torch.Tensor,
    eps: torch.Tensor,
    t: int,
    schedule: NoiseSchedule,
    prev_t: Optional[int] = None,
) -> torch.Tensor:
    """z_t から z_{t−1} (または z_{prev_t}) を計算"""
    if not 1 <= t <= schedule.T:
        raise ValidationError(f"タイムステップが範囲外です: {t} (T={schedule.T})", field="t")
    prev_t = t - 1 if prev_t is None else prev_t
    if not 0 <= prev_t < t:
        raise ValidationError(f"前のタイムステップが不正です: {prev_t} (t={t})", field="prev_t")
    return ddim_transfer(z_t, eps, t, prev_t, schedule)


def combine_cfg(eps_null: torch.Tensor, eps_cond: torch.Tensor, scale: float) -> torch.Tensor:
    """ε_∅ + scale·(ε_y − ε_∅)

    scale=0 と scale=1 はそれぞれの分岐をそのまま返します。
    """
    if scale == 0.0:
        return eps_null
    if scale == 1.0:
        return eps_cond
    return eps_null + scale * (eps_cond - eps_null)


def cfg_noise(denoiser: NoisePredictor, z_t: torch.Tensor, t: int, y: Optional[int], scale: float) -> torch.Tensor:
    """classifier-free guidance によるノイズ推定"""
    if scale < 0:
        raise ValidationError(f"CFGスケールは0以上である必要があります: {scale}", field="cfg_scale")
    with torch.no_grad():
        if y is None or scale == 0.0:
            return denoiser.predict_noise(z_t, t, None)
        eps_cond = denoiser.predict_noise(z_t, t, y)
        if scale == 1.0:
            return eps_cond
        eps_null = denoiser.predict_noise(z_t, t, None)
    return combine_cfg(eps_null, eps_cond, scale)


def plain_estimator(denoiser: NoisePredictor, y: Optional[int], scale: float) -> NoiseEstimator:
    """ガイダンスなしのノイズ推定関数を作成"""
    def estimate(z_t: torch.Tensor, t: int, step_index: int) -> torch.Tensor:
        return cfg_noise(denoiser, z_t, t, y, scale)
    return estimate


def ddim_invert(
    z0: torch.Tensor,
    denoiser: NoisePredictor,
    y: Optional[int],
    steps: int,
    schedule: NoiseSchedule,
    logger: Optional[logging.Logger] = None,
) -> torch.Tensor:
    """DDIM反転でクリーンな潜在変数を z_T に変換

    各区間 (t_prev → t_next) では ε_θ(z_{t_prev}, t_next, y) を用います。

    Args:
        z0: クリーンな潜在変数
        denoiser: デノイザー
        y: 条件 (Noneならヌル条件)
        steps: 反転ステップ数 (0ならz0を返す)
        schedule: ノイズスケジュール

    Raises:
        NonFiniteError: 途中でNaN/Infが出た場合 (失敗したステップ番号付き)
    """
    logger = logger or logging.getLogger(__name__)
    grid = timestep_grid(schedule.T, steps)
    z = z0
    t_prev = 0
    with torch.no_grad():
        for index, t_next in enumerate(grid):
            eps = denoiser.predict_noise(z, t_next, y)
            z = ddim_transfer(z, eps, t_prev, t_next, schedule)
            if not torch.isfinite(z).all():
                raise NonFiniteError("DDIM反転中に非有限値が発生しました", step=index)
            t_prev = t_next
    logger.debug(f"DDIM反転が完了しました (ステップ数: {steps})")
    return z


def ddim_sample(
    z_T: torch.Tensor,
    schedule: NoiseSchedule,
    steps: int,
    estimate_noise: NoiseEstimator,
    callback: Optional[Callable[[int, int, torch.Tensor], None]] = None,
) -> torch.Tensor:
    """z_T から z_0 までDDIMでサンプリング

    Args:
        z_T: 初期ノイズ
        schedule: ノイズスケジュール
        steps: サンプリングステップ数
        estimate_noise: (z_t, t, step_index) -> ε̂
        callback: 各ステップ後に (step_index, t, z_{t−1}) で呼ばれる

    Returns:
        z_0
    """
    grid = timestep_grid(schedule.T, steps)
    z = z_T
    for step_index, t in enumerate(reversed(grid)):
        position = len(grid) - 1 - step_index
        prev_t = grid[position - 1] if position > 0 else 0
        eps = estimate_noise(z, t, step_index)
        z = ddim_step(z, eps, t, schedule, prev_t=prev_t).detach()
        if not torch.isfinite(z).all():
            raise NonFiniteError("DDIMサンプリング中に非有限値が発生しました", step=step_index)
        if callback is not None:
            callback(step_index, t, z)
    return z
