import math

import pytest
import torch

from src.diffusion.ddim import (
    cfg_noise,
    combine_cfg,
    ddim_invert,
    ddim_sample,
    ddim_step,
    plain_estimator,
)
from src.diffusion.objectives import oracle_noise, training_loss
from src.diffusion.schedule import add_noise, build_schedule, timestep_grid
from src.exceptions import NonFiniteError, ShapeMismatchError, ValidationError


class ConstantPredictor:
    """入力に依存しない固定ノイズを返す予測器"""

    def __init__(self, eps: torch.Tensor):
        self.eps = eps
        self.calls = []

    def predict_noise(self, z, t, y):
        self.calls.append((t, y))
        return self.eps


class LabelPredictor:
    """条件ごとに異なる定数を返す予測器"""

    def predict_noise(self, z, t, y):
        return torch.full_like(z, 1.0 if y is None else 3.0)


@pytest.mark.parametrize("kind", ["linear", "cosine"])
def test_schedule_is_strictly_decreasing(kind):
    schedule = build_schedule(50, kind)
    a = schedule.alphas_cumprod
    assert a.shape == (51,)
    assert float(a[0]) == 1.0
    assert torch.all(a[1:] < a[:-1])
    assert torch.all(a > 0)


def test_schedule_rejects_bad_arguments():
    with pytest.raises(ValidationError):
        build_schedule(1)
    with pytest.raises(ValidationError):
        build_schedule(10, "sigmoid")


def test_timestep_grid():
    assert timestep_grid(50, 50) == list(range(1, 51))
    assert timestep_grid(50, 10) == list(range(5, 51, 5))
    assert timestep_grid(10, 3) == [3, 7, 10]
    assert timestep_grid(10, 0) == []
    with pytest.raises(ValidationError):
        timestep_grid(10, 11)


def test_add_noise_at_zero_is_identity():
    schedule = build_schedule(10)
    z0 = torch.randn(4, 2, 8, 8)
    noise = torch.randn(4, 2, 8, 8)
    assert torch.equal(add_noise(z0, 0, noise, schedule), z0)
    with pytest.raises(ShapeMismatchError):
        add_noise(z0, 1, noise[:, :1], schedule)


def test_ddim_step_with_true_noise_recovers_clean_latent():
    schedule = build_schedule(10)
    generator = torch.Generator().manual_seed(0)
    z0 = torch.randn(4, 2, 8, 8, generator=generator, dtype=torch.float64)
    eps = torch.randn(4, 2, 8, 8, generator=generator, dtype=torch.float64)
    z_t = add_noise(z0, 6, eps, schedule)

    assert torch.allclose(oracle_noise(z_t, z0, 6, schedule), eps)
    assert torch.allclose(ddim_step(z_t, eps, 6, schedule, prev_t=0), z0)
    with pytest.raises(ValidationError):
        ddim_step(z_t, eps, 6, schedule, prev_t=6)


def test_combine_cfg_endpoints_return_branches():
    null = torch.zeros(3)
    cond = torch.ones(3)
    assert combine_cfg(null, cond, 0.0) is null
    assert combine_cfg(null, cond, 1.0) is cond
    assert torch.equal(combine_cfg(null, cond, 3.0), torch.full((3,), 3.0))


def test_cfg_noise_mixes_conditions():
    z = torch.zeros(2, 2)
    predictor = LabelPredictor()
    assert torch.equal(cfg_noise(predictor, z, 1, 0, 2.0), torch.full((2, 2), 5.0))
    assert torch.equal(cfg_noise(predictor, z, 1, None, 2.0), torch.full((2, 2), 1.0))
    with pytest.raises(ValidationError):
        cfg_noise(predictor, z, 1, 0, -1.0)


def test_inversion_then_sampling_reconstructs_with_constant_noise():
    schedule = build_schedule(20)
    generator = torch.Generator().manual_seed(1)
    z0 = torch.randn(4, 3, 8, 8, generator=generator, dtype=torch.float64)
    predictor = ConstantPredictor(torch.randn(4, 3, 8, 8, generator=generator, dtype=torch.float64))

    z_T = ddim_invert(z0, predictor, None, 10, schedule)
    assert not torch.allclose(z_T, z0)

    reconstruction = ddim_sample(z_T, schedule, 10, plain_estimator(predictor, None, 1.0))
    assert torch.allclose(reconstruction, z0, atol=1e-8)


def test_inversion_with_zero_steps_returns_input():
    schedule = build_schedule(10)
    z0 = torch.randn(2, 2, 4, 4)
    assert torch.equal(ddim_invert(z0, ConstantPredictor(torch.zeros_like(z0)), None, 0, schedule), z0)


def test_sampling_visits_grid_in_descending_order():
    schedule = build_schedule(10)
    z_T = torch.randn(2, 2, 4, 4, dtype=torch.float64)
    seen = []

    def estimate(z, t, step_index):
        return torch.zeros_like(z)

    ddim_sample(z_T, schedule, 5, estimate, callback=lambda i, t, z: seen.append((i, t)))
    assert seen == [(0, 10), (1, 8), (2, 6), (3, 4), (4, 2)]


def test_sampling_reports_non_finite_step():
    schedule = build_schedule(10)
    z_T = torch.randn(2, 2, 4, 4)

    def estimate(z, t, step_index):
        if step_index == 2:
            return torch.full_like(z, float("nan"))
        return torch.zeros_like(z)

    with pytest.raises(NonFiniteError) as excinfo:
        ddim_sample(z_T, schedule, 5, estimate)
    assert excinfo.value.step == 2


def test_training_loss_rejects_empty_batch_and_nan():
    schedule = build_schedule(10)
    with pytest.raises(ValidationError):
        training_loss(lambda z, t, y: z, torch.zeros(0, 4, 2, 4, 4), torch.zeros(0, dtype=torch.long), schedule)
    with pytest.raises(NonFiniteError):
        training_loss(
            lambda z, t, y: torch.full_like(z, float("nan")),
            torch.zeros(2, 4, 2, 4, 4),
            torch.zeros(2, dtype=torch.long),
            schedule,
        )


class AffinePredictor:
    """ε(z, t) = a_t·z + b の予測器"""

    def __init__(self, b: float = 0.3):
        self.b = b

    @staticmethod
    def slope(t: int) -> float:
        return 0.1 + 0.02 * t

    def predict_noise(self, z, t, y):
        return self.slope(t) * z + self.b


def _transfer_coefficients(a_from: float, a_to: float):
    """η=0 の転送 z' = p·z + q·ε の係数"""
    p = math.sqrt(a_to / a_from)
    q = math.sqrt(1.0 - a_to) - math.sqrt(a_to) * math.sqrt(1.0 - a_from) / math.sqrt(a_from)
    return p, q


def _compose(maps):
    """アフィン写像 z -> A·z + B の列を合成"""
    total_a, total_b = 1.0, 0.0
    for a, b in maps:
        total_a, total_b = a * total_a, a * total_b + b
    return total_a, total_b


def test_inversion_with_affine_denoiser_matches_closed_form():
    schedule = build_schedule(20)
    predictor = AffinePredictor()
    maps = []
    t_prev = 0
    for t_next in timestep_grid(20, 8):
        p, q = _transfer_coefficients(schedule.alpha_bar(t_prev), schedule.alpha_bar(t_next))
        # ε は反転前の z_{t_prev} と t_next で評価
        maps.append((p + q * predictor.slope(t_next), q * predictor.b))
        t_prev = t_next
    scale, shift = _compose(maps)

    z0 = torch.randn(4, 3, 8, 8, generator=torch.Generator().manual_seed(2), dtype=torch.float64)
    z_T = ddim_invert(z0, predictor, None, 8, schedule)
    assert float((z_T - (scale * z0 + shift)).abs().max()) < 1e-6


def test_two_ddim_steps_with_affine_denoiser_match_closed_form():
    schedule = build_schedule(10)
    predictor = AffinePredictor(b=-0.2)
    z_t = torch.randn(4, 2, 8, 8, generator=torch.Generator().manual_seed(3), dtype=torch.float64)

    z = z_t
    for t in (7, 6):
        z = ddim_step(z, predictor.predict_noise(z, t, None), t, schedule)

    maps = []
    for t in (7, 6):
        p, q = _transfer_coefficients(schedule.alpha_bar(t), schedule.alpha_bar(t - 1))
        maps.append((p + q * predictor.slope(t), q * predictor.b))
    scale, shift = _compose(maps)
    assert float((z - (scale * z_t + shift)).abs().max()) < 1e-10


def test_ddim_step_at_last_timestep_with_noise_as_latent_predicts_near_zero():
    schedule = build_schedule(50)
    z_T = torch.randn(4, 2, 4, 4, generator=torch.Generator().manual_seed(4), dtype=torch.float64)
    a = schedule.alpha_bar(50)
    x0 = (z_T - math.sqrt(1.0 - a) * z_T) / math.sqrt(a)
    assert float(x0.abs().max()) < 0.05 * float(z_T.abs().max())
    assert torch.allclose(ddim_step(z_T, z_T, 50, schedule), math.sqrt(schedule.alpha_bar(49)) * x0 + math.sqrt(1.0 - schedule.alpha_bar(49)) * z_T)


def test_training_loss_of_true_noise_predictor_is_zero():
    schedule = build_schedule(10)
    z0 = torch.randn(6, 4, 2, 8, 8, generator=torch.Generator().manual_seed(5), dtype=torch.float64)
    y = torch.zeros(6, dtype=torch.long)

    def oracle(z_t, t, labels):
        a = schedule.alphas_cumprod[t].to(z_t.dtype).view(-1, 1, 1, 1, 1)
        return (z_t - a.sqrt() * z0) / (1.0 - a).sqrt()

    loss = training_loss(oracle, z0, y, schedule, torch.Generator().manual_seed(0))
    assert float(loss) < 1e-12


def test_training_loss_of_zero_predictor_is_within_five_percent_of_element_count():
    schedule = build_schedule(10)
    z0 = torch.zeros(16, 4, 4, 8, 8, dtype=torch.float64)
    y = torch.zeros(16, dtype=torch.long)
    loss = training_loss(lambda z, t, labels: torch.zeros_like(z), z0, y, schedule, torch.Generator().manual_seed(1))
    assert math.isclose(float(loss), 4 * 4 * 8 * 8, rel_tol=0.05)


def test_training_loss_is_reproducible_for_a_seed():
    schedule = build_schedule(10)
    z0 = torch.randn(4, 4, 2, 8, 8, generator=torch.Generator().manual_seed(6))
    y = torch.ones(4, dtype=torch.long)

    def denoiser(z, t, labels):
        return 0.5 * z + t.view(-1, 1, 1, 1, 1) * 0.01

    first = training_loss(denoiser, z0, y, schedule, torch.Generator().manual_seed(9))
    second = training_loss(denoiser, z0, y, schedule, torch.Generator().manual_seed(9))
    assert torch.equal(first, second)
