from dataclasses import replace

import pytest
import torch

from src.data_synth.rendering import synthesize_box_reference
from src.diffusion.ddim import cfg_noise
from src.exceptions import GenerationError, StructureMismatchError, ValidationError
from src.guidance.estimate import GuidanceConfig, guided_noise_estimate
from src.guidance.generator import generate, generate_pair, resolve_reference, sigma_sweep, unguided
from src.guidance.loss import check_structure, consistency_loss
from src.motion_pattern.pattern import CorrelationPattern, PatternBundle, extract_matching_bundle
from src.motion_pattern.reference import reference_pattern
from src.payloads import KeyPoint, PointPath


def _bundle(maps_by_key) -> PatternBundle:
    patterns = {
        key: CorrelationPattern(
            maps=torch.as_tensor(maps, dtype=torch.float64),
            source_frame=key[2],
            target_frames=tuple(range(key[2] + 1, key[2] + 1 + len(maps))),
            point=(0, 0),
            layer_id=key[0],
            tau=1.0,
        )
        for key, maps in maps_by_key.items()
    }
    return PatternBundle(patterns)


def test_loss_is_plain_sum_of_squares():
    current = _bundle({(1, 0, 0): [[[1.0, 0.0], [0.0, 0.0]]]})
    reference = _bundle({(1, 0, 0): [[[0.5, 0.5], [0.0, 0.0]]]})
    assert float(consistency_loss(current, reference)) == pytest.approx(0.5)


def test_loss_sums_over_keys_and_is_zero_for_identical_bundles():
    maps = {
        (1, 0, 0): [[[1.0, 0.0], [0.0, 0.0]]],
        (2, 0, 0): [[[0.0, 1.0], [0.0, 0.0]]],
    }
    uniform = {key: [[[0.25, 0.25], [0.25, 0.25]]] for key in maps}
    assert float(consistency_loss(_bundle(maps), _bundle(maps))) == 0.0
    assert float(consistency_loss(_bundle(maps), _bundle(uniform))) == pytest.approx(2 * 0.75)


def test_reference_side_receives_no_gradient():
    current_maps = torch.tensor([[[0.7, 0.3]]], dtype=torch.float64, requires_grad=True)
    reference_maps = torch.tensor([[[0.2, 0.8]]], dtype=torch.float64, requires_grad=True)
    current = PatternBundle({(1, 0, 0): CorrelationPattern(current_maps, 0, (1,), (0, 0), 1, 1.0)})
    reference = PatternBundle({(1, 0, 0): CorrelationPattern(reference_maps, 0, (1,), (0, 0), 1, 1.0)})

    consistency_loss(current, reference).backward()
    assert current_maps.grad is not None
    assert reference_maps.grad is None


def test_structure_mismatch_names_first_differing_key():
    one_frame = [[[1.0, 0.0]]]
    current = _bundle({(1, 0, 0): one_frame, (1, 0, 1): one_frame})
    reference = _bundle({(1, 0, 0): one_frame, (2, 0, 0): one_frame})
    with pytest.raises(StructureMismatchError) as excinfo:
        check_structure(current, reference)
    assert excinfo.value.key == (1, 0, 1)

    longer = _bundle({(1, 0, 0): one_frame, (1, 0, 1): one_frame, (1, 0, 2): one_frame})
    with pytest.raises(StructureMismatchError) as excinfo:
        consistency_loss(current, longer)
    assert excinfo.value.key == (1, 0, 2)

    reshaped = _bundle({(1, 0, 0): [[[0.5, 0.5]], [[0.5, 0.5]]], (1, 0, 1): one_frame})
    with pytest.raises(StructureMismatchError):
        check_structure(current, reshaped)


@pytest.fixture
def guidance_setup(denoiser, codec, schedule, short_trajectory):
    video = synthesize_box_reference(short_trajectory, 4, 16, 16)
    reference = reference_pattern(
        video,
        [KeyPoint(0, 8, 4)],
        1,
        denoiser,
        codec,
        schedule,
        tau=2.0,
        local=2,
        layer_ids=(1, 2),
    )
    z_t = torch.randn(4, 4, 16, 16, generator=torch.Generator().manual_seed(9), dtype=torch.float64)
    cfg = GuidanceConfig(sigma=50.0, tau=2.0, cfg_scale=2.0, height=16, width=16)
    return reference, z_t, cfg


def _loss_at(denoiser, z, t, label, reference):
    with torch.no_grad():
        _, taps = denoiser.denoise_with_taps(z, t, label, reference.layer_ids)
        return float(consistency_loss(extract_matching_bundle(taps, reference), reference))


def test_zero_sigma_is_exactly_unguided(denoiser, guidance_setup):
    reference, z_t, cfg = guidance_setup
    estimate = guided_noise_estimate(denoiser, z_t, 6, 0, reference, cfg, sigma=0.0)
    assert torch.equal(estimate.noise, cfg_noise(denoiser, z_t, 6, 0, cfg.cfg_scale))
    assert estimate.gradient is None


def test_guided_noise_is_base_plus_scaled_gradient(denoiser, guidance_setup):
    reference, z_t, cfg = guidance_setup
    estimate = guided_noise_estimate(denoiser, z_t, 6, 0, reference, cfg)

    assert torch.equal(estimate.noise, estimate.base + cfg.sigma * estimate.gradient)
    assert torch.allclose(estimate.base, cfg_noise(denoiser, z_t, 6, 0, cfg.cfg_scale), atol=1e-12)
    assert estimate.gradient.shape == z_t.shape
    assert float(estimate.gradient.norm()) > 0.0
    assert estimate.loss == pytest.approx(_loss_at(denoiser, z_t, 6, 0, reference), rel=1e-9)


def test_match_conditions_taps_the_null_branch(denoiser, guidance_setup):
    reference, z_t, cfg = guidance_setup
    estimate = guided_noise_estimate(denoiser, z_t, 6, 0, reference, replace(cfg, match_conditions=True))
    assert estimate.loss == pytest.approx(_loss_at(denoiser, z_t, 6, None, reference), rel=1e-9)


def test_gradient_matches_finite_differences(denoiser, guidance_setup):
    reference, z_t, cfg = guidance_setup
    estimate = guided_noise_estimate(denoiser, z_t, 6, 0, reference, cfg)

    direction = torch.randn(z_t.shape, generator=torch.Generator().manual_seed(4), dtype=torch.float64)
    direction = direction / direction.norm()
    h = 1e-5
    numeric = (
        _loss_at(denoiser, z_t + h * direction, 6, 0, reference)
        - _loss_at(denoiser, z_t - h * direction, 6, 0, reference)
    ) / (2 * h)
    analytic = float((estimate.gradient * direction).sum())
    assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-9)


def test_small_step_against_gradient_reduces_loss(denoiser, guidance_setup):
    reference, z_t, cfg = guidance_setup
    estimate = guided_noise_estimate(denoiser, z_t, 6, 0, reference, cfg)
    step = estimate.gradient / estimate.gradient.norm()
    assert _loss_at(denoiser, z_t - 1e-6 * step, 6, 0, reference) < estimate.loss


def test_guidance_config_validation():
    GuidanceConfig().validate(50)
    with pytest.raises(ValidationError) as excinfo:
        GuidanceConfig(sigma=-1.0, tau=0.0).validate()
    assert "sigma" in str(excinfo.value)
    assert "tau" in str(excinfo.value)
    with pytest.raises(ValidationError):
        GuidanceConfig(steps=10, guided_steps=11).validate(20)
    with pytest.raises(ValidationError):
        GuidanceConfig(steps=30).validate(20)
    with pytest.raises(ValidationError):
        GuidanceConfig(mix_lambda=1.5).validate()


def test_trajectory_reference_defaults_to_box_centers(short_trajectory):
    cfg = GuidanceConfig(height=16, width=16)
    video, points = resolve_reference(short_trajectory, cfg)
    assert video.data.shape == (3, 4, 16, 16)
    assert isinstance(points[0], PointPath)
    assert points[0].positions == [(8, 4), (8, 6), (8, 8), (8, 10)]


def test_reference_mode_requires_key_points(static_video):
    with pytest.raises(ValidationError):
        resolve_reference(static_video, GuidanceConfig(mode="reference"))
    with pytest.raises(ValidationError):
        resolve_reference(static_video, GuidanceConfig(mode="reference", key_points=(KeyPoint(9, 0, 0),)))


def _small_cfg(**overrides) -> GuidanceConfig:
    values = dict(
        sigma=20.0,
        tau=2.0,
        steps=3,
        guided_steps=2,
        layer_ids=(1, 2),
        local=2,
        cfg_scale=2.0,
        height=16,
        width=16,
    )
    values.update(overrides)
    return GuidanceConfig(**values)


def test_generate_records_one_trace_entry_per_guided_step(denoiser, codec, schedule, short_trajectory):
    result = generate(short_trajectory, 0, _small_cfg(), denoiser, codec, schedule)

    video, trace = result
    assert video.data.shape == (3, 4, 16, 16)
    assert video.data.min() >= 0.0 and video.data.max() <= 1.0
    assert [r.step_index for r in trace] == [0, 1]
    assert [r.t for r in trace] == [10, 7]
    assert all(r.loss >= 0.0 and r.grad_norm > 0.0 for r in trace)


def test_no_guided_steps_equals_zero_sigma_equals_unguided(denoiser, codec, schedule, short_trajectory):
    cfg = _small_cfg()
    no_steps = generate(short_trajectory, 0, replace(cfg, guided_steps=0), denoiser, codec, schedule)
    no_sigma = generate(short_trajectory, 0, replace(cfg, sigma=0.0), denoiser, codec, schedule)
    baseline = generate(short_trajectory, 0, unguided(cfg), denoiser, codec, schedule)

    assert len(no_steps.trace) == len(no_sigma.trace) == 0
    assert torch.equal(no_steps.latent, baseline.latent)
    assert torch.equal(no_sigma.latent, baseline.latent)


def test_sigma_schedule_skips_zero_sigma_steps(denoiser, codec, schedule, short_trajectory):
    cfg = _small_cfg(sigma_schedule=lambda t, step_index: 0.0 if step_index == 0 else 20.0)
    assert cfg.sigma_at(10, 0) == 0.0
    assert cfg.sigma_at(7, 1) == 20.0

    result = generate(short_trajectory, 0, cfg, denoiser, codec, schedule)
    assert [r.step_index for r in result.trace] == [1]


def test_pair_shares_initial_noise_and_reference(denoiser, codec, schedule, short_trajectory):
    guided, baseline = generate_pair(short_trajectory, 0, _small_cfg(), denoiser, codec, schedule)
    assert torch.equal(guided.initial_noise, baseline.initial_noise)
    assert baseline.reference is guided.reference
    assert len(baseline.trace) == 0
    assert not torch.equal(guided.latent, baseline.latent)


def test_random_initial_noise_is_seeded(denoiser, codec, schedule, short_trajectory):
    cfg = _small_cfg(init_noise="random", noise_seed=3, guided_steps=0)
    first = generate(short_trajectory, 0, cfg, denoiser, codec, schedule)
    second = generate(short_trajectory, 0, cfg, denoiser, codec, schedule)
    expected = torch.randn(first.initial_noise.shape, generator=torch.Generator().manual_seed(3), dtype=torch.float64)
    assert torch.equal(first.initial_noise, expected)
    assert torch.equal(first.latent, second.latent)


def test_sigma_sweep_reuses_reference(denoiser, codec, schedule, short_trajectory):
    results = sigma_sweep(short_trajectory, 0, _small_cfg(), [0.0, 10.0], denoiser, codec, schedule)
    assert [sigma for sigma, _ in results] == [0.0, 10.0]
    assert results[1][1].reference is results[0][1].reference
    assert len(results[0][1].trace) == 0
    assert len(results[1][1].trace) == 2


def test_mode_must_match_input(denoiser, codec, schedule, short_trajectory):
    with pytest.raises(ValidationError):
        generate(short_trajectory, 0, _small_cfg(mode="reference"), denoiser, codec, schedule)


def test_reference_mode_generation(denoiser, codec, schedule, static_video):
    cfg = _small_cfg(mode="reference", key_points=(KeyPoint(0, 5, 5),))
    video, trace = generate(static_video, None, cfg, denoiser, codec, schedule)
    assert video.num_frames == 4
    assert len(trace) == 2


def test_numerical_failure_is_wrapped_with_partial_trace(denoiser, codec, schedule, short_trajectory):
    cfg = _small_cfg(sigma=float("inf"))
    with pytest.raises(GenerationError) as excinfo:
        generate(short_trajectory, 0, cfg, denoiser, codec, schedule)
    assert len(excinfo.value.trace) == 1
    assert excinfo.value.original_error is not None


def test_key_point_on_last_frame_is_rejected(denoiser, codec, schedule, static_video, short_trajectory):
    last = (KeyPoint(3, 5, 5),)
    with pytest.raises(ValidationError, match="最終フレーム"):
        resolve_reference(static_video, GuidanceConfig(mode="reference", key_points=last))
    with pytest.raises(ValidationError, match="最終フレーム"):
        resolve_reference(short_trajectory, GuidanceConfig(height=16, width=16, key_points=last))
    with pytest.raises(ValidationError):
        generate(static_video, None, _small_cfg(mode="reference", key_points=last), denoiser, codec, schedule)
    with pytest.raises(ValidationError):
        reference_pattern(static_video, list(last), 1, denoiser, codec, schedule, layer_ids=(1,))


def test_empty_reference_bundle_leaves_noise_unguided(denoiser, guidance_setup):
    _, z_t, cfg = guidance_setup
    estimate = guided_noise_estimate(denoiser, z_t, 6, 0, PatternBundle({}), cfg)

    assert torch.equal(estimate.gradient, torch.zeros_like(z_t))
    assert torch.equal(estimate.noise, estimate.base)
    assert torch.allclose(estimate.noise, cfg_noise(denoiser, z_t, 6, 0, cfg.cfg_scale), atol=1e-12)
    assert estimate.loss == 0.0


def test_gradient_matches_finite_differences_in_many_directions(denoiser, codec, schedule, short_trajectory):
    video = synthesize_box_reference(short_trajectory, 4, 8, 8)
    reference = reference_pattern(video, [KeyPoint(0, 4, 2)], 1, denoiser, codec, schedule, tau=2.0, layer_ids=(1, 2))
    z_t = torch.randn(4, 4, 8, 8, generator=torch.Generator().manual_seed(21), dtype=torch.float64)
    cfg = GuidanceConfig(sigma=1.0, tau=2.0, cfg_scale=2.0, height=8, width=8)
    gradient = guided_noise_estimate(denoiser, z_t, 5, 0, reference, cfg).gradient

    generator = torch.Generator().manual_seed(22)
    h = 1e-5
    for _ in range(20):
        direction = torch.randn(z_t.shape, generator=generator, dtype=torch.float64)
        direction = direction / direction.norm()
        numeric = (
            _loss_at(denoiser, z_t + h * direction, 5, 0, reference)
            - _loss_at(denoiser, z_t - h * direction, 5, 0, reference)
        ) / (2 * h)
        analytic = float((gradient * direction).sum())
        assert abs(analytic - numeric) <= 1e-3 * abs(numeric)


def test_reference_taken_from_the_current_latent_is_a_stationary_point(denoiser, guidance_setup):
    reference, z_t, cfg = guidance_setup
    with torch.no_grad():
        _, taps = denoiser.denoise_with_taps(z_t, 6, 0, reference.layer_ids)
    own = extract_matching_bundle(taps, reference).detach()

    estimate = guided_noise_estimate(denoiser, z_t, 6, 0, own, cfg)
    assert estimate.loss < 1e-20
    assert float(estimate.gradient.abs().max()) < 1e-12
    assert torch.allclose(estimate.noise, estimate.base, rtol=0.0, atol=1e-9)
