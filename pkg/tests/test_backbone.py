import numpy as np
import pytest
import torch

from src.backbone.checkpoint import TENSOR_DIR, content_hash, load_checkpoint, save_checkpoint
from src.backbone.codec import LinearPixelCodec
from src.backbone.model import BackboneConfig, build_denoiser
from src.backbone.taps import FeatureTaps
from src.backbone.training import TrainConfig, train_toy_backbone
from src.data_synth.container import write_container
from src.data_synth.corpus import CorpusConfig, build_corpus
from src.diffusion.schedule import build_schedule
from src.exceptions import CheckpointError, ShapeMismatchError, ValidationError


def test_taps_do_not_change_the_prediction(denoiser, random_latent):
    with torch.no_grad():
        plain = denoiser.predict_noise(random_latent, 5, 0)
        tapped, taps = denoiser.denoise_with_taps(random_latent, 5, 0)
    assert torch.equal(plain, tapped)
    assert taps.layer_ids == [1, 2, 3, 4]


def test_tap_shapes_and_scales(denoiser, random_latent):
    with torch.no_grad():
        _, taps = denoiser.denoise_with_taps(random_latent, 5, None)

    shapes = {v.layer_id: (tuple(v.data.shape), v.scale) for v in taps}
    assert shapes == {
        1: ((8, 4, 16, 16), 1),
        2: ((16, 4, 8, 8), 2),
        3: ((16, 4, 8, 8), 2),
        4: ((8, 4, 16, 16), 1),
    }
    assert taps.get(2).grid_size == (8, 8)
    assert taps.get(2).num_frames == 4


def test_selected_layers_and_hook_cleanup(denoiser, random_latent):
    with torch.no_grad():
        _, taps = denoiser.denoise_with_taps(random_latent, 3, 1, layer_ids=[3])
    assert taps.layer_ids == [3]
    assert all(len(m._forward_hooks) == 0 for m in denoiser.temporal_layers)

    with pytest.raises(ValidationError):
        FeatureTaps(denoiser.temporal_layers, layer_ids=[9])


def test_taps_are_differentiable(denoiser, random_latent):
    z = random_latent.clone().requires_grad_(True)
    _, taps = denoiser.denoise_with_taps(z, 4, 0, layer_ids=[1])
    taps.get(1).data.sum().backward()
    assert z.grad is not None
    assert torch.isfinite(z.grad).all()


def test_static_input_gives_frame_invariant_taps(denoiser):
    frame = torch.randn(4, 1, 16, 16, dtype=torch.float64, generator=torch.Generator().manual_seed(2))
    z = frame.repeat(1, 4, 1, 1)
    with torch.no_grad():
        _, taps = denoiser.denoise_with_taps(z, 2, None)
    for volume in taps:
        for f in range(1, 4):
            assert torch.allclose(volume.data[:, f], volume.data[:, 0], atol=1e-10)


def test_invalid_inputs(denoiser):
    with pytest.raises(ShapeMismatchError):
        denoiser.predict_noise(torch.zeros(4, 2, 15, 16, dtype=torch.float64), 1, 0)
    with pytest.raises(ValidationError):
        denoiser.predict_noise(torch.zeros(4, 2, 16, 16, dtype=torch.float64), 1, 5)
    with pytest.raises(ShapeMismatchError):
        denoiser.denoise_with_taps(torch.zeros(1, 4, 2, 16, 16, dtype=torch.float64), 1, 0)


def test_weights_are_deterministic_for_a_seed(tiny_config):
    first = build_denoiser(tiny_config)
    second = build_denoiser(tiny_config)
    assert content_hash(first.state_dict()) == content_hash(second.state_dict())

    other = build_denoiser(BackboneConfig(**{**tiny_config.__dict__, "seed": 1}))
    assert content_hash(other.state_dict()) != content_hash(first.state_dict())


def test_invalid_backbone_config():
    with pytest.raises(ValidationError):
        BackboneConfig(channels=(6, 16), groups=4, heads=2).validate()
    with pytest.raises(ValidationError):
        BackboneConfig(temporal_placement=("middle",)).validate()


def test_codec_round_trip():
    codec = LinearPixelCodec(4, seed=3)
    video = np.random.default_rng(0).uniform(0.0, 1.0, size=(3, 2, 8, 8)).astype(np.float32)

    z = codec.encode(torch.from_numpy(video))
    assert z.shape == (4, 2, 8, 8)
    restored = codec.decode(z).data
    assert np.allclose(restored, video, atol=1e-5)
    with pytest.raises(ShapeMismatchError):
        codec.encode(torch.zeros(4, 2, 8, 8))


def test_checkpoint_round_trip(tmp_path, tiny_config):
    model = build_denoiser(tiny_config)
    digest = save_checkpoint(model, tmp_path / "ckpt", codec_seed=2, extra={"schedule_t": "10"})

    loaded, codec, loaded_digest = load_checkpoint(tmp_path / "ckpt")
    assert loaded_digest == digest
    assert codec.seed == 2
    assert loaded.config == tiny_config

    z = torch.randn(4, 2, 16, 16, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        assert torch.equal(model.predict_noise(z, 3, 1), loaded.predict_noise(z, 3, 1))


def test_checkpoint_detects_modified_weights(tmp_path, tiny_config):
    model = build_denoiser(tiny_config)
    save_checkpoint(model, tmp_path / "ckpt")
    name = "conv_in.weight"
    write_container(torch.zeros_like(model.state_dict()[name]), tmp_path / "ckpt" / TENSOR_DIR / f"{name}.mgt")

    with pytest.raises(CheckpointError, match="内容ハッシュ"):
        load_checkpoint(tmp_path / "ckpt")


def test_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nothing")


def test_training_runs_and_records_losses(tiny_config):
    corpus = build_corpus(CorpusConfig(num_videos=4, num_frames=4, height=16, width=16, seed=1))
    result = train_toy_backbone(
        corpus,
        tiny_config,
        build_schedule(10),
        steps=3,
        train_config=TrainConfig(batch_size=2, heldout_size=1, log_interval=1),
    )
    assert len(result.losses) == 3
    assert all(np.isfinite(result.losses))
    assert np.isfinite(result.final_heldout_loss)
    assert not result.model.training


def test_training_rejects_labels_outside_vocabulary(tiny_config):
    corpus = build_corpus(CorpusConfig(num_videos=4, num_frames=4, height=16, width=16, num_classes=4, seed=0))
    corpus.labels[:] = 3
    with pytest.raises(ValidationError):
        train_toy_backbone(corpus, tiny_config, build_schedule(10), steps=1)


def test_default_backbone_runs_on_default_latent():
    model = build_denoiser(BackboneConfig())
    z = torch.randn(4, 16, 16, 16, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        eps, taps = model.denoise_with_taps(z, 10, 0)

    assert eps.shape == z.shape
    assert torch.isfinite(eps).all()
    assert {v.layer_id: tuple(v.data.shape) for v in taps} == {
        1: (32, 16, 16, 16),
        2: (64, 16, 8, 8),
        3: (64, 16, 8, 8),
        4: (32, 16, 16, 16),
    }


def test_wider_levels_build_consistent_channels():
    model = build_denoiser(BackboneConfig(channels=(8, 16, 32), heads=2, emb_dim=16, groups=4, spatial_attention_levels=(2,)))
    z = torch.randn(2, 4, 4, 16, 16, generator=torch.Generator().manual_seed(1))
    with torch.no_grad():
        eps = model.predict_noise(z, 3, None)
    assert eps.shape == z.shape
    assert model.tap_scales == {1: 1, 2: 2, 3: 4, 4: 4, 5: 2, 6: 1}


def test_taps_hold_the_temporal_attention_output(tiny_config, random_latent):
    model = build_denoiser(tiny_config, dtype=torch.float64)
    module = model.temporal_layers[0]
    with torch.no_grad():
        weight = torch.randn(module.to_out.weight.shape, generator=torch.Generator().manual_seed(3), dtype=torch.float64)
        module.to_out.weight.copy_(0.5 * weight)

    seen = []
    handle = module.register_forward_pre_hook(lambda m, inputs: seen.append(inputs[0]))
    try:
        with torch.no_grad():
            _, taps = model.denoise_with_taps(random_latent, 5, 0, layer_ids=[1])
            expected = module(seen[0])[0]
    finally:
        handle.remove()

    assert torch.equal(taps.get(1).data, expected)
    assert not torch.allclose(taps.get(1).data, seen[0][0])


def test_temporal_attention_stack_mixes_only_along_frames():
    from src.backbone.layers import TemporalAttention

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(0)
        stack = torch.nn.Sequential(TemporalAttention(8, heads=2, max_frames=8), TemporalAttention(8, heads=2, max_frames=8))
        for layer in stack:
            torch.nn.init.normal_(layer.to_out.weight, std=0.3)
    stack = stack.double()

    x = torch.randn(1, 8, 4, 5, 5, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
    zeroed = x.clone()
    zeroed[:, :, :, 2, 3] = 0.0
    with torch.no_grad():
        before, after = stack(x), stack(zeroed)

    others = torch.ones(5, 5, dtype=torch.bool)
    others[2, 3] = False
    assert torch.allclose(before[..., others], after[..., others], rtol=0.0, atol=1e-12)
    assert not torch.allclose(before[..., 2, 3], after[..., 2, 3])


def test_single_latent_pixel_reaches_every_tap(denoiser, random_latent):
    nudged = random_latent.clone()
    nudged[1, 2, 5, 9] += 1e-3
    with torch.no_grad():
        _, base = denoiser.denoise_with_taps(random_latent, 5, 0)
        _, moved = denoiser.denoise_with_taps(nudged, 5, 0)
    for volume in base:
        assert float((moved.get(volume.layer_id).data - volume.data).abs().max()) > 0.0


def test_tap_gradients_match_finite_differences(denoiser, random_latent):
    generator = torch.Generator().manual_seed(5)
    direction = torch.randn(random_latent.shape, generator=generator, dtype=torch.float64)
    direction = direction / direction.norm()

    for layer_id in (1, 2, 3, 4):
        with torch.no_grad():
            _, taps = denoiser.denoise_with_taps(random_latent, 4, 1, layer_ids=[layer_id])
        weights = torch.randn(taps.get(layer_id).data.shape, generator=generator, dtype=torch.float64)

        def score(z):
            _, tapped = denoiser.denoise_with_taps(z, 4, 1, layer_ids=[layer_id])
            return (tapped.get(layer_id).data * weights).sum()

        z = random_latent.clone().requires_grad_(True)
        (gradient,) = torch.autograd.grad(score(z), z)
        h = 1e-6
        with torch.no_grad():
            numeric = float(score(random_latent + h * direction) - score(random_latent - h * direction)) / (2 * h)
        analytic = float((gradient * direction).sum())
        assert abs(analytic - numeric) <= 1e-3 * abs(numeric)


def _small_corpus():
    return build_corpus(CorpusConfig(num_videos=8, num_frames=4, height=16, width=16, seed=2))


def test_training_lowers_heldout_loss(tiny_config):
    result = train_toy_backbone(
        _small_corpus(),
        tiny_config,
        build_schedule(10),
        steps=40,
        train_config=TrainConfig(batch_size=4, heldout_size=2),
    )
    assert result.final_heldout_loss < result.initial_heldout_loss


def test_training_is_deterministic_and_moves_the_weights(tiny_config):
    corpus = _small_corpus()
    settings = TrainConfig(batch_size=2, heldout_size=1)
    first = train_toy_backbone(corpus, tiny_config, build_schedule(10), steps=3, train_config=settings)
    second = train_toy_backbone(corpus, tiny_config, build_schedule(10), steps=3, train_config=settings)
    assert content_hash(first.model.state_dict()) == content_hash(second.model.state_dict())

    one_step = train_toy_backbone(corpus, tiny_config, build_schedule(10), steps=1, train_config=settings)
    assert content_hash(one_step.model.state_dict()) != content_hash(build_denoiser(tiny_config).state_dict())
