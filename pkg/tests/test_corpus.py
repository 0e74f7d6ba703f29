import numpy as np
import pytest

from src.data_synth.corpus import CorpusConfig, ShapeCorpus, build_corpus
from src.data_synth.trajectories import (
    BENCHMARK_PATHS,
    TRAJECTORY_KINDS,
    benchmark_trajectories,
    random_trajectory,
)
from src.exceptions import ValidationError


def test_benchmark_set_has_eight_valid_trajectories():
    trajectories = benchmark_trajectories(16)
    assert list(trajectories) == list(BENCHMARK_PATHS)
    assert len(trajectories) == 8
    for trajectory in trajectories.values():
        assert trajectory.num_frames == 16
        trajectory.validate()


def test_left_to_right_endpoints():
    trajectory = benchmark_trajectories(16)["left_to_right"]
    first, last = trajectory.boxes[0], trajectory.boxes[-1]
    assert (first.cx, first.cy) == pytest.approx((0.2, 0.5))
    assert (last.cx, last.cy) == pytest.approx((0.8, 0.5))
    assert first.w == pytest.approx(0.3)


@pytest.mark.parametrize("kind", TRAJECTORY_KINDS)
def test_random_trajectories_stay_within_bounds(kind):
    rng = np.random.default_rng(11)
    for _ in range(20):
        trajectory = random_trajectory(rng, kind, 8, 0.2, 0.8, 0.1, 0.1)
        for cx, cy in trajectory.centers():
            assert 0.2 - 1e-12 <= cx <= 0.8 + 1e-12
            assert 0.2 - 1e-12 <= cy <= 0.8 + 1e-12


def test_unknown_trajectory_kind():
    with pytest.raises(ValueError):
        random_trajectory(np.random.default_rng(0), "spiral", 4, 0.2, 0.8, 0.1, 0.1)


def _small_config(**overrides) -> CorpusConfig:
    values = dict(num_videos=6, num_frames=4, height=16, width=16, num_classes=2, seed=5)
    values.update(overrides)
    return CorpusConfig(**values)


def test_corpus_is_deterministic_for_a_seed():
    first = build_corpus(_small_config())
    second = build_corpus(_small_config())
    assert first.videos.tobytes() == second.videos.tobytes()
    assert np.array_equal(first.labels, second.labels)

    other = build_corpus(_small_config(seed=6))
    assert other.videos.tobytes() != first.videos.tobytes()


def test_corpus_shapes_and_labels():
    corpus = build_corpus(_small_config(num_classes=3))
    assert corpus.videos.shape == (6, 3, 4, 16, 16)
    assert corpus.videos.dtype == np.float32
    assert corpus.labels.min() >= 0
    assert corpus.labels.max() < 3
    assert corpus.videos.min() >= 0.0
    assert corpus.videos.max() <= 1.0


def test_corpus_save_and_load(tmp_path):
    corpus = build_corpus(_small_config())
    corpus.save(tmp_path / "corpus")

    loaded = ShapeCorpus.load(tmp_path / "corpus")
    assert len(loaded) == len(corpus)
    assert np.array_equal(loaded.videos, corpus.videos)
    assert np.array_equal(loaded.labels, corpus.labels)


def test_invalid_corpus_config():
    with pytest.raises(ValidationError):
        _small_config(num_classes=1).validate()
    with pytest.raises(ValidationError):
        _small_config(trajectory_kinds=["spiral"]).validate()
    with pytest.raises(ValidationError):
        _small_config(num_videos=0).validate()
