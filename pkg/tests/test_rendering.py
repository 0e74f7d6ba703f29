import numpy as np
import pytest
from scipy import ndimage

from src.data_synth.rendering import (
    box_center_pixels,
    box_pixel_extent,
    check_dims,
    generate_moving_shape_video,
    synthesize_box_reference,
)
from src.data_synth.trajectories import benchmark_trajectories, linear_trajectory, static_trajectory
from src.evaluation.detector import detect_shape
from src.exceptions import TrajectoryError, ValidationError
from src.payloads import Box, MotionSpec, TrajectorySpec


def _non_background(frame: np.ndarray, background=(1.0, 1.0, 1.0)) -> np.ndarray:
    return np.any(frame != np.asarray(background, dtype=np.float32)[:, None, None], axis=0)


def test_square_is_drawn_around_box_center():
    spec = MotionSpec(
        shape="square",
        size=1,
        color=(1.0, 0.0, 0.0),
        trajectory=static_trajectory(0.5, 0.5, 0.2, 0.2, 2),
    )
    video = generate_moving_shape_video(spec, 2, 16, 16)

    mask = _non_background(video.data[:, 0])
    assert mask.sum() == 9
    assert mask[7:10, 7:10].all()
    assert np.array_equal(video.data[:, 0, 8, 8], np.array([1.0, 0.0, 0.0], dtype=np.float32))


def test_circle_of_size_zero_is_a_single_pixel():
    spec = MotionSpec(
        shape="circle",
        size=0,
        color=(0.0, 0.0, 1.0),
        trajectory=static_trajectory(0.25, 0.75, 0.1, 0.1, 3),
    )
    video = generate_moving_shape_video(spec, 3, 16, 16)
    for f in range(3):
        mask = _non_background(video.data[:, f])
        assert mask.sum() == 1
        assert mask[12, 4]


def test_shape_leaving_the_frame_reports_the_frame():
    trajectory = TrajectorySpec((Box(0.5, 0.5, 0.1, 0.1), Box(0.0, 0.5, 0.1, 0.1)))
    spec = MotionSpec(shape="square", size=2, color=(0.0, 0.0, 0.0), trajectory=trajectory)
    with pytest.raises(TrajectoryError) as excinfo:
        generate_moving_shape_video(spec, 2, 16, 16)
    assert excinfo.value.frame_index == 1


def test_box_reference_fills_exact_pixels():
    trajectory = static_trajectory(0.5, 0.5, 0.25, 0.25, 2)
    video = synthesize_box_reference(trajectory, 2, 16, 16)

    frame = video.data[:, 0]
    assert np.all(frame[:, 6:10, 6:10] == 0.0)
    assert _non_background(frame).sum() == 16


def test_box_pixel_extent_keeps_at_least_one_pixel():
    assert box_pixel_extent(0.5, 0.5, 0.001, 0.001, 16, 16) == (8, 8, 9, 9)
    assert box_pixel_extent(1.0, 1.0, 0.001, 0.001, 16, 16) == (15, 15, 16, 16)


def test_box_center_pixels_are_clamped():
    trajectory = TrajectorySpec((Box(0.5, 0.25, 0.2, 0.2), Box(0.999, 0.999, 0.2, 0.2)))
    assert box_center_pixels(trajectory, 32, 32) == [(8, 16), (31, 31)]


def test_frame_count_mismatch_is_rejected():
    with pytest.raises(ValidationError):
        synthesize_box_reference(static_trajectory(0.5, 0.5, 0.2, 0.2, 3), 4, 16, 16)


def test_dimension_limits():
    check_dims(2, 8, 8)
    with pytest.raises(ValidationError):
        check_dims(1, 16, 16)
    with pytest.raises(ValidationError):
        check_dims(4, 4, 16)
    with pytest.raises(ValidationError):
        check_dims(4, 16, 512)


def test_degenerate_box_is_a_trajectory_error():
    trajectory = TrajectorySpec((Box(0.5, 0.5, 0.0, 0.1), Box(0.5, 0.5, 0.1, 0.1)))
    with pytest.raises(TrajectoryError):
        synthesize_box_reference(trajectory, 2, 16, 16)


@pytest.mark.parametrize("name", sorted(benchmark_trajectories(16)))
def test_benchmark_box_centroid_follows_the_trajectory(name):
    trajectory = benchmark_trajectories(16)[name]
    video = synthesize_box_reference(trajectory, 16, 32, 32)
    for f, box in enumerate(trajectory.boxes):
        mask = _non_background(video.data[:, f])
        cy, cx = ndimage.center_of_mass(mask)
        # インデックスはピクセル中心なので0.5ずらす
        assert abs(cx + 0.5 - box.cx * 32) <= 1.0
        assert abs(cy + 0.5 - box.cy * 32) <= 1.0


def test_benchmark_videos_are_distinct():
    videos = [synthesize_box_reference(t, 16, 32, 32).data for t in benchmark_trajectories(16).values()]
    for i in range(len(videos)):
        for j in range(i + 1, len(videos)):
            assert not np.array_equal(videos[i], videos[j])


def test_detected_centroid_moves_right_on_a_linear_path():
    trajectory = linear_trajectory((0.2, 0.5), (0.8, 0.5), 16, 0.2, 0.2)
    video = synthesize_box_reference(trajectory, 16, 32, 32)
    centers = []
    for f in range(16):
        x0, _, x1, _ = detect_shape(video.data[:, f])
        centers.append((x0 + x1) / 2)
    assert all(b >= a for a, b in zip(centers, centers[1:]))
    assert centers[-1] > centers[0]
