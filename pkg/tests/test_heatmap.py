import math

import numpy as np
import pytest
import torch

from pose3d.heatmap import (
    decode_heatmap_argmax,
    decode_heatmap_soft,
    render_gaussian_heatmap,
    render_pose_heatmaps,
)
from pose3d.skeleton import CanonicalPose2D


class TestRender:
    def test_peak_one_at_cell_centre(self):
        plane = render_gaussian_heatmap((32, 32), (64, 64), sigma=2.0)
        assert plane[32, 32] == 1.0
        assert plane.max() == 1.0

    def test_value_two_cells_away(self):
        plane = render_gaussian_heatmap((32, 32), (64, 64), sigma=2.0)
        expected = math.exp(-4.0 / 8.0)
        assert plane[32, 34] == pytest.approx(expected, abs=1e-12)
        assert plane[34, 32] == pytest.approx(expected, abs=1e-12)

    def test_truncated_beyond_three_sigma(self):
        plane = render_gaussian_heatmap((32, 32), (64, 64), sigma=2.0)
        assert plane[32, 39] == 0.0  # 7 cells > 3 sigma
        assert plane[32, 37] > 0.0

    def test_invisible_gives_zero_plane(self):
        plane = render_gaussian_heatmap((32, 32), (64, 64), 2.0, visible=False)
        assert not plane.any()

    def test_out_of_frame_renders_visible_tail(self):
        plane = render_gaussian_heatmap((-1, 32), (64, 64), sigma=2.0)
        assert plane[32, 0] > 0.0
        assert plane.max() < 1.0

    def test_fully_out_of_frame_is_zero(self):
        plane = render_gaussian_heatmap((-20, 32), (64, 64), sigma=2.0)
        assert not plane.any()

    def test_off_centre_peak_below_one(self):
        plane = render_gaussian_heatmap((31.5, 32.0), (64, 64), sigma=2.0)
        assert plane.max() < 1.0

    def test_bad_args(self):
        with pytest.raises(ValueError):
            render_gaussian_heatmap((0, 0), (64, 64), sigma=0.0)
        with pytest.raises(ValueError):
            render_gaussian_heatmap((0, 0), (0, 64), sigma=2.0)

    def test_pose_stack_shape_and_masking(self, rng):
        coords = rng.uniform(10, 50, (16, 2))
        vis = np.ones(16, bool)
        vis[5] = False
        pose = CanonicalPose2D(coords, vis)
        maps = render_pose_heatmaps(pose, (64, 64), 2.0)
        assert maps.shape == (16, 64, 64)
        assert not maps[5].any()
        assert maps[0].any()


class TestDecodeArgmax:
    def test_round_trip_on_grid(self, rng):
        for _ in range(25):
            x, y = int(rng.integers(0, 64)), int(rng.integers(0, 64))
            plane = render_gaussian_heatmap((x, y), (64, 64), sigma=2.0)
            assert decode_heatmap_argmax(plane) == (x, y)

    def test_all_zero_plane_breaks_to_origin(self):
        assert decode_heatmap_argmax(np.zeros((64, 64))) == (0, 0)

    def test_two_equal_maxima_row_major(self):
        plane = np.zeros((16, 16))
        plane[5, 5] = 1.0
        plane[9, 9] = 1.0
        assert decode_heatmap_argmax(plane) == (5, 5)

    def test_empty_plane_rejected(self):
        with pytest.raises(ValueError):
            decode_heatmap_argmax(np.zeros((0, 0)))


class TestDecodeSoft:
    def test_symmetric_gaussian_centre(self):
        plane = render_gaussian_heatmap((32, 32), (64, 64), sigma=2.0)
        x, y = decode_heatmap_soft(plane, temperature=1.0)
        assert x == pytest.approx(32.0, abs=1e-6)
        assert y == pytest.approx(32.0, abs=1e-6)

    def test_uniform_plane_gives_grid_centre(self):
        x, y = decode_heatmap_soft(np.ones((64, 64)), temperature=1.0)
        assert x == pytest.approx(31.5, abs=1e-9)
        assert y == pytest.approx(31.5, abs=1e-9)

    def test_one_hot_low_temperature_limit(self):
        plane = np.zeros((32, 32))
        plane[20, 10] = 1.0
        x, y = decode_heatmap_soft(plane, temperature=1e-3)
        assert x == pytest.approx(10.0, abs=1e-6)
        assert y == pytest.approx(20.0, abs=1e-6)

    def test_joint_scaling_invariance(self, rng):
        plane = rng.random((32, 32))
        for c in (0.5, 3.0, 40.0):
            x1, y1 = decode_heatmap_soft(plane, temperature=1.0)
            x2, y2 = decode_heatmap_soft(c * plane, temperature=c)
            assert x1 == pytest.approx(x2, abs=1e-9)
            assert y1 == pytest.approx(y2, abs=1e-9)

    def test_differentiable_on_tensors(self):
        plane = torch.rand(16, 16, dtype=torch.float64, requires_grad=True)
        x, y = decode_heatmap_soft(plane, temperature=0.5)
        (x + y).backward()
        assert plane.grad is not None
        assert torch.isfinite(plane.grad).all()

    def test_rejects_bad_temperature(self):
        with pytest.raises(ValueError):
            decode_heatmap_soft(np.ones((4, 4)), temperature=0.0)
