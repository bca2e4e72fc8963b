"""Motion/expression weight maps, soft-gated fusion, and the weighted loss."""

import numpy as np
import pytest
from scipy import ndimage

from deskswap.media import Frame, LandmarkSet, VideoClip, clip_from_array
from deskswap.weighting import (
    LATENT_SPACE,
    PIXEL_SPACE,
    WeightingConfig,
    WeightMap,
    expression_map,
    fuse_weights,
    motion_map,
    to_latent_weights,
    weight_grid,
    weighted_mse,
    weighted_mse_and_grad,
    _weighted_mean,
)


def _clip_from_grays(grays, fps=8.0):
    frames = []
    for g in grays:
        frames.append(Frame(np.repeat(np.asarray(g)[..., None], 3, axis=2)))
    return VideoClip(tuple(frames), fps=fps)


class TestMotionMap:
    def test_static_clip_yields_zeros(self):
        g = np.random.default_rng(0).random((16, 16))
        wm = motion_map(_clip_from_grays([g, g, g]))
        assert wm.shape == (3, 16, 16)
        assert not wm.weights.any()
        assert wm.resolution_space == PIXEL_SPACE

    def test_black_to_white_normalizes_to_ones(self):
        wm = motion_map(_clip_from_grays([np.zeros((8, 8)), np.ones((8, 8))]))
        assert wm.shape == (2, 8, 8)
        assert np.array_equal(wm.weights, np.ones((2, 8, 8)))

    def test_moving_dot_matches_bruteforce_dilation(self):
        # Oracle: naive per-pixel max over a square neighborhood, iterated.
        def oracle_dilate(arr, radius, iterations):
            out = arr
            h, w = arr.shape
            for _ in range(iterations):
                nxt = np.zeros_like(out)
                for y in range(h):
                    for x in range(w):
                        y0, y1 = max(0, y - radius), min(h, y + radius + 1)
                        x0, x1 = max(0, x - radius), min(w, x + radius + 1)
                        nxt[y, x] = out[y0:y1, x0:x1].max()
                out = nxt
            return out

        h = w = 20
        g0 = np.zeros((h, w))
        g1 = np.zeros((h, w))
        g0[5, 5] = 1.0
        g1[5, 9] = 1.0
        cfg = WeightingConfig()
        wm = motion_map(_clip_from_grays([g0, g1]))
        raw = np.abs(g1 - g0)
        want = oracle_dilate(raw, cfg.dilation_radius, cfg.dilation_iterations)
        want = want / want.max()
        assert np.allclose(wm.weights[0], want, atol=1e-12)
        assert np.array_equal(wm.weights[1], wm.weights[0])

    def test_last_frame_copies_previous_map(self):
        rng = np.random.default_rng(8)
        grays = [rng.random((12, 12)) for _ in range(4)]
        wm = motion_map(_clip_from_grays(grays))
        assert wm.shape[0] == 4
        assert np.array_equal(wm.weights[3], wm.weights[2])

    def test_single_frame_rejected(self):
        frame = Frame(np.zeros((8, 8, 3)))
        with pytest.raises(ValueError):
            VideoClip((frame,), fps=8.0)

    def test_deterministic(self):
        rng = np.random.default_rng(91)
        grays = [rng.random((10, 10)) for _ in range(3)]
        a = motion_map(_clip_from_grays(grays))
        b = motion_map(_clip_from_grays(grays))
        assert np.array_equal(a.weights, b.weights)

    def test_values_lie_in_unit_interval(self):
        rng = np.random.default_rng(123)
        clip = clip_from_array(rng.random((5, 16, 16, 3)), fps=8.0)
        wm = motion_map(clip)
        assert wm.weights.min() >= 0.0
        assert wm.weights.max() <= 1.0 + 1e-15


class TestExpressionMap:
    def test_all_boundary_points_yield_zeros(self):
        pts = np.array([[4.0, 4.0], [8.0, 8.0]])
        lms = [LandmarkSet(pts, frame_index=0, boundary_indices=(0, 1))]
        wm = expression_map(lms, (16, 16))
        assert not wm.weights.any()

    def test_center_landmark_peaks_at_center_with_unit_value(self):
        h = w = 33
        pts = np.array([[16.0, 16.0]])
        lms = [LandmarkSet(pts, frame_index=0, boundary_indices=())]
        wm = expression_map(lms, (h, w))
        assert wm.weights[0].max() == pytest.approx(1.0)
        assert wm.weights[0, 16, 16] == pytest.approx(1.0)
        # Symmetry of the centered response under both axis flips.
        assert np.allclose(wm.weights[0], wm.weights[0][::-1, :], atol=1e-12)
        assert np.allclose(wm.weights[0], wm.weights[0][:, ::-1], atol=1e-12)

    def test_identical_frames_give_identical_maps(self):
        pts = np.array([[3.0, 5.0], [10.0, 7.0]])
        lms = [LandmarkSet(pts, frame_index=t, boundary_indices=()) for t in range(2)]
        wm = expression_map(lms, (16, 16))
        assert np.array_equal(wm.weights[0], wm.weights[1])

    def test_matches_dense_convolution_oracle(self):
        # Oracle: build the impulse grid by hand, box-sum via explicit window
        # sums, then correlate with an explicitly constructed Gaussian kernel
        # (same truncation rule as the library filter), zero-padded edges.
        h = w = 32
        pts = np.array([[7.2, 9.8], [20.6, 15.1], [3.0, 3.0]])
        cfg = WeightingConfig(landmark_sigma=2.0, aggregation_window=5)
        lms = [LandmarkSet(pts, frame_index=0, boundary_indices=(2,))]
        wm = expression_map(lms, (h, w), cfg)

        grid = np.zeros((h, w))
        for x, y in pts[:2]:
            grid[int(round(y)), int(round(x))] += 1.0
        half = cfg.aggregation_window // 2
        padded = np.pad(grid, half)
        box = np.zeros((h, w))
        for y in range(h):
            for x in range(w):
                box[y, x] = padded[y:y + cfg.aggregation_window,
                                   x:x + cfg.aggregation_window].sum()
        sigma = 2.0
        radius = int(4.0 * sigma + 0.5)
        xs = np.arange(-radius, radius + 1)
        k = np.exp(-0.5 * (xs / sigma) ** 2)
        k /= k.sum()
        smoothed = np.pad(box, radius)
        smoothed = np.apply_along_axis(lambda r: np.convolve(r, k, mode="valid"), 0, smoothed)
        smoothed = np.apply_along_axis(lambda r: np.convolve(r, k, mode="valid"), 1, smoothed)
        want = smoothed / smoothed.max()
        assert np.allclose(wm.weights[0], want, atol=1e-10)

    def test_out_of_bounds_points_are_clamped(self):
        pts = np.array([[-5.0, 100.0]])
        lms = [LandmarkSet(pts, frame_index=0, boundary_indices=())]
        wm = expression_map(lms, (16, 16))
        assert wm.weights.max() == pytest.approx(1.0)

    def test_empty_track_rejected(self):
        with pytest.raises(ValueError):
            expression_map([], (16, 16))

    def test_default_sigma_scales_with_height(self):
        cfg = WeightingConfig()
        assert cfg.sigma_for_height(100) == pytest.approx(4.0)
        assert cfg.sigma_for_height(512) == pytest.approx(0.04 * 512)
        assert WeightingConfig(landmark_sigma=3.0).sigma_for_height(100) == 3.0


class TestFusion:
    def test_zero_motion_passes_scaled_expression(self):
        l = WeightMap(np.full((2, 4, 4), 0.8))
        d = WeightMap(np.zeros((2, 4, 4)))
        fused = fuse_weights(d, l, alpha=0.5)
        assert np.allclose(fused.weights, 0.4, atol=1e-15)

    def test_saturated_motion_closes_the_gate(self):
        rng = np.random.default_rng(1)
        l = WeightMap(rng.random((2, 4, 4)))
        d = WeightMap(np.ones((2, 4, 4)))
        fused = fuse_weights(d, l, alpha=0.5)
        assert np.array_equal(fused.weights, np.ones((2, 4, 4)))

    def test_hand_worked_value(self):
        d = WeightMap(np.full((1, 1, 1), 0.4))
        l = WeightMap(np.full((1, 1, 1), 0.8))
        fused = fuse_weights(d, l, alpha=0.5)
        assert fused.weights[0, 0, 0] == pytest.approx(0.4 + 0.5 * 0.8 * 0.6)
        assert fused.weights[0, 0, 0] == pytest.approx(0.64)

    def test_range_stays_in_unit_interval(self):
        rng = np.random.default_rng(55)
        for _ in range(20):
            d = WeightMap(rng.random((3, 6, 6)))
            l = WeightMap(rng.random((3, 6, 6)))
            alpha = float(rng.random())
            fused = fuse_weights(d, l, alpha)
            assert fused.weights.min() >= 0.0
            assert fused.weights.max() <= 1.0 + 1e-12

    def test_monotone_in_expression_at_fixed_motion(self):
        rng = np.random.default_rng(56)
        d = WeightMap(rng.random((2, 5, 5)))
        l_lo = rng.random((2, 5, 5)) * 0.5
        l_hi = l_lo + rng.random((2, 5, 5)) * 0.5
        a_lo = fuse_weights(d, WeightMap(l_lo), 0.7)
        a_hi = fuse_weights(d, WeightMap(l_hi), 0.7)
        assert (a_hi.weights >= a_lo.weights - 1e-15).all()

    def test_monotone_in_motion_when_gate_term_small(self):
        rng = np.random.default_rng(57)
        l = rng.random((2, 5, 5))
        d_lo = rng.random((2, 5, 5)) * 0.5
        d_hi = d_lo + rng.random((2, 5, 5)) * 0.5
        alpha = 0.9
        a_lo = fuse_weights(WeightMap(d_lo), WeightMap(l), alpha)
        a_hi = fuse_weights(WeightMap(d_hi), WeightMap(l), alpha)
        # dA/dD = 1 - alpha*L >= 0 whenever alpha*L <= 1, always true here.
        assert (a_hi.weights >= a_lo.weights - 1e-15).all()

    def test_shape_and_space_mismatch_rejected(self):
        with pytest.raises(ValueError):
            fuse_weights(WeightMap(np.zeros((1, 4, 4))), WeightMap(np.zeros((1, 4, 5))), 0.5)
        with pytest.raises(ValueError):
            fuse_weights(
                WeightMap(np.zeros((1, 4, 4)), PIXEL_SPACE),
                WeightMap(np.zeros((1, 4, 4)), LATENT_SPACE),
                0.5,
            )


class TestLatentResampling:
    def test_constant_map_stays_constant(self):
        wm = WeightMap(np.full((2, 8, 8), 0.3))
        out = to_latent_weights(wm, (2, 2, 2))
        assert out.resolution_space == LATENT_SPACE
        assert np.allclose(out.weights, 0.3, atol=1e-12)

    def test_checkerboard_halves_to_half(self):
        board = np.indices((8, 8)).sum(axis=0) % 2
        wm = WeightMap(np.stack([board, board]).astype(float))
        out = to_latent_weights(wm, (2, 4, 4))
        assert np.allclose(out.weights, 0.5, atol=1e-12)

    def test_identity_resolution_bit_identical(self):
        rng = np.random.default_rng(70)
        arr = rng.random((3, 6, 6))
        out = to_latent_weights(WeightMap(arr), (3, 6, 6))
        assert np.array_equal(out.weights, arr)

    def test_frame_count_mismatch_rejected(self):
        with pytest.raises(ValueError):
            to_latent_weights(WeightMap(np.zeros((2, 8, 8))), (3, 4, 4))


class TestWeightedLoss:
    def _fused(self, arr):
        return WeightMap(arr, LATENT_SPACE)

    def test_zero_for_equal_tensors(self):
        rng = np.random.default_rng(90)
        x = rng.standard_normal((2, 4, 3, 5, 5))
        fused = self._fused(rng.random((3, 5, 5)))
        assert weighted_mse(x, x, fused) == 0.0

    def test_zero_map_reduces_to_plain_mse(self):
        rng = np.random.default_rng(91)
        pred = rng.standard_normal((1, 2, 3, 4, 4))
        target = rng.standard_normal((1, 2, 3, 4, 4))
        fused = self._fused(np.zeros((3, 4, 4)))
        loss = weighted_mse(pred, target, fused)
        assert loss == pytest.approx(np.mean((pred - target) ** 2), rel=1e-12)

    def test_zero_lambda_reduces_to_plain_mse(self):
        rng = np.random.default_rng(92)
        pred = rng.standard_normal((1, 2, 3, 4, 4))
        target = rng.standard_normal((1, 2, 3, 4, 4))
        fused = self._fused(rng.random((3, 4, 4)))
        cfg = WeightingConfig(weight_floor_lambda=0.0)
        loss = weighted_mse(pred, target, fused, cfg)
        assert loss == pytest.approx(np.mean((pred - target) ** 2), rel=1e-12)

    def test_single_pixel_hand_value(self):
        pred = np.ones((1, 1, 1, 1, 1))
        target = np.zeros((1, 1, 1, 1, 1))
        fused = self._fused(np.ones((1, 1, 1)))
        assert weighted_mse(pred, target, fused) == pytest.approx(1.0)

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(93)
        for _ in range(10):
            pred = rng.standard_normal((1, 2, 2, 3, 3))
            target = rng.standard_normal((1, 2, 2, 3, 3))
            fused = self._fused(rng.random((2, 3, 3)))
            assert weighted_mse(pred, target, fused) >= 0.0

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(94)
        pred = rng.standard_normal((1, 2, 2, 3, 3))
        target = rng.standard_normal((1, 2, 2, 3, 3))
        fused = self._fused(rng.random((2, 3, 3)))
        _, grad = weighted_mse_and_grad(pred, target, fused)
        eps = 1e-6
        flat = pred.copy().ravel()
        for idx in rng.choice(flat.size, size=8, replace=False):
            bumped = flat.copy()
            bumped[idx] += eps
            up = weighted_mse(bumped.reshape(pred.shape), target, fused)
            bumped[idx] -= 2 * eps
            dn = weighted_mse(bumped.reshape(pred.shape), target, fused)
            fd = (up - dn) / (2 * eps)
            assert grad.ravel()[idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)

    def test_weighted_mean_scale_invariance(self):
        rng = np.random.default_rng(95)
        values = rng.random((4, 4))
        weights = rng.random((4, 4)) + 0.1
        a = _weighted_mean(values, weights)
        b = _weighted_mean(values, 1000.0 * weights)
        assert a == pytest.approx(b, rel=1e-12)

    def test_pixel_space_map_rejected(self):
        pred = np.zeros((1, 1, 1, 2, 2))
        with pytest.raises(ValueError):
            weighted_mse(pred, pred, WeightMap(np.zeros((1, 2, 2)), PIXEL_SPACE))

    def test_shape_mismatch_rejected(self):
        pred = np.zeros((1, 1, 2, 2, 2))
        fused = self._fused(np.zeros((2, 2, 2)))
        with pytest.raises(ValueError):
            weighted_mse(pred, np.zeros((1, 1, 2, 2, 3)), fused)
        with pytest.raises(ValueError):
            weighted_mse(pred, pred, self._fused(np.zeros((2, 3, 2))))


class TestGridExport:
    def test_grid_tiles_three_maps_per_frame_row(self):
        rng = np.random.default_rng(31)
        d = WeightMap(rng.random((2, 6, 5)))
        l = WeightMap(rng.random((2, 6, 5)))
        a = fuse_weights(d, l, 0.5)
        grid = weight_grid(d, l, a, separator=2)
        assert grid.shape == (2 * 6 + 2, 3 * 5 + 4)
        assert np.array_equal(grid[:6, :5], d.weights[0])
        assert np.array_equal(grid[:6, 7:12], l.weights[0])
        assert np.array_equal(grid[:6, 14:19], a.weights[0])
        assert grid.min() >= 0.0 and grid.max() <= 1.0


class TestMapValidation:
    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            WeightMap(np.full((1, 2, 2), -0.1))

    def test_wrong_rank_rejected(self):
        with pytest.raises(ValueError):
            WeightMap(np.zeros((2, 2)))

    def test_unknown_space_rejected(self):
        with pytest.raises(ValueError):
            WeightMap(np.zeros((1, 2, 2)), "voxel")
