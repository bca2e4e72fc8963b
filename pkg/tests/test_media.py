"""Frame/clip carriers, color conversion, resampling, and file formats."""

import fractions

import numpy as np
import pytest

from deskswap import media
from deskswap.media import (
    Frame,
    GrayFrame,
    LandmarkSet,
    SegmentationMask,
    VideoClip,
    frame_difference,
    resize_area,
    to_grayscale,
)


def _const_frame(r, g, b, h=8, w=8):
    px = np.zeros((h, w, 3))
    px[..., 0], px[..., 1], px[..., 2] = r, g, b
    return Frame(px)


class TestGrayscale:
    def test_white_maps_to_ones(self):
        gray = to_grayscale(_const_frame(1, 1, 1))
        assert np.array_equal(gray.intensity, np.ones((8, 8)))

    def test_black_maps_to_zeros(self):
        gray = to_grayscale(_const_frame(0, 0, 0))
        assert np.array_equal(gray.intensity, np.zeros((8, 8)))

    def test_pure_red_uses_bt601_weight(self):
        gray = to_grayscale(_const_frame(1, 0, 0))
        assert np.allclose(gray.intensity, 0.299, atol=1e-12)

    def test_pure_green_and_blue_weights(self):
        assert np.allclose(to_grayscale(_const_frame(0, 1, 0)).intensity, 0.587)
        assert np.allclose(to_grayscale(_const_frame(0, 0, 1)).intensity, 0.114)

    def test_output_in_unit_range_for_random_frames(self):
        rng = np.random.default_rng(4821)
        for _ in range(20):
            frame = Frame(rng.random((9, 13, 3)))
            gray = to_grayscale(frame)
            assert gray.intensity.min() >= 0.0
            assert gray.intensity.max() <= 1.0
            assert gray.intensity.shape == (9, 13)


class TestResizeArea:
    def test_identity_resize_is_bit_identical(self):
        rng = np.random.default_rng(77)
        arr = rng.random((12, 17))
        out = resize_area(arr, 12, 17)
        assert np.array_equal(out, arr)

    def test_2x2_to_scalar_is_mean(self):
        out = resize_area(np.array([[0.0, 1.0], [0.0, 1.0]]), 1, 1)
        assert out.shape == (1, 1)
        assert out[0, 0] == 0.5

    def test_constant_preserved_at_any_size(self):
        arr = np.full((10, 10), 0.37)
        for oh, ow in [(1, 1), (3, 7), (10, 10), (4, 5)]:
            out = resize_area(arr, oh, ow)
            assert np.allclose(out, 0.37, atol=1e-12)

    def test_commutes_with_constant_offset(self):
        rng = np.random.default_rng(3)
        arr = rng.random((9, 11))
        a = resize_area(arr + 0.25, 4, 6)
        b = resize_area(arr, 4, 6) + 0.25
        assert np.allclose(a, b, atol=1e-12)

    def test_output_range_within_input_range(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            arr = rng.random((7, 13)) * 0.5 + 0.2
            out = resize_area(arr, 3, 5)
            assert out.min() >= arr.min() - 1e-12
            assert out.max() <= arr.max() + 1e-12

    def test_matches_exact_fraction_oracle(self):
        # Independent oracle: overlap of input cell [i, i+1)/n_in with output
        # cell [j, j+1)/n_out on the unit interval, in exact rational arithmetic.
        def oracle(arr, oh, ow):
            ih, iw = arr.shape
            out = np.zeros((oh, ow))
            for oy in range(oh):
                for ox in range(ow):
                    y0, y1 = fractions.Fraction(oy, oh), fractions.Fraction(oy + 1, oh)
                    x0, x1 = fractions.Fraction(ox, ow), fractions.Fraction(ox + 1, ow)
                    acc = fractions.Fraction(0)
                    total = fractions.Fraction(0)
                    for iy in range(ih):
                        wy = min(y1, fractions.Fraction(iy + 1, ih)) - max(y0, fractions.Fraction(iy, ih))
                        if wy <= 0:
                            continue
                        for ix in range(iw):
                            wx = min(x1, fractions.Fraction(ix + 1, iw)) - max(x0, fractions.Fraction(ix, iw))
                            if wx <= 0:
                                continue
                            acc += wy * wx * fractions.Fraction(arr[iy, ix])
                            total += wy * wx
                    out[oy, ox] = float(acc / total)
            return out

        rng = np.random.default_rng(901)
        for ih, iw, oh, ow in [(4, 4, 2, 2), (5, 7, 3, 2), (6, 4, 4, 6), (3, 3, 2, 5)]:
            arr = rng.random((ih, iw))
            got = resize_area(arr, oh, ow)
            want = oracle(arr, oh, ow)
            assert np.allclose(got, want, atol=1e-12), (ih, iw, oh, ow)

    def test_rejects_nonpositive_target(self):
        arr = np.zeros((4, 4))
        with pytest.raises(ValueError):
            resize_area(arr, 0, 4)
        with pytest.raises(ValueError):
            resize_area(arr, 4, -1)


class TestFrameDifference:
    def test_identical_frames_give_zeros(self):
        g = GrayFrame(np.random.default_rng(0).random((8, 8)))
        assert np.array_equal(frame_difference(g, g), np.zeros((8, 8)))

    def test_black_vs_white_gives_ones(self):
        a = GrayFrame(np.zeros((8, 8)))
        b = GrayFrame(np.ones((8, 8)))
        assert np.array_equal(frame_difference(a, b), np.ones((8, 8)))

    def test_constant_offset(self):
        a = GrayFrame(np.full((8, 8), 0.3))
        b = GrayFrame(np.full((8, 8), 0.8))
        assert np.allclose(frame_difference(a, b), 0.5, atol=1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(5)
        a = GrayFrame(rng.random((9, 9)))
        b = GrayFrame(rng.random((9, 9)))
        assert np.array_equal(frame_difference(a, b), frame_difference(b, a))

    def test_size_mismatch_rejected(self):
        with pytest.raises(ValueError):
            frame_difference(GrayFrame(np.zeros((8, 8))), GrayFrame(np.zeros((8, 9))))


class TestValidation:
    def test_frame_rejects_out_of_range(self):
        px = np.zeros((8, 8, 3))
        px[0, 0, 0] = 1.5
        with pytest.raises(ValueError):
            Frame(px)

    def test_frame_rejects_tiny_sizes(self):
        with pytest.raises(ValueError):
            Frame(np.zeros((4, 8, 3)))

    def test_frame_rejects_nan(self):
        px = np.zeros((8, 8, 3))
        px[1, 1, 1] = np.nan
        with pytest.raises(ValueError):
            Frame(px)

    def test_frame_pixels_are_immutable(self):
        frame = _const_frame(0.5, 0.5, 0.5)
        with pytest.raises(ValueError):
            frame.pixels[0, 0, 0] = 0.0

    def test_clip_requires_two_frames_and_positive_fps(self):
        f = _const_frame(0, 0, 0)
        with pytest.raises(ValueError):
            VideoClip((f,), fps=8.0)
        with pytest.raises(ValueError):
            VideoClip((f, f), fps=0.0)

    def test_clip_rejects_mixed_sizes(self):
        with pytest.raises(ValueError):
            VideoClip((_const_frame(0, 0, 0, 8, 8), _const_frame(0, 0, 0, 8, 9)), fps=8.0)

    def test_landmarks_reject_bad_boundary_indices(self):
        pts = np.array([[1.0, 1.0], [2.0, 2.0]])
        with pytest.raises(ValueError):
            LandmarkSet(pts, frame_index=0, boundary_indices=(2,))

    def test_mask_range_checked(self):
        with pytest.raises(ValueError):
            SegmentationMask(np.full((8, 8), 1.2))


class TestClipIO:
    def test_round_trip_is_bit_exact_at_8bit(self, tmp_path):
        rng = np.random.default_rng(42)
        frames = []
        for _ in range(3):
            px = rng.integers(0, 256, size=(16, 12, 3)).astype(np.float64) / 255.0
            frames.append(Frame(px))
        clip = VideoClip(tuple(frames), fps=12.5)
        media.save_clip(clip, tmp_path / "clip")
        loaded = media.load_clip(tmp_path / "clip")
        assert loaded.fps == clip.fps
        assert len(loaded) == len(clip)
        for a, b in zip(clip.frames, loaded.frames):
            assert np.array_equal(a.pixels, b.pixels)

    def test_manifest_frame_count_enforced(self, tmp_path):
        clip = VideoClip((_const_frame(0, 0, 0), _const_frame(1, 1, 1)), fps=8.0)
        media.save_clip(clip, tmp_path / "clip")
        (tmp_path / "clip" / media.FRAME_PATTERN.format(1)).unlink()
        with pytest.raises(ValueError):
            media.load_clip(tmp_path / "clip")

    def test_missing_directory_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            media.load_clip(tmp_path / "nope")


class TestLandmarkIO:
    def test_round_trip_exact_floats(self, tmp_path):
        rng = np.random.default_rng(7)
        track = []
        for t in range(4):
            pts = rng.random((6, 2)) * np.array([31.0, 23.0])
            track.append(LandmarkSet(pts, frame_index=t, boundary_indices=(0, 5)))
        path = tmp_path / "lms.txt"
        media.save_landmark_track(track, path)
        loaded = media.load_landmark_track(path)
        assert len(loaded) == 4
        for a, b in zip(track, loaded):
            assert np.array_equal(a.points, b.points)
            assert a.boundary_indices == b.boundary_indices
            assert a.frame_index == b.frame_index

    def test_interior_points_drop_boundary(self):
        pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
        lm = LandmarkSet(pts, frame_index=0, boundary_indices=(0, 2))
        assert np.array_equal(lm.interior_points(), np.array([[1.0, 1.0]]))


class TestMaskIO:
    def test_round_trip_at_8bit(self, tmp_path):
        rng = np.random.default_rng(13)
        masks = [SegmentationMask(rng.integers(0, 256, size=(10, 10)) / 255.0)
                 for _ in range(3)]
        media.save_mask_track(masks, tmp_path / "masks")
        loaded = media.load_mask_track(tmp_path / "masks")
        assert len(loaded) == 3
        for a, b in zip(masks, loaded):
            assert np.array_equal(a.alpha, b.alpha)
