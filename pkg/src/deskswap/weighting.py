"""Per-pixel reconstruction-loss weighting from motion and expression cues.

Two complementary weight maps are computed in pixel space and fused into a
single prior:

  * a motion map from dilated, normalized inter-frame luminance differences,
    highlighting dynamically changing regions;
  * an expression map from a smoothed landmark response (contour/jawline
    points removed), softly emphasising eye/mouth-scale regions.

The fusion ``fused = motion + alpha * expression * (1 - motion)`` lets the
motion term act as a soft gate: expression cues are attenuated where motion is
already high and pass through where it is weak. After resampling to latent
resolution the fused map reweights the diffusion reconstruction loss as
``w = 1 + lambda * fused``, so unweighted regions keep baseline supervision.

All maps are normalized per clip by their global maximum (their natural lower
bound is zero), so values live in [0, 1]; a clip with no signal yields an
all-zeros map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .media import VideoClip, frame_difference, resize_area, to_grayscale

PIXEL_SPACE = "pixel"
LATENT_SPACE = "latent"
_SPACES = (PIXEL_SPACE, LATENT_SPACE)


@dataclass(frozen=True)
class WeightMap:
    """Per-frame nonnegative spatial weights, F×H×W, tagged with their space."""

    weights: np.ndarray
    resolution_space: str = PIXEL_SPACE

    def __post_init__(self):
        arr = np.asarray(self.weights, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"weight map must be F×H×W, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("weight map contains non-finite values")
        if arr.min() < 0.0:
            raise ValueError("weight map values must be nonnegative")
        if self.resolution_space not in _SPACES:
            raise ValueError(f"resolution_space must be one of {_SPACES}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "weights", arr)

    @property
    def shape(self) -> tuple:
        return self.weights.shape


@dataclass(frozen=True)
class WeightingConfig:
    """Knobs for weight-map construction and the weighted loss.

    ``landmark_sigma=None`` means 4% of the frame height, so expression bumps
    scale with resolution. ``weight_floor_lambda=0`` turns the weighted loss
    into plain MSE.
    """

    alpha: float = 0.5
    dilation_radius: int = 2
    dilation_iterations: int = 2
    landmark_sigma: float | None = None
    aggregation_window: int = 5
    weight_floor_lambda: float = 1.0
    per_frame_normalization: bool = False

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.dilation_radius < 1 or self.dilation_iterations < 1:
            raise ValueError("dilation radius and iterations must be >= 1")
        if self.aggregation_window < 1:
            raise ValueError("aggregation window must be >= 1")
        if self.weight_floor_lambda < 0.0:
            raise ValueError("weight_floor_lambda must be >= 0")

    def sigma_for_height(self, height: int) -> float:
        return 0.04 * height if self.landmark_sigma is None else self.landmark_sigma


def _normalize(stack: np.ndarray, per_frame: bool) -> np.ndarray:
    """Normalize nonnegative maps to [0, 1] by their maximum (zero-safe)."""
    if per_frame:
        peak = stack.max(axis=(1, 2), keepdims=True)
        return np.where(peak > 0.0, stack / np.where(peak > 0.0, peak, 1.0), 0.0)
    peak = stack.max()
    if peak <= 0.0:
        return np.zeros_like(stack)
    return stack / peak


def motion_map(clip: VideoClip, cfg: WeightingConfig = WeightingConfig()) -> WeightMap:
    """Motion weight map from inter-frame luminance differences.

    For each transition t → t+1 the absolute difference of the BT.601 gray
    frames is dilated with a square max filter (radius and iteration count
    from ``cfg``) and the whole clip is normalized by its maximum. The last
    frame reuses the final transition's map so the output stays frame-aligned
    with the clip. A static clip yields an all-zeros map.
    """
    if len(clip) < 2:
        raise ValueError("motion map needs at least 2 frames")
    grays = [to_grayscale(f) for f in clip.frames]
    size = 2 * cfg.dilation_radius + 1
    maps = []
    for t in range(len(clip) - 1):
        diff = frame_difference(grays[t], grays[t + 1])
        for _ in range(cfg.dilation_iterations):
            diff = ndimage.maximum_filter(diff, size=size, mode="nearest")
        maps.append(diff)
    maps.append(maps[-1].copy())
    stack = _normalize(np.stack(maps), cfg.per_frame_normalization)
    return WeightMap(stack, PIXEL_SPACE)


def expression_map(landmarks, frame_shape: tuple,
                   cfg: WeightingConfig = WeightingConfig()) -> WeightMap:
    """Expression weight map from a smoothed landmark response.

    Per frame: drop the contour/jawline points, splat the remaining landmarks
    as unit impulses (coordinates clamped into the frame), aggregate with a
    box sum of ``cfg.aggregation_window``, smooth with an isotropic Gaussian,
    and normalize the clip by its maximum. Frames whose landmark sets contain
    no interior points contribute all-zeros maps.
    """
    landmarks = list(landmarks)
    if not landmarks:
        raise ValueError("expression map needs at least one landmark frame")
    n = landmarks[0].num_points
    if any(lm.num_points != n for lm in landmarks):
        raise ValueError("landmark sets must share a fixed point count across the clip")
    h, w = int(frame_shape[0]), int(frame_shape[1])
    sigma = cfg.sigma_for_height(h)
    maps = []
    for lm in landmarks:
        response = np.zeros((h, w))
        pts = lm.interior_points()
        if pts.size:
            xs = np.clip(np.rint(pts[:, 0]).astype(int), 0, w - 1)
            ys = np.clip(np.rint(pts[:, 1]).astype(int), 0, h - 1)
            np.add.at(response, (ys, xs), 1.0)
            window = cfg.aggregation_window
            response = ndimage.uniform_filter(response, size=window, mode="constant") * window**2
            response = ndimage.gaussian_filter(response, sigma=sigma, mode="constant")
            # the moving-sum filters can undershoot zero by float round-off
            response = np.clip(response, 0.0, None)
        maps.append(response)
    stack = _normalize(np.stack(maps), cfg.per_frame_normalization)
    return WeightMap(stack, PIXEL_SPACE)


def fuse_weights(motion: WeightMap, expression: WeightMap, alpha: float) -> WeightMap:
    """Soft-gated fusion ``motion + alpha * expression * (1 - motion)``.

    Where motion saturates at 1 the expression term is fully gated out; where
    motion vanishes the map reduces to ``alpha * expression``. For inputs in
    [0, 1] and alpha in [0, 1] the result stays in [0, 1].
    """
    if motion.shape != expression.shape:
        raise ValueError(f"shape mismatch: {motion.shape} vs {expression.shape}")
    if motion.resolution_space != expression.resolution_space:
        raise ValueError("weight maps must live in the same resolution space")
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    d, l = motion.weights, expression.weights
    if d.max() > 1.0 or l.max() > 1.0:
        raise ValueError("fusion expects normalized maps in [0, 1]")
    fused = d + alpha * l * (1.0 - d)
    return WeightMap(fused, motion.resolution_space)


def to_latent_weights(pixel_map: WeightMap, latent_shape: tuple) -> WeightMap:
    """Area-average a pixel-space weight map down to latent resolution."""
    if pixel_map.resolution_space != PIXEL_SPACE:
        raise ValueError("to_latent_weights expects a pixel-space map")
    f, h, w = (int(s) for s in latent_shape)
    if pixel_map.shape[0] != f:
        raise ValueError(f"frame count mismatch: map has {pixel_map.shape[0]}, latent wants {f}")
    resized = np.stack([resize_area(m, h, w) for m in pixel_map.weights])
    # Area averaging is convex, but guard against float spill past the bounds.
    return WeightMap(np.clip(resized, 0.0, 1.0), LATENT_SPACE)


def weight_grid(motion: WeightMap, expression: WeightMap, fused: WeightMap,
                separator: int = 2) -> np.ndarray:
    """Tile the three maps into one grayscale inspection image.

    One row per frame, columns ordered motion | expression | fused, with thin
    white separators. Returns a 2-D array in [0, 1] ready for image export.
    """
    if not (motion.shape == expression.shape == fused.shape):
        raise ValueError("all three maps must share a shape")
    f, h, w = motion.shape
    rows = []
    for t in range(f):
        panels = [motion.weights[t], expression.weights[t], fused.weights[t]]
        strip = np.ones((h, 3 * w + 2 * separator))
        for i, panel in enumerate(panels):
            x0 = i * (w + separator)
            strip[:, x0:x0 + w] = np.clip(panel, 0.0, 1.0)
        rows.append(strip)
    gap = np.ones((separator, rows[0].shape[1]))
    tiled = []
    for i, row in enumerate(rows):
        if i:
            tiled.append(gap)
        tiled.append(row)
    return np.vstack(tiled)


def _weighted_mean(values: np.ndarray, weights: np.ndarray) -> float:
    """Sum(w·v)/Sum(w) with weights broadcast against values.

    Invariant under uniform scaling of the weight field.
    """
    weights = np.broadcast_to(weights, values.shape)
    return float(np.sum(weights * values) / np.sum(weights))


def _loss_weights(fused: WeightMap, cfg: WeightingConfig) -> np.ndarray:
    if fused.resolution_space != LATENT_SPACE:
        raise ValueError("loss weighting expects a latent-space map")
    return 1.0 + cfg.weight_floor_lambda * fused.weights


def weighted_mse(pred: np.ndarray, target: np.ndarray, fused: WeightMap,
                 cfg: WeightingConfig = WeightingConfig()) -> float:
    """Weight-normalized mean squared error over a latent video tensor.

    ``pred`` and ``target`` are (B, C, F, H, W); ``fused`` is the latent-space
    fused weight map with matching (F, H, W). The per-pixel weight is
    ``1 + weight_floor_lambda * fused``, broadcast over batch and channels,
    and the loss is Sum(w·err²)/Sum(w), which reduces to plain MSE when the
    floor lambda is zero or the map vanishes.
    """
    loss, _ = weighted_mse_and_grad(pred, target, fused, cfg)
    return loss


def weighted_mse_and_grad(pred: np.ndarray, target: np.ndarray, fused: WeightMap,
                          cfg: WeightingConfig = WeightingConfig()):
    """The weighted loss together with its analytic gradient w.r.t. ``pred``.

    grad = 2·w·(pred − target)/Sum(w); matches central finite differences.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    if pred.ndim != 5:
        raise ValueError(f"expected (B, C, F, H, W) latents, got shape {pred.shape}")
    if pred.shape[2:] != fused.shape:
        raise ValueError(
            f"weight map shape {fused.shape} does not match latent (F, H, W) {pred.shape[2:]}"
        )
    w = np.broadcast_to(_loss_weights(fused, cfg), pred.shape)
    diff = pred - target
    total = np.sum(w)
    loss = float(np.sum(w * diff * diff) / total)
    grad = 2.0 * w * diff / total
    return loss, grad
