"""Full-reference evaluation protocol over generated/ground-truth clip pairs.

Eight scores: identity similarity (mean per-frame cosine of identity
embeddings), pose mean absolute error (per-angle, wrap-aware), landmark
normalized mean error, SSIM, PSNR, a perceptual feature distance, FID over
all frames of the evaluation set, and the temporal variant of the perceptual
distance (mean over adjacent generated frames).

Every metric is a pure function of its inputs and backends. FID accumulates
mergeable partial statistics (count, sum, outer-product sum) so feature
extraction can be distributed and combined associatively.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .media import Frame, LandmarkSet, VideoClip

PSNR_CAP_DB = 100.0
REPORT_COLUMNS = ("sim_id", "pose_mae", "expr_nme", "ssim", "psnr", "lpips", "fid", "tlpips")


@dataclass(frozen=True)
class PoseEstimate:
    """Euler angles in degrees, each wrapped into [-180, 180]."""

    yaw: float
    pitch: float
    roll: float

    def __post_init__(self):
        for name in ("yaw", "pitch", "roll"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or not (-180.0 <= v <= 180.0):
                raise ValueError(f"{name} must lie in [-180, 180], got {v}")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.yaw, self.pitch, self.roll])


# ---------------------------------------------------------------------------
# Identity / pose / landmarks
# ---------------------------------------------------------------------------

def id_similarity(gen: VideoClip, gt: VideoClip, backend) -> float:
    """Mean per-frame cosine similarity of identity embeddings, in [-1, 1]."""
    if len(gen) != len(gt):
        raise ValueError(f"clip lengths differ: {len(gen)} vs {len(gt)}")
    sims = []
    for a, b in zip(gen.frames, gt.frames):
        ea, eb = backend.embed(a), backend.embed(b)
        denom = np.linalg.norm(ea) * np.linalg.norm(eb)
        sims.append(float(np.dot(ea, eb) / denom))
    return float(np.clip(np.mean(sims), -1.0, 1.0))


def _wrap_degrees(delta: np.ndarray) -> np.ndarray:
    return (delta + 180.0) % 360.0 - 180.0


def pose_mae(gen_poses, gt_poses) -> float:
    """Mean absolute Euler-angle error, averaged over frames and the three
    angles, with differences wrapped so 179 vs -179 scores 2, not 358."""
    gen_poses, gt_poses = list(gen_poses), list(gt_poses)
    if len(gen_poses) != len(gt_poses):
        raise ValueError(f"pose track lengths differ: {len(gen_poses)} vs {len(gt_poses)}")
    if not gen_poses:
        raise ValueError("pose tracks are empty")
    a = np.stack([p.as_array() for p in gen_poses])
    b = np.stack([p.as_array() for p in gt_poses])
    return float(np.abs(_wrap_degrees(a - b)).mean())


def _normalization_length(gt: LandmarkSet, eye_indices) -> float:
    pts = gt.points
    if eye_indices is not None:
        i, j = eye_indices
        return float(np.linalg.norm(pts[i] - pts[j]))
    spread = pts.max(axis=0) - pts.min(axis=0)
    return float(np.hypot(spread[0], spread[1]))


def landmark_nme(gen_lms, gt_lms, eye_indices=None) -> float:
    """Mean point distance over the normalization length, averaged over frames.

    Normalizes by the ground-truth inter-ocular distance when ``eye_indices``
    is given, else by the ground-truth bounding-box diagonal. Frames with a
    degenerate zero length are skipped with a warning.
    """
    gen_lms, gt_lms = list(gen_lms), list(gt_lms)
    if len(gen_lms) != len(gt_lms):
        raise ValueError(f"landmark track lengths differ: {len(gen_lms)} vs {len(gt_lms)}")
    if not gen_lms:
        raise ValueError("landmark tracks are empty")
    per_frame = []
    for t, (a, b) in enumerate(zip(gen_lms, gt_lms)):
        if a.num_points != b.num_points:
            raise ValueError(f"frame {t}: point counts differ ({a.num_points} vs {b.num_points})")
        norm_len = _normalization_length(b, eye_indices)
        if norm_len <= 0.0:
            warnings.warn(f"frame {t}: degenerate normalization length, frame skipped")
            continue
        dists = np.linalg.norm(a.points - b.points, axis=1)
        per_frame.append(float(dists.mean()) / norm_len)
    if not per_frame:
        raise ValueError("no frame had a usable normalization length")
    return float(np.mean(per_frame))


# ---------------------------------------------------------------------------
# Image quality
# ---------------------------------------------------------------------------

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2


def _gaussian_taps() -> np.ndarray:
    radius = _SSIM_WINDOW // 2
    x = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (x / _SSIM_SIGMA) ** 2)
    return k / k.sum()


def _local_mean(arr: np.ndarray, taps: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(arr, taps, axis=0, mode="constant")
    out = ndimage.correlate1d(out, taps, axis=1, mode="constant")
    margin = _SSIM_WINDOW // 2
    return out[margin:-margin, margin:-margin]


def ssim(a: Frame, b: Frame) -> float:
    """Structural similarity with an 11×11 Gaussian window (sigma 1.5) on the
    [0, 1] range, full (valid) windows only, averaged over the channels."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"frame sizes differ: {a.pixels.shape} vs {b.pixels.shape}")
    if a.height < _SSIM_WINDOW or a.width < _SSIM_WINDOW:
        raise ValueError(f"frames must be at least {_SSIM_WINDOW} pixels per side")
    taps = _gaussian_taps()
    scores = []
    for c in range(3):
        x, y = a.pixels[..., c], b.pixels[..., c]
        mx, my = _local_mean(x, taps), _local_mean(y, taps)
        vx = _local_mean(x * x, taps) - mx * mx
        vy = _local_mean(y * y, taps) - my * my
        cxy = _local_mean(x * y, taps) - mx * my
        num = (2 * mx * my + _SSIM_C1) * (2 * cxy + _SSIM_C2)
        den = (mx * mx + my * my + _SSIM_C1) * (vx + vy + _SSIM_C2)
        scores.append(float(np.mean(num / den)))
    return float(np.clip(np.mean(scores), -1.0, 1.0))


def psnr(a: Frame, b: Frame, cap: float = PSNR_CAP_DB) -> float:
    """10·log10(1/MSE) on the unit range, capped (identical frames → cap)."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"frame sizes differ: {a.pixels.shape} vs {b.pixels.shape}")
    mse = float(np.mean((a.pixels - b.pixels) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))


def perceptual_distance(a: Frame, b: Frame, backend) -> float:
    """Dimension-normalized L2 distance between backend feature vectors."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"frame sizes differ: {a.pixels.shape} vs {b.pixels.shape}")
    fa, fb = backend.features(a), backend.features(b)
    return float(np.linalg.norm(fa - fb) / np.sqrt(fa.size))


def tlpips(gen: VideoClip, backend) -> float:
    """Mean perceptual distance between adjacent frames of the clip."""
    if len(gen) < 2:
        raise ValueError("temporal perceptual distance needs at least 2 frames")
    dists = [perceptual_distance(gen.frames[t], gen.frames[t + 1], backend)
             for t in range(len(gen) - 1)]
    return float(np.mean(dists))


# ---------------------------------------------------------------------------
# FID over mergeable feature statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureStats:
    """Partial statistics of a feature set: count, sum, outer-product sum.

    Merging is associative and commutative, so shards computed by parallel
    workers combine in any order.
    """

    count: int
    sum: np.ndarray
    outer: np.ndarray

    @classmethod
    def from_features(cls, feats) -> "FeatureStats":
        feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
        if feats.size == 0:
            raise ValueError("cannot build statistics from an empty feature set")
        return cls(count=feats.shape[0], sum=feats.sum(axis=0), outer=feats.T @ feats)

    def merge(self, other: "FeatureStats") -> "FeatureStats":
        if self.sum.shape != other.sum.shape:
            raise ValueError("cannot merge statistics of different dimensions")
        return FeatureStats(self.count + other.count, self.sum + other.sum,
                            self.outer + other.outer)

    def mean_cov(self) -> tuple:
        """Sample mean and covariance, with trace shrinkage when the set is
        too small for a well-conditioned covariance (count <= dimension)."""
        d = self.sum.size
        mu = self.sum / self.count
        if self.count < 2:
            cov = np.zeros((d, d))
        else:
            cov = (self.outer - self.count * np.outer(mu, mu)) / (self.count - 1)
            cov = (cov + cov.T) / 2.0
        if self.count <= d:
            gamma = 0.1
            cov = (1.0 - gamma) * cov + gamma * (np.trace(cov) / d) * np.eye(d)
        return mu, cov


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid_from_stats(stats_a: FeatureStats, stats_b: FeatureStats) -> float:
    """Frechet distance between the Gaussians fitted to two feature sets.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with the cross
    term computed through the symmetric product S_a^{1/2} S_b S_a^{1/2};
    small negative rounding is clamped to zero.
    """
    mu_a, cov_a = stats_a.mean_cov()
    mu_b, cov_b = stats_b.mean_cov()
    diff = mu_a - mu_b
    root_a = _sqrtm_psd(cov_a)
    inner = root_a @ cov_b @ root_a
    cross = np.clip(np.linalg.eigvalsh((inner + inner.T) / 2.0), 0.0, None)
    val = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.sqrt(cross).sum())
    return max(0.0, val)


def fid_from_features(feats_a, feats_b) -> float:
    return fid_from_stats(FeatureStats.from_features(feats_a),
                          FeatureStats.from_features(feats_b))


def fid(frames_a, frames_b, backend) -> float:
    """FID between two frame collections under a feature backend."""
    frames_a, frames_b = list(frames_a), list(frames_b)
    if not frames_a or not frames_b:
        raise ValueError("FID needs non-empty frame sets")
    fa = np.stack([backend.features(f) for f in frames_a])
    fb = np.stack([backend.features(f) for f in frames_b])
    return fid_from_features(fa, fb)


# ---------------------------------------------------------------------------
# Aggregate evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClipEval:
    """One evaluation item: a generated clip, its ground truth, and any
    available pose/landmark annotations for both sides."""

    clip_id: str
    gen: VideoClip
    gt: VideoClip
    gen_poses: tuple = ()
    gt_poses: tuple = ()
    gen_landmarks: tuple = ()
    gt_landmarks: tuple = ()


@dataclass(frozen=True)
class MetricReport:
    sim_id: float
    pose_mae: float | None
    expr_nme: float | None
    ssim: float
    psnr: float
    lpips: float
    fid: float
    tlpips: float
    per_clip: tuple = field(default_factory=tuple)

    def as_dict(self) -> dict:
        return {
            "columns": {k: getattr(self, k) for k in REPORT_COLUMNS},
            "per_clip": [dict(row) for row in self.per_clip],
        }


def evaluate(items, embedding_backend, feature_backend,
             eye_indices=None, psnr_cap: float = PSNR_CAP_DB) -> MetricReport:
    """Score a set of clips; frame metrics average per clip then over clips,
    FID pools features across every frame of the whole set."""
    items = list(items)
    if not items:
        raise ValueError("nothing to evaluate")
    per_clip = []
    gen_stats = None
    gt_stats = None
    for item in items:
        try:
            if len(item.gen) != len(item.gt):
                raise ValueError(f"clip lengths differ: {len(item.gen)} vs {len(item.gt)}")
            row = {
                "clip_id": item.clip_id,
                "sim_id": id_similarity(item.gen, item.gt, embedding_backend),
                "ssim": float(np.mean([ssim(a, b) for a, b in zip(item.gen.frames, item.gt.frames)])),
                "psnr": float(np.mean([psnr(a, b, cap=psnr_cap)
                                       for a, b in zip(item.gen.frames, item.gt.frames)])),
                "lpips": float(np.mean([perceptual_distance(a, b, feature_backend)
                                        for a, b in zip(item.gen.frames, item.gt.frames)])),
                "tlpips": tlpips(item.gen, feature_backend),
                "pose_mae": (pose_mae(item.gen_poses, item.gt_poses)
                             if item.gen_poses and item.gt_poses else None),
                "expr_nme": (landmark_nme(item.gen_landmarks, item.gt_landmarks, eye_indices)
                             if item.gen_landmarks and item.gt_landmarks else None),
            }
        except ValueError as err:
            raise ValueError(f"clip {item.clip_id!r}: {err}") from err
        per_clip.append(row)
        clip_gen = FeatureStats.from_features(
            np.stack([feature_backend.features(f) for f in item.gen.frames]))
        clip_gt = FeatureStats.from_features(
            np.stack([feature_backend.features(f) for f in item.gt.frames]))
        gen_stats = clip_gen if gen_stats is None else gen_stats.merge(clip_gen)
        gt_stats = clip_gt if gt_stats is None else gt_stats.merge(clip_gt)

    def agg(key):
        vals = [row[key] for row in per_clip if row[key] is not None]
        return float(np.mean(vals)) if vals else None

    return MetricReport(
        sim_id=agg("sim_id"),
        pose_mae=agg("pose_mae"),
        expr_nme=agg("expr_nme"),
        ssim=agg("ssim"),
        psnr=agg("psnr"),
        lpips=agg("lpips"),
        fid=fid_from_stats(gen_stats, gt_stats),
        tlpips=agg("tlpips"),
        per_clip=tuple(per_clip),
    )


# ---------------------------------------------------------------------------
# Report I/O
# ---------------------------------------------------------------------------

def report_to_text(report: MetricReport) -> str:
    """Fixed-width plain-text table, one aggregate row plus per-clip rows."""
    def fmt(v):
        return "-" if v is None else f"{v:.4f}"

    header = ["clip"] + list(REPORT_COLUMNS)
    rows = [["ALL"] + [fmt(getattr(report, k)) for k in REPORT_COLUMNS]]
    for row in report.per_clip:
        rows.append([str(row["clip_id"])] +
                    [fmt(row.get(k) if k != "fid" else None) for k in REPORT_COLUMNS])
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for r in rows:
        lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def save_report(report: MetricReport, path) -> None:
    Path(path).write_text(json.dumps(report.as_dict(), indent=2) + "\n")


def load_report(path) -> dict:
    data = json.loads(Path(path).read_text())
    if "columns" not in data or "per_clip" not in data:
        raise ValueError(f"{path} is not an evaluation report")
    return data
