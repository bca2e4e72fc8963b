"""Frame, clip, landmark, and mask carriers plus the pixel-level primitives
(grayscale conversion, area resampling, frame differencing) used everywhere else.

Conventions:
  * pixels are float arrays in [0, 1]; channel order is (red, green, blue)
  * 8-bit quantization happens only at file boundaries
  * all carriers are immutable after construction (backing arrays are locked),
    so they are safe to share across worker processes/threads
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

MIN_FRAME_SIDE = 8

# ITU-R BT.601 luma coefficients.
_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Frame:
    """A single RGB frame, H×W×3 float64 in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"frame must be H×W×3, got shape {px.shape}")
        if px.shape[0] < MIN_FRAME_SIDE or px.shape[1] < MIN_FRAME_SIDE:
            raise ValueError(f"frame sides must be >= {MIN_FRAME_SIDE}, got {px.shape[:2]}")
        if not np.isfinite(px).all():
            raise ValueError("frame contains non-finite values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("frame intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", _freeze(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class GrayFrame:
    """Single-channel H×W intensity map in [0, 1]."""

    intensity: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.intensity, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"gray frame must be 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("gray frame contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("gray intensities must lie in [0, 1]")
        object.__setattr__(self, "intensity", _freeze(arr))

    @property
    def height(self) -> int:
        return self.intensity.shape[0]

    @property
    def width(self) -> int:
        return self.intensity.shape[1]


@dataclass(frozen=True)
class VideoClip:
    """An ordered sequence of same-sized frames at a fixed frame rate."""

    frames: tuple
    fps: float = 25.0

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) < 2:
            raise ValueError(f"a clip needs at least 2 frames, got {len(frames)}")
        if not all(isinstance(f, Frame) for f in frames):
            raise TypeError("clip frames must be Frame instances")
        h, w = frames[0].height, frames[0].width
        for i, f in enumerate(frames):
            if (f.height, f.width) != (h, w):
                raise ValueError(f"frame {i} is {f.height}×{f.width}, expected {h}×{w}")
        if not (self.fps > 0):
            raise ValueError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def width(self) -> int:
        return self.frames[0].width

    def as_array(self) -> np.ndarray:
        """Stack frames into an F×H×W×3 array (copy)."""
        return np.stack([f.pixels for f in self.frames])


@dataclass(frozen=True)
class LandmarkSet:
    """2-D facial landmarks for one frame.

    ``boundary_indices`` marks contour/jawline points; which indices count as
    boundary is data supplied by the producer of the landmarks, not a fixed
    topology of this type.
    """

    points: np.ndarray
    frame_index: int = 0
    boundary_indices: tuple = ()

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"landmarks must be N×2, got shape {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("landmark set must contain at least one point")
        if not np.isfinite(pts).all():
            raise ValueError("landmarks contain non-finite values")
        bounds = tuple(int(i) for i in self.boundary_indices)
        n = pts.shape[0]
        if any(i < 0 or i >= n for i in bounds):
            raise ValueError(f"boundary indices must lie in [0, {n}), got {bounds}")
        object.__setattr__(self, "points", _freeze(pts))
        object.__setattr__(self, "boundary_indices", bounds)

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    def interior_points(self) -> np.ndarray:
        """Points with the boundary/contour indices removed."""
        keep = np.ones(self.num_points, dtype=bool)
        keep[list(self.boundary_indices)] = False
        return self.points[keep]


@dataclass(frozen=True)
class SegmentationMask:
    """Soft alpha mask, H×W in [0, 1]."""

    alpha: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.alpha, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("mask contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("mask values must lie in [0, 1]")
        object.__setattr__(self, "alpha", _freeze(arr))

    @property
    def shape(self) -> tuple:
        return self.alpha.shape


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def to_grayscale(frame: Frame) -> GrayFrame:
    """BT.601 luma: 0.299 R + 0.587 G + 0.114 B.

    Evaluated as B + 0.299·(R−B) + 0.587·(G−B), which is the same convex
    combination but passes achromatic pixels (R=G=B) through exactly instead
    of scaling them by a weight sum one ulp shy of 1.
    """
    r, g, b = frame.pixels[..., 0], frame.pixels[..., 1], frame.pixels[..., 2]
    gray = b + _LUMA_WEIGHTS[0] * (r - b) + _LUMA_WEIGHTS[1] * (g - b)
    return GrayFrame(np.clip(gray, 0.0, 1.0))


def _overlap_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic matrix whose row i holds the fractional coverage of each
    input cell by output cell i under exact area resampling."""
    scale = n_in / n_out
    lo = np.arange(n_out) * scale
    hi = lo + scale
    edges_lo = np.arange(n_in)
    overlap = np.minimum(hi[:, None], edges_lo[None, :] + 1.0) - np.maximum(lo[:, None], edges_lo[None, :])
    np.clip(overlap, 0.0, None, out=overlap)
    return overlap / scale


def resize_area(map2d: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Exact area-average resampling of a 2-D map.

    Every output cell is the area-weighted mean of the input cells it covers,
    so constants are preserved and the output range never leaves the input
    range (up to float rounding). Resizing to the identical size returns a
    bit-identical copy.
    """
    arr = np.asarray(map2d, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"resize_area expects a 2-D map, got shape {arr.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}×{out_w}")
    in_h, in_w = arr.shape
    if (in_h, in_w) == (out_h, out_w):
        return arr.copy()
    rows = _overlap_matrix(in_h, out_h)
    cols = _overlap_matrix(in_w, out_w)
    return rows @ arr @ cols.T


def frame_difference(a: GrayFrame, b: GrayFrame) -> np.ndarray:
    """Elementwise absolute luminance difference |a − b|, in [0, 1]."""
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError(
            f"size mismatch: {a.height}×{a.width} vs {b.height}×{b.width}"
        )
    return np.abs(a.intensity - b.intensity)


# ---------------------------------------------------------------------------
# File I/O
#
# A clip on disk is a directory of numbered PNGs plus a tiny JSON manifest:
#
#   clip_dir/
#     clip.json          {"fps": 25.0, "frame_count": 8}
#     frame_000000.png
#     frame_000001.png
#     ...
#
# Landmark tracks are one plain-text file per clip (see docs/formats.md):
#
#   frames <F> points <N>
#   frame <index>
#   boundary <i0> <i1> ...        (may be empty: just "boundary")
#   <x> <y>                       (N lines)
# ---------------------------------------------------------------------------

CLIP_MANIFEST = "clip.json"
FRAME_PATTERN = "frame_{:06d}.png"


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(values: np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) / 255.0


def save_frame(frame: Frame, path) -> None:
    Image.fromarray(to_uint8(frame.pixels), mode="RGB").save(path)


def load_frame(path) -> Frame:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"))
    return Frame(from_uint8(arr))


def save_gray_image(values: np.ndarray, path) -> None:
    """Save a 2-D [0, 1] map as an 8-bit grayscale PNG."""
    Image.fromarray(to_uint8(values), mode="L").save(path)


def load_gray_image(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return from_uint8(arr)


def save_clip(clip: VideoClip, clip_dir) -> None:
    clip_dir = Path(clip_dir)
    clip_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(clip.frames):
        save_frame(frame, clip_dir / FRAME_PATTERN.format(i))
    manifest = {"fps": clip.fps, "frame_count": len(clip)}
    (clip_dir / CLIP_MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")


def load_clip(clip_dir) -> VideoClip:
    clip_dir = Path(clip_dir)
    manifest_path = clip_dir / CLIP_MANIFEST
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no {CLIP_MANIFEST} in {clip_dir}")
    manifest = json.loads(manifest_path.read_text())
    count = int(manifest["frame_count"])
    frames = []
    for i in range(count):
        frame_path = clip_dir / FRAME_PATTERN.format(i)
        if not frame_path.is_file():
            raise ValueError(f"manifest promises {count} frames but {frame_path.name} is missing")
        frames.append(load_frame(frame_path))
    return VideoClip(frames=tuple(frames), fps=float(manifest["fps"]))


def save_landmark_track(track, path) -> None:
    """Write per-frame landmark sets to the plain-text track format."""
    track = list(track)
    if not track:
        raise ValueError("cannot save an empty landmark track")
    n = track[0].num_points
    lines = [f"frames {len(track)} points {n}"]
    for lm in track:
        if lm.num_points != n:
            raise ValueError("all frames in a track must share the point count")
        lines.append(f"frame {lm.frame_index}")
        lines.append(("boundary " + " ".join(str(i) for i in lm.boundary_indices)).rstrip())
        for x, y in lm.points:
            lines.append(f"{float(x)!r} {float(y)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_landmark_track(path):
    """Parse a plain-text landmark track file into a list of LandmarkSet."""
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = re.fullmatch(r"frames (\d+) points (\d+)", lines[0].strip())
    if header is None:
        raise ValueError(f"bad landmark track header: {lines[0]!r}")
    n_frames, n_points = int(header.group(1)), int(header.group(2))
    track = []
    pos = 1
    for _ in range(n_frames):
        frame_line = lines[pos].split()
        if frame_line[0] != "frame":
            raise ValueError(f"expected 'frame <idx>', got {lines[pos]!r}")
        frame_index = int(frame_line[1])
        boundary_line = lines[pos + 1].split()
        if boundary_line[0] != "boundary":
            raise ValueError(f"expected 'boundary ...', got {lines[pos + 1]!r}")
        boundary = tuple(int(i) for i in boundary_line[1:])
        pts = [tuple(float(v) for v in lines[pos + 2 + k].split()) for k in range(n_points)]
        track.append(LandmarkSet(points=np.array(pts), frame_index=frame_index,
                                 boundary_indices=boundary))
        pos += 2 + n_points
    return track


def save_mask_track(masks, mask_dir, prefix: str = "mask") -> None:
    mask_dir = Path(mask_dir)
    mask_dir.mkdir(parents=True, exist_ok=True)
    for i, mask in enumerate(masks):
        save_gray_image(mask.alpha, mask_dir / f"{prefix}_{i:06d}.png")


def load_mask_track(mask_dir, count: int | None = None, prefix: str = "mask"):
    """Load a directory of numbered mask images; count defaults to all present."""
    mask_dir = Path(mask_dir)
    if count is None:
        count = len(sorted(mask_dir.glob(f"{prefix}_*.png")))
    return [SegmentationMask(load_gray_image(mask_dir / f"{prefix}_{i:06d}.png"))
            for i in range(count)]


def clip_from_array(frames: np.ndarray, fps: float = 25.0) -> VideoClip:
    """Build a clip from an F×H×W×3 array in [0, 1]."""
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise ValueError(f"expected F×H×W×3, got shape {arr.shape}")
    return VideoClip(frames=tuple(Frame(a) for a in arr), fps=fps)
