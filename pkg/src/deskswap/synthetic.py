"""Procedural toy scenes for training and evaluating head swaps.

Each sample is a pair of clips that share one scene (textured background,
swaying body sprite) and one head trajectory but differ in head identity.
Identity is an 8-dimensional parameter vector controlling appearance only:
fill colour, outline shape, hair band, eye size. Because position, rotation
and mouth aperture come from the shared trajectory, the analytic landmark
tracks of the two clips are identical point for point.

Everything is rasterised in float64 and snapped to the 8-bit grid, so a
clip survives a PNG round trip bit for bit and two renders from the same
seed are byte-identical.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import media
from .media import Frame, LandmarkSet, SegmentationMask, VideoClip
from .metrics import PoseEstimate

IDENTITY_DIM = 8

# Landmark topology: 7 interior points, then 6 outline points.
LEFT_EYE = 0
RIGHT_EYE = 1
EYE_INDICES = (LEFT_EYE, RIGHT_EYE)
BOUNDARY_INDICES = (7, 8, 9, 10, 11, 12)
NUM_LANDMARKS = 13

# Interior rig in head-local units (u scales with the base horizontal
# radius, v with the vertical one; v grows downward like image rows).
_RIG_INTERIOR = np.array([
    (-0.42, -0.18),   # left eye
    (+0.42, -0.18),   # right eye
    (0.00, +0.12),    # nose tip
    (-0.38, +0.52),   # mouth left corner
    (+0.38, +0.52),   # mouth right corner
])
_OUTLINE_ANGLES_DEG = (-90.0, -30.0, 30.0, 90.0, 150.0, 210.0)

_MOUTH_CENTER_V = 0.52
_MOUTH_HALF_U = 0.38
_MOUTH_MIN_HALF_V = 0.04
_MOUTH_GAIN_HALF_V = 0.30
_MOUTH_COLOR = (0.35, 0.08, 0.10)
_EYE_COLOR = 0.08
_NOSE_RADIUS = 0.10

# Detector thresholds; the head fill is the only saturated bright region.
_SAT_THRESHOLD = 0.18
_BRIGHT_THRESHOLD = 0.5


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the procedural generator."""

    frame_size: int = 64
    frames_per_clip: int = 8
    fps: float = 8.0
    head_width: float = 0.155        # base horizontal radius / frame size
    head_aspect: float = 1.30        # vertical radius = aspect * horizontal
    min_identity_distance: float = 0.8
    min_color_gap: float = 0.25      # RGB gap between the two head colours
    background_detail: int = 6       # noise grid resolution before smoothing
    max_identity_draws: int = 200

    def __post_init__(self):
        if self.frame_size < media.MIN_FRAME_SIDE:
            raise ValueError(f"frame_size must be >= {media.MIN_FRAME_SIDE}")
        if self.frames_per_clip < 2:
            raise ValueError("need at least two frames per clip")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if not (0 < self.min_identity_distance < np.sqrt(IDENTITY_DIM)):
            raise ValueError("min_identity_distance out of range")


@dataclass(frozen=True)
class Trajectory:
    """Per-frame head state shared by both clips of a pair."""

    center_x: np.ndarray
    center_y: np.ndarray
    roll_rad: np.ndarray
    aperture: np.ndarray
    body_x: np.ndarray

    def __len__(self) -> int:
        return self.center_x.shape[0]


@dataclass(frozen=True)
class Scene:
    """Identity-independent world state: background, body, trajectory."""

    background: np.ndarray           # H x W x 3
    shoulder_row: int
    body_half_width: float
    body_slope: float
    trajectory: Trajectory
    base_rx: float
    base_ry: float


@dataclass(frozen=True)
class RenderedClip:
    clip: VideoClip
    masks: tuple
    landmarks: tuple
    identity: np.ndarray


@dataclass(frozen=True)
class SamplePair:
    """One generated sample: ground truth v_a, driving v_d, annotations."""

    v_a: VideoClip
    v_d: VideoClip
    landmarks: tuple                 # shared track, one LandmarkSet per frame
    masks_a: tuple
    masks_d: tuple
    identity_a: np.ndarray
    identity_b: np.ndarray           # driving head identity
    seed: int


def _snap_to_grid(frames: np.ndarray) -> np.ndarray:
    # quantise to the 8-bit lattice so PNG round trips are lossless
    return media.from_uint8(media.to_uint8(frames))


def head_color(identity: np.ndarray) -> np.ndarray:
    """RGB fill colour encoded by identity dims 0..2 (hue, sat, value)."""
    identity = np.asarray(identity, dtype=np.float64)
    hue = 0.08 + 0.84 * identity[0]
    sat = 0.55 + 0.35 * identity[1]
    val = 0.65 + 0.30 * identity[2]
    return np.array(colorsys.hsv_to_rgb(hue, sat, val))


def _outline_scale(identity: np.ndarray) -> float:
    return 0.95 + 0.17 * float(identity[3])


def _wobble(identity: np.ndarray) -> tuple:
    # third-harmonic radius modulation: amplitude and phase
    return 0.06 * float(identity[4]), 2.0 * np.pi * float(identity[5])


def _hair_params(identity: np.ndarray) -> tuple:
    # one dim steers both band width and darkness; they covary in practice
    band = 1.06 + 0.10 * float(identity[6])
    shade = 0.05 + 0.25 * float(identity[6])
    return band, shade


def _eye_radius(identity: np.ndarray) -> float:
    return 0.09 + 0.07 * float(identity[7])


def sample_identity(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=IDENTITY_DIM)


def identity_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b))


def draw_identity_pair(rng: np.random.Generator, cfg: SynthConfig) -> tuple:
    """Two identities separated both in parameter space and in rendered
    head colour, so the colour-matching oracle has a real decision."""
    first = sample_identity(rng)
    for _ in range(cfg.max_identity_draws):
        second = sample_identity(rng)
        far_enough = identity_distance(first, second) >= cfg.min_identity_distance
        color_gap = float(np.linalg.norm(head_color(first) - head_color(second)))
        if far_enough and color_gap >= cfg.min_color_gap:
            return first, second
    raise RuntimeError("could not draw a distinguishable identity pair; "
                       "loosen min_identity_distance or min_color_gap")


def _smooth_noise(rng: np.random.Generator, size: int, detail: int) -> np.ndarray:
    coarse = rng.standard_normal((detail, detail))
    fine = media.resize_area(coarse, size, size)
    fine = ndimage.gaussian_filter(fine, sigma=size / 24.0, mode="wrap")
    span = fine.max() - fine.min()
    if span == 0:
        return np.zeros_like(fine)
    return (fine - fine.min()) / span


def make_scene(rng: np.random.Generator, cfg: SynthConfig) -> Scene:
    """Background, body geometry and head trajectory for one sample."""
    size = cfg.frame_size
    noise = _smooth_noise(rng, size, cfg.background_detail)
    base = rng.uniform(0.45, 0.60)
    gray = base + 0.10 * (noise - 0.5)
    background = np.repeat(gray[:, :, None], 3, axis=2)

    shoulder_row = int(round(0.68 * size))
    body_half_width = rng.uniform(0.16, 0.22) * size
    body_slope = rng.uniform(0.15, 0.35)

    rx = cfg.head_width * size
    ry = cfg.head_aspect * rx

    frames = cfg.frames_per_clip
    tau = np.arange(frames, dtype=np.float64) / max(frames - 1, 1)
    sway_amp = rng.uniform(0.02, 0.05) * size
    sway_phase = rng.uniform(0.0, 2.0 * np.pi)
    body_x = 0.5 * size + sway_amp * np.sin(2.0 * np.pi * tau + sway_phase)

    head_amp = rng.uniform(0.01, 0.04) * size
    head_phase = rng.uniform(0.0, 2.0 * np.pi)
    bob_amp = rng.uniform(0.01, 0.03) * size
    bob_phase = rng.uniform(0.0, 2.0 * np.pi)
    roll_amp = np.deg2rad(rng.uniform(4.0, 12.0))
    roll_phase = rng.uniform(0.0, 2.0 * np.pi)
    mouth_phase = rng.uniform(0.0, 2.0 * np.pi)

    center_x = body_x + head_amp * np.sin(4.0 * np.pi * tau + head_phase)
    rest_y = shoulder_row - 1.15 * ry
    center_y = rest_y + bob_amp * np.sin(2.0 * np.pi * tau + bob_phase)
    roll = roll_amp * np.sin(2.0 * np.pi * tau + roll_phase)
    aperture = 0.5 + 0.5 * np.sin(4.0 * np.pi * tau + mouth_phase)

    trajectory = Trajectory(center_x=center_x, center_y=center_y,
                            roll_rad=roll, aperture=np.clip(aperture, 0.0, 1.0),
                            body_x=body_x)
    return Scene(background=background, shoulder_row=shoulder_row,
                 body_half_width=body_half_width, body_slope=body_slope,
                 trajectory=trajectory, base_rx=rx, base_ry=ry)


def _rotation(roll: float) -> np.ndarray:
    c, s = np.cos(roll), np.sin(roll)
    return np.array([[c, -s], [s, c]])


def rig_points(scene: Scene, frame_index: int) -> np.ndarray:
    """Analytic landmark positions for one frame, in (x, y) pixels."""
    traj = scene.trajectory
    m = float(traj.aperture[frame_index])
    half_v = _MOUTH_MIN_HALF_V + _MOUTH_GAIN_HALF_V * m
    local = [tuple(p) for p in _RIG_INTERIOR]
    local.append((0.0, _MOUTH_CENTER_V - half_v))   # mouth top
    local.append((0.0, _MOUTH_CENTER_V + half_v))   # mouth bottom
    for ang in np.deg2rad(_OUTLINE_ANGLES_DEG):
        local.append((np.cos(ang), np.sin(ang)))
    local = np.asarray(local, dtype=np.float64)
    offsets = local * np.array([scene.base_rx, scene.base_ry])
    rot = _rotation(float(traj.roll_rad[frame_index]))
    center = np.array([traj.center_x[frame_index], traj.center_y[frame_index]])
    return offsets @ rot.T + center


def _paint_body(canvas: np.ndarray, scene: Scene, frame_index: int) -> None:
    h, w, _ = canvas.shape
    rows = np.arange(h, dtype=np.float64)[:, None]
    cols = np.arange(w, dtype=np.float64)[None, :]
    cx = float(scene.trajectory.body_x[frame_index])
    depth = rows - scene.shoulder_row
    inside = (depth >= 0) & (np.abs(cols - cx) <= scene.body_half_width
                             + scene.body_slope * depth)
    shade = 0.20 + 0.10 * np.clip(depth, 0, None) / max(h - scene.shoulder_row, 1)
    levels = np.broadcast_to(shade, (h, w))[inside]
    canvas[inside] = np.repeat(levels[:, None], 3, axis=1)


def _paint_head(canvas: np.ndarray, scene: Scene, identity: np.ndarray,
                frame_index: int) -> np.ndarray:
    """Draw one head; returns the boolean head mask (fill plus hair)."""
    h, w, _ = canvas.shape
    traj = scene.trajectory
    cx = float(traj.center_x[frame_index])
    cy = float(traj.center_y[frame_index])
    roll = float(traj.roll_rad[frame_index])

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    c, s = np.cos(roll), np.sin(roll)
    u = (c * dx + s * dy) / scene.base_rx
    v = (-s * dx + c * dy) / scene.base_ry
    rho = np.hypot(u, v)
    phi = np.arctan2(v, u)

    scale = _outline_scale(identity)
    amp, phase = _wobble(identity)
    outline = scale + amp * np.cos(3.0 * phi + phase)
    fill = rho <= outline
    band, shade = _hair_params(identity)
    hair = (rho > outline) & (rho <= band * outline) & (v <= -0.10)

    canvas[fill] = head_color(identity)
    canvas[hair] = shade

    pts = rig_points(scene, frame_index)
    eye_r = _eye_radius(identity) * scene.base_rx
    for idx in EYE_INDICES:
        ex, ey = pts[idx]
        disk = fill & ((xs - ex) ** 2 + (ys - ey) ** 2 <= eye_r ** 2)
        canvas[disk] = _EYE_COLOR
    nx, ny = pts[2]
    nose_r = _NOSE_RADIUS * scene.base_rx
    nose = fill & ((xs - nx) ** 2 + (ys - ny) ** 2 <= nose_r ** 2)
    canvas[nose] = 0.75 * head_color(identity)

    m = float(traj.aperture[frame_index])
    half_v = _MOUTH_MIN_HALF_V + _MOUTH_GAIN_HALF_V * m
    mouth = fill & ((u / _MOUTH_HALF_U) ** 2
                    + ((v - _MOUTH_CENTER_V) / half_v) ** 2 <= 1.0)
    canvas[mouth] = _MOUTH_COLOR

    return fill | hair


def render_clip(scene: Scene, identity: np.ndarray, cfg: SynthConfig) -> RenderedClip:
    """Rasterise one identity over the shared scene."""
    identity = np.asarray(identity, dtype=np.float64)
    if identity.shape != (IDENTITY_DIM,):
        raise ValueError(f"identity must have {IDENTITY_DIM} dims, got {identity.shape}")
    frames, masks, track = [], [], []
    for f in range(cfg.frames_per_clip):
        canvas = scene.background.copy()
        _paint_body(canvas, scene, f)
        head = _paint_head(canvas, scene, identity, f)
        frames.append(_snap_to_grid(np.clip(canvas, 0.0, 1.0)))
        masks.append(SegmentationMask(head.astype(np.float64)))
        track.append(LandmarkSet(points=rig_points(scene, f), frame_index=f,
                                 boundary_indices=BOUNDARY_INDICES))
    clip = VideoClip(frames=tuple(Frame(a) for a in frames), fps=cfg.fps)
    return RenderedClip(clip=clip, masks=tuple(masks), landmarks=tuple(track),
                        identity=identity)


def generate_pair(seed: int, cfg: SynthConfig | None = None) -> SamplePair:
    """One full sample: shared scene, two identities, two rendered clips.

    The same seed always yields byte-identical output.
    """
    cfg = cfg or SynthConfig()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    scene = make_scene(rng, cfg)
    identity_a, identity_b = draw_identity_pair(rng, cfg)
    a = render_clip(scene, identity_a, cfg)
    d = render_clip(scene, identity_b, cfg)
    return SamplePair(v_a=a.clip, v_d=d.clip, landmarks=a.landmarks,
                      masks_a=a.masks, masks_d=d.masks,
                      identity_a=identity_a, identity_b=identity_b, seed=int(seed))


# ---------------------------------------------------------------------------
# Toy detectors. These measure rendered or generated frames without access
# to scene parameters, so they can score model output.
# ---------------------------------------------------------------------------

def _fill_mask(rgb: np.ndarray) -> np.ndarray:
    sat = rgb.max(axis=2) - rgb.min(axis=2)
    return (sat >= _SAT_THRESHOLD) & (rgb.max(axis=2) >= _BRIGHT_THRESHOLD)


def _mouth_mask(rgb: np.ndarray) -> np.ndarray:
    sat = rgb.max(axis=2) - rgb.min(axis=2)
    return (sat >= _SAT_THRESHOLD) & (rgb.max(axis=2) < _BRIGHT_THRESHOLD)


def estimate_landmarks(frame: Frame, frame_index: int = 0) -> LandmarkSet:
    """Recover the rig from pixels alone via second moments of the head fill.

    Works on clean renders and degrades smoothly on blurry model output;
    raises ValueError when no plausible head region exists.
    """
    rgb = frame.pixels
    fill = _fill_mask(rgb)
    if fill.sum() < 16:
        raise ValueError("no head-like region found in frame")
    ys, xs = np.nonzero(fill)
    cx, cy = xs.mean(), ys.mean()
    dx, dy = xs - cx, ys - cy
    cov = np.array([[np.mean(dx * dx), np.mean(dx * dy)],
                    [np.mean(dx * dy), np.mean(dy * dy)]])
    evals, evecs = np.linalg.eigh(cov)
    # eigh sorts ascending: minor axis first. Uniform ellipse: radius = 2*sigma.
    rx = 2.0 * np.sqrt(max(evals[0], 1e-9))
    ry = 2.0 * np.sqrt(max(evals[1], 1e-9))
    major = evecs[:, 1]
    if major[1] < 0:
        major = -major
    roll = np.arctan2(-major[0], major[1])

    mouth = _mouth_mask(rgb)
    mouth_area = float(mouth.sum())
    half_v = mouth_area / max(np.pi * _MOUTH_HALF_U * rx * ry, 1e-9)
    aperture = np.clip((half_v - _MOUTH_MIN_HALF_V) / _MOUTH_GAIN_HALF_V, 0.0, 1.0)

    half_mouth = _MOUTH_MIN_HALF_V + _MOUTH_GAIN_HALF_V * aperture
    local = [tuple(p) for p in _RIG_INTERIOR]
    local.append((0.0, _MOUTH_CENTER_V - half_mouth))
    local.append((0.0, _MOUTH_CENTER_V + half_mouth))
    for ang in np.deg2rad(_OUTLINE_ANGLES_DEG):
        local.append((np.cos(ang), np.sin(ang)))
    offsets = np.asarray(local) * np.array([rx, ry])
    rot = _rotation(float(roll))
    pts = offsets @ rot.T + np.array([cx, cy])
    return LandmarkSet(points=pts, frame_index=frame_index,
                       boundary_indices=BOUNDARY_INDICES)


def estimate_landmark_track(clip: VideoClip) -> tuple:
    return tuple(estimate_landmarks(fr, i) for i, fr in enumerate(clip.frames))


def pose_from_landmarks(lms: LandmarkSet, frame_height: int,
                        frame_width: int) -> PoseEstimate:
    """Rig-based pose reading: roll from the eye line, yaw and pitch from
    where the head sits in the frame. Same formula for ground truth and
    detected landmarks, so clean detections give near-zero pose error."""
    pts = lms.points
    ex = pts[RIGHT_EYE] - pts[LEFT_EYE]
    roll = float(np.degrees(np.arctan2(ex[1], ex[0])))
    cx, cy = pts.mean(axis=0)
    yaw = 60.0 * (2.0 * cx / frame_width - 1.0)
    pitch = 60.0 * (2.0 * cy / frame_height - 1.0)
    clamp = lambda v: float(np.clip(v, -180.0, 180.0))
    return PoseEstimate(yaw=clamp(yaw), pitch=clamp(pitch), roll=clamp(roll))


def mean_head_color(clip: VideoClip) -> np.ndarray:
    """Average fill colour across frames; the identity signal the oracle uses."""
    totals = np.zeros(3)
    count = 0
    for frame in clip.frames:
        fill = _fill_mask(frame.pixels)
        if fill.any():
            totals += frame.pixels[fill].sum(axis=0)
            count += int(fill.sum())
    if count == 0:
        raise ValueError("no head-like pixels anywhere in the clip")
    return totals / count


def classify_identity(clip: VideoClip, candidates) -> int:
    """Index of the candidate identity whose rendered head colour is nearest
    to the clip's mean head colour."""
    candidates = [np.asarray(c, dtype=np.float64) for c in candidates]
    if len(candidates) < 2:
        raise ValueError("need at least two candidate identities")
    observed = mean_head_color(clip)
    gaps = [np.linalg.norm(observed - head_color(c)) for c in candidates]
    return int(np.argmin(gaps))
