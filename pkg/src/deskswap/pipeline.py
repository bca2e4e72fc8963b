"""Dataset construction: filters, compositing, sample tuples, disk layout.

A training sample pairs a driving clip (the motion to follow) with a ground
truth clip (the same scene wearing the desired head) plus one reference
frame carrying that head's identity. Samples only become tuples after two
gates pass: a landmark-alignment gate between the two tracks and a realism
gate on the driving clip. Both gates accept at their threshold exactly.

On disk a dataset is::

    dataset/
      manifest.txt                    one line per sample: id + gate scores
      <sample_id>/
        v_a/  v_d/                    PNG clip directories
        i_b.png                       reference identity frame
        landmarks_a.txt  landmarks_d.txt
        masks/                        driving-clip head masks
        meta.txt                      flat key=value provenance
"""

from __future__ import annotations

import logging
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import media, seeding, synthetic, weighting
from .media import Frame, VideoClip
from .metrics import landmark_nme

log = logging.getLogger("deskswap.pipeline")

ALIGNMENT_THRESHOLD = 0.3
REALISM_THRESHOLD = 0.7
MAX_GENERATION_ATTEMPTS = 5

SAMPLE_META = "meta.txt"
DATASET_MANIFEST = "manifest.txt"

# e-folding scale for the seam-energy realism heuristic, chosen so clean
# renders of the synthetic world score around 0.85-0.9 at the reference
# resolution; energies are rescaled as if measured at that resolution,
# since edge pixels make up a perimeter/area fraction that shrinks with size
_SEAM_ENERGY_SCALE = 0.02
_SEAM_REFERENCE_SIDE = 64.0


# ---------------------------------------------------------------------------
# Gates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlignmentReport:
    """Outcome of the landmark-alignment gate; accepts when nme <= threshold."""

    nme: float
    threshold: float
    accepted: bool


@dataclass(frozen=True)
class RealismScore:
    """Outcome of the realism gate; accepts when p_real >= threshold."""

    p_real: float
    threshold: float
    accepted: bool

    def __post_init__(self):
        if not (0.0 <= self.p_real <= 1.0):
            raise ValueError(f"p_real must lie in [0, 1], got {self.p_real}")


def nme_alignment_filter(lms_a, lms_b,
                         threshold: float = ALIGNMENT_THRESHOLD,
                         eye_indices=None) -> AlignmentReport:
    """Gate on the normalized mean error between two landmark tracks.

    Pure: same inputs, same report. Equality with the threshold accepts.
    """
    nme = landmark_nme(lms_a, lms_b, eye_indices=eye_indices)
    return AlignmentReport(nme=nme, threshold=float(threshold),
                           accepted=nme <= threshold)


def seam_energy_score(clip: VideoClip) -> float:
    """Stand-in realism scorer: mean squared luminance gradient, mapped to
    (0, 1] by an exponential. Hard-pasted composites carry more seam energy
    than feathered ones, so they score lower; clean renders score high.
    """
    total = 0.0
    for frame in clip.frames:
        lum = media.to_grayscale(frame).intensity
        gy, gx = np.gradient(lum)
        total += float(np.mean(gx * gx + gy * gy))
    energy = total / len(clip)
    energy *= min(clip.height, clip.width) / _SEAM_REFERENCE_SIDE
    return float(np.exp(-energy / _SEAM_ENERGY_SCALE))


def realism_filter(score_fn, clip: VideoClip,
                   threshold: float = REALISM_THRESHOLD) -> RealismScore:
    """Gate a clip on a realism score in [0, 1]; equality accepts."""
    p_real = float(score_fn(clip))
    if not np.isfinite(p_real):
        raise ValueError("realism scorer returned a non-finite value")
    return RealismScore(p_real=p_real, threshold=float(threshold),
                        accepted=p_real >= threshold)


# ---------------------------------------------------------------------------
# Feathered compositing
# ---------------------------------------------------------------------------

def feather_mask(alpha: np.ndarray, radius: int = 3) -> np.ndarray:
    """Soften a mask with a Gaussian whose support half-width equals
    ``radius`` pixels (sigma = radius/2, truncated at two sigma).

    Pixels farther than ``radius`` from the mask boundary are forced to
    exactly 0 or 1, so only a band of that width ever blends.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {alpha.shape}")
    if radius < 0:
        raise ValueError("feather radius must be >= 0")
    if radius == 0:
        return alpha.copy()
    blurred = ndimage.gaussian_filter(alpha, sigma=radius / 2.0, truncate=2.0,
                                      mode="nearest")
    out = np.clip(blurred, 0.0, 1.0)
    size = 2 * radius + 1
    out[ndimage.minimum_filter(alpha, size=size, mode="nearest") >= 1.0] = 1.0
    out[ndimage.maximum_filter(alpha, size=size, mode="nearest") <= 0.0] = 0.0
    return out


def head_fusion(v_b: VideoClip, v_a: VideoClip, masks_b,
                feather_radius: int = 3) -> VideoClip:
    """Paste the masked region of ``v_b`` onto ``v_a`` through a feathered
    mask. Per pixel the result is a convex combination of the two sources:
    mask zeros reproduce ``v_a`` exactly, mask interiors reproduce ``v_b``.
    """
    masks_b = list(masks_b)
    if len(v_b) != len(v_a) or len(masks_b) != len(v_a):
        raise ValueError(f"clip/mask lengths differ: {len(v_b)}, {len(v_a)}, "
                         f"{len(masks_b)}")
    if (v_b.height, v_b.width) != (v_a.height, v_a.width):
        raise ValueError(f"frame sizes differ: {v_b.height}x{v_b.width} vs "
                         f"{v_a.height}x{v_a.width}")
    fused = []
    for fb, fa, mask in zip(v_b.frames, v_a.frames, masks_b):
        if mask.shape != fa.pixels.shape[:2]:
            raise ValueError(f"mask shape {mask.shape} does not match frame "
                             f"{fa.pixels.shape[:2]}")
        w = feather_mask(mask.alpha, feather_radius)[:, :, None]
        a, b = fa.pixels, fb.pixels
        blend = a + w * (b - a)
        blend = np.where(w == 1.0, b, np.where(w == 0.0, a, blend))
        # clamp out float round-off so convexity is structural
        blend = np.clip(blend, np.minimum(a, b), np.maximum(a, b))
        fused.append(Frame(blend))
    return VideoClip(frames=tuple(fused), fps=v_a.fps)


# ---------------------------------------------------------------------------
# Sample tuples
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Provenance:
    """Where a sample came from and which gates it passed."""

    source_id: str
    seeds: dict = field(default_factory=dict)
    filter_scores: dict = field(default_factory=dict)
    reference_policy: str = "first"
    reference_frame: int = 0
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PairedSample:
    """A filtered training tuple: driving clip, reference frame, ground
    truth clip, landmark tracks for both sides, driving head masks."""

    v_d: VideoClip
    i_b: Frame
    v_a: VideoClip
    landmarks_a: tuple
    landmarks_d: tuple
    masks_d: tuple
    provenance: Provenance

    def __post_init__(self):
        n = len(self.v_a)
        if len(self.v_d) != n:
            raise ValueError(f"clip lengths differ: v_d {len(self.v_d)} vs v_a {n}")
        if len(self.landmarks_a) != n or len(self.landmarks_d) != n:
            raise ValueError("landmark tracks must cover every frame")
        if self.masks_d and len(self.masks_d) != n:
            raise ValueError("mask track must cover every frame")
        ref_size = (self.i_b.height, self.i_b.width)
        clip_size = (self.v_a.height, self.v_a.width)
        if ref_size != clip_size:
            raise ValueError(f"reference frame {ref_size} does not match "
                             f"clips {clip_size}")


def make_tuple(v_d: VideoClip, v_a: VideoClip, landmarks_a, landmarks_d,
               alignment: AlignmentReport | None = None,
               realism: RealismScore | None = None, *,
               masks_d=(), reference_policy: str = "first",
               seed: int | None = None,
               source_id: str = "unsourced") -> PairedSample:
    """Assemble a sample tuple from filtered inputs.

    Refuses unfiltered or rejected inputs. The reference frame comes from
    ``v_a``: frame 0 under the ``first`` policy, or a seeded uniform draw
    under ``random`` with the seed recorded in provenance.
    """
    if alignment is None or realism is None:
        raise ValueError("unfiltered inputs: run nme_alignment_filter and "
                         "realism_filter first and pass both reports")
    if not alignment.accepted:
        raise ValueError(f"alignment gate rejected this pair "
                         f"(nme {alignment.nme!r} > {alignment.threshold!r})")
    if not realism.accepted:
        raise ValueError(f"realism gate rejected this pair "
                         f"(p_real {realism.p_real!r} < {realism.threshold!r})")

    seeds = {}
    if reference_policy == "first":
        ref_frame = 0
    elif reference_policy == "random":
        if seed is None:
            raise ValueError("reference_policy='random' needs a seed")
        rng = seeding.subsystem_rng(int(seed), "data")
        ref_frame = int(rng.integers(0, len(v_a)))
        seeds["reference"] = int(seed)
    else:
        raise ValueError(f"unknown reference policy {reference_policy!r}; "
                         f"choose 'first' or 'random'")

    prov = Provenance(source_id=source_id, seeds=seeds,
                      filter_scores={
                          "alignment_nme": float(alignment.nme),
                          "alignment_threshold": float(alignment.threshold),
                          "realism": float(realism.p_real),
                          "realism_threshold": float(realism.threshold),
                      },
                      reference_policy=reference_policy,
                      reference_frame=ref_frame)
    return PairedSample(v_d=v_d, i_b=v_a.frames[ref_frame], v_a=v_a,
                        landmarks_a=tuple(landmarks_a),
                        landmarks_d=tuple(landmarks_d),
                        masks_d=tuple(masks_d), provenance=prov)


# ---------------------------------------------------------------------------
# Disk layout
# ---------------------------------------------------------------------------

def _meta_lines(prov: Provenance, fps: float) -> str:
    lines = [f"source_id={prov.source_id}",
             f"reference_policy={prov.reference_policy}",
             f"reference_frame={prov.reference_frame}",
             f"fps={float(fps)!r}"]
    for key in sorted(prov.seeds):
        lines.append(f"seed.{key}={int(prov.seeds[key])}")
    for key in sorted(prov.filter_scores):
        lines.append(f"score.{key}={float(prov.filter_scores[key])!r}")
    for key in sorted(prov.extras):
        lines.append(f"extra.{key}={prov.extras[key]}")
    return "\n".join(lines) + "\n"


def _parse_meta(text: str) -> dict:
    fields = {"seeds": {}, "filter_scores": {}, "extras": {}}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"meta line {lineno} is not key=value: {raw!r}")
        key, value = line.split("=", 1)
        if key.startswith("seed."):
            fields["seeds"][key[5:]] = int(value)
        elif key.startswith("score."):
            fields["filter_scores"][key[6:]] = float(value)
        elif key.startswith("extra."):
            fields["extras"][key[6:]] = value
        else:
            fields[key] = value
    return fields


def save_sample(sample: PairedSample, sample_dir) -> None:
    sample_dir = Path(sample_dir)
    sample_dir.mkdir(parents=True, exist_ok=True)
    media.save_clip(sample.v_a, sample_dir / "v_a")
    media.save_clip(sample.v_d, sample_dir / "v_d")
    media.save_frame(sample.i_b, sample_dir / "i_b.png")
    media.save_landmark_track(sample.landmarks_a, sample_dir / "landmarks_a.txt")
    media.save_landmark_track(sample.landmarks_d, sample_dir / "landmarks_d.txt")
    if sample.masks_d:
        media.save_mask_track(sample.masks_d, sample_dir / "masks")
    (sample_dir / SAMPLE_META).write_text(
        _meta_lines(sample.provenance, sample.v_a.fps))


def load_sample(sample_dir) -> PairedSample:
    sample_dir = Path(sample_dir)
    meta_path = sample_dir / SAMPLE_META
    if not meta_path.is_file():
        raise FileNotFoundError(f"no {SAMPLE_META} in {sample_dir}")
    meta = _parse_meta(meta_path.read_text())
    v_a = media.load_clip(sample_dir / "v_a")
    v_d = media.load_clip(sample_dir / "v_d")
    i_b = media.load_frame(sample_dir / "i_b.png")
    lms_a = tuple(media.load_landmark_track(sample_dir / "landmarks_a.txt"))
    lms_d = tuple(media.load_landmark_track(sample_dir / "landmarks_d.txt"))
    mask_dir = sample_dir / "masks"
    masks = tuple(media.load_mask_track(mask_dir)) if mask_dir.is_dir() else ()
    prov = Provenance(source_id=meta.get("source_id", "unsourced"),
                      seeds=meta["seeds"], filter_scores=meta["filter_scores"],
                      reference_policy=meta.get("reference_policy", "first"),
                      reference_frame=int(meta.get("reference_frame", 0)),
                      extras=meta["extras"])
    return PairedSample(v_d=v_d, i_b=i_b, v_a=v_a, landmarks_a=lms_a,
                        landmarks_d=lms_d, masks_d=masks, provenance=prov)


def write_dataset(samples, root) -> list:
    """Write samples plus a manifest; returns the sample ids in order."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    ids = []
    lines = []
    for i, sample in enumerate(samples):
        sid = f"sample_{i:05d}"
        save_sample(sample, root / sid)
        scores = sample.provenance.filter_scores
        lines.append(f"{sid} alignment={float(scores['alignment_nme'])!r} "
                     f"realism={float(scores['realism'])!r}")
        ids.append(sid)
    (root / DATASET_MANIFEST).write_text("\n".join(lines) + "\n")
    return ids


def load_dataset(root) -> list:
    """Read a dataset back as ``[(sample_id, PairedSample), ...]``.

    A missing root or manifest raises FileNotFoundError; anything broken
    below the manifest raises ValueError naming the offending sample.
    """
    root = Path(root)
    manifest_path = root / DATASET_MANIFEST
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no {DATASET_MANIFEST} in {root}")
    out = []
    for lineno, raw in enumerate(manifest_path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if not parts or any("=" not in p for p in parts[1:]) or len(parts) != 3:
            raise ValueError(f"malformed manifest line {lineno}: {raw!r}")
        sid = parts[0]
        try:
            out.append((sid, load_sample(root / sid)))
        except FileNotFoundError as exc:
            raise ValueError(f"manifest lists {sid} but its files are "
                             f"incomplete: {exc}") from exc
    if not out:
        raise ValueError(f"{manifest_path} lists no samples")
    return out


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

def synth_generate(n_samples: int, seed: int,
                   cfg: synthetic.SynthConfig | None = None,
                   reference_policy: str = "first") -> list:
    """Generate filtered samples from the procedural world.

    Each sample gets up to MAX_GENERATION_ATTEMPTS consecutive seeds; a
    candidate failing a gate is logged and retried, and a slot exhausting
    its attempts is skipped with a log line. Deterministic for a given
    root seed.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    cfg = cfg or synthetic.SynthConfig()
    seq = seeding.subsystem_seed(int(seed), "data")
    base = int(seq.generate_state(1, dtype=np.uint64)[0])
    samples = []
    for index in range(n_samples):
        slot_seed = base + index * MAX_GENERATION_ATTEMPTS
        for attempt in range(MAX_GENERATION_ATTEMPTS):
            pair_seed = slot_seed + attempt
            pair = synthetic.generate_pair(pair_seed, cfg)
            alignment = nme_alignment_filter(pair.landmarks, pair.landmarks,
                                             eye_indices=synthetic.EYE_INDICES)
            realism = realism_filter(seam_energy_score, pair.v_d)
            if alignment.accepted and realism.accepted:
                break
            log.warning("sample %d attempt %d failed gates "
                        "(nme=%r accepted=%s, p_real=%r accepted=%s); retrying",
                        index, attempt, alignment.nme, alignment.accepted,
                        realism.p_real, realism.accepted)
        else:
            log.warning("sample %d skipped after %d attempts", index,
                        MAX_GENERATION_ATTEMPTS)
            continue
        sample = make_tuple(pair.v_d, pair.v_a, pair.landmarks, pair.landmarks,
                            alignment, realism, masks_d=pair.masks_d,
                            reference_policy=reference_policy, seed=pair_seed,
                            source_id=f"synth-{pair_seed}")
        ident_a = " ".join(repr(float(v)) for v in pair.identity_a)
        ident_b = " ".join(repr(float(v)) for v in pair.identity_b)
        prov = Provenance(source_id=sample.provenance.source_id,
                          seeds={**sample.provenance.seeds, "sample": pair_seed},
                          filter_scores=sample.provenance.filter_scores,
                          reference_policy=sample.provenance.reference_policy,
                          reference_frame=sample.provenance.reference_frame,
                          extras={"identity_a": ident_a, "identity_b": ident_b})
        samples.append(PairedSample(v_d=sample.v_d, i_b=sample.i_b,
                                    v_a=sample.v_a,
                                    landmarks_a=sample.landmarks_a,
                                    landmarks_d=sample.landmarks_d,
                                    masks_d=sample.masks_d, provenance=prov))
    return samples


def identity_vectors(sample: PairedSample) -> tuple:
    """Recover the generator's identity vectors from provenance extras."""
    extras = sample.provenance.extras
    if "identity_a" not in extras or "identity_b" not in extras:
        raise ValueError("sample provenance carries no identity vectors")
    parse = lambda s: np.array([float(v) for v in s.split()])
    return parse(extras["identity_a"]), parse(extras["identity_b"])


# ---------------------------------------------------------------------------
# Bridges
# ---------------------------------------------------------------------------

def to_training_example(sample: PairedSample, codec,
                        cfg: weighting.WeightingConfig | None = None):
    """Encode a sample for the trainer: latents plus fused loss weights."""
    from .diffusion import TrainingExample  # defers the torch import

    cfg = cfg or weighting.WeightingConfig()
    h, w = sample.v_a.height, sample.v_a.width
    motion = weighting.motion_map(sample.v_a, cfg)
    expression = weighting.expression_map(sample.landmarks_a, (h, w), cfg)
    fused = weighting.fuse_weights(motion, expression, cfg.alpha)
    target = codec.encode_clip(sample.v_a)
    latent = weighting.to_latent_weights(fused, target.shape[1:])
    return TrainingExample(target_latent=target,
                           reference_latent=codec.encode_frame(sample.i_b),
                           loss_weights=latent.weights)


def run_clip_editor(command: str, clip: VideoClip, workdir=None) -> VideoClip:
    """Send a clip through an external editor process.

    The editor is invoked as ``<command> <in_dir> <out_dir>`` where in_dir
    holds the clip in the standard PNG layout; it must write an edited clip
    to out_dir in the same layout and exit 0.
    """
    argv = shlex.split(command)
    if not argv:
        raise ValueError("empty editor command")
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        in_dir = Path(tmp) / "in"
        out_dir = Path(tmp) / "out"
        media.save_clip(clip, in_dir)
        out_dir.mkdir()
        proc = subprocess.run(argv + [str(in_dir), str(out_dir)],
                              capture_output=True, text=True)
        if proc.returncode != 0:
            tail = proc.stderr.strip().splitlines()[-3:]
            raise RuntimeError(f"clip editor exited {proc.returncode}: "
                               + " | ".join(tail))
        return media.load_clip(out_dir)
