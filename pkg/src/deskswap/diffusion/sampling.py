"""Reverse-process sampling over a clamped conditioning canvas.

The sampler runs the deterministic reverse updates over the full canvas but
re-imposes the clean reference latent on the identity half after every step,
so the identity half of the final latent is bit-identical to the encoded
reference image. The motion half can start from pure noise (strength 1.0) or
from a partially noised encoding of the content clip (strength < 1), which
keeps more of the original motion layout.

Only the denoiser evaluation runs in float32 torch; canvas arithmetic stays
in float64 numpy so the clamp comparison is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..canvas import build_canvas, clamp_identity, split_canvas
from ..media import Frame, VideoClip
from .codec import PatchCodec
from .schedule import NoiseSchedule, add_noise, inference_steps, reverse_step
from .training import TrainingState, warn_if_untrained


@dataclass(frozen=True)
class SamplerConfig:
    num_inference_steps: int = 50
    strength: float = 1.0

    def __post_init__(self):
        if self.num_inference_steps < 1:
            raise ValueError("num_inference_steps must be >= 1")
        if not (0.0 < self.strength <= 1.0):
            raise ValueError(f"strength must lie in (0, 1], got {self.strength}")


def sample(v_d: VideoClip, i_b: Frame, state: TrainingState, sched: NoiseSchedule,
           codec: PatchCodec | None = None,
           sampler_cfg: SamplerConfig = SamplerConfig(),
           rng: np.random.Generator | None = None,
           on_step=None) -> VideoClip:
    """Replace the head identity of ``v_d`` with that of reference ``i_b``.

    Encodes both inputs, builds the two-half canvas, runs the reverse loop
    with a per-step identity clamp, and decodes the motion half. The output
    clip matches ``v_d`` in frame count, size, and fps. ``on_step(t, latent)``
    is called after each clamped update with the full canvas latent, which is
    how tests observe the clamp invariant.
    """
    codec = codec or PatchCodec()
    rng = rng or np.random.default_rng(0)
    cfg_frames = state.model.config.frames_per_clip
    if len(v_d) != cfg_frames:
        raise ValueError(f"clip has {len(v_d)} frames but the model expects {cfg_frames}")
    first = v_d.frames[0]
    if (i_b.height, i_b.width) != (first.height, first.width):
        raise ValueError(
            f"reference image size {(i_b.height, i_b.width)} does not match "
            f"clip frames {(first.height, first.width)}"
        )
    warn_if_untrained(state)

    z_d = codec.encode_clip(v_d)[None]            # (1, C, F, h, w)
    z_ref = codec.encode_frame(i_b)[None]         # (1, C, h, w)

    if sampler_cfg.strength >= 1.0:
        t_start = sched.num_steps - 1
        motion0 = rng.standard_normal(z_d.shape)
    else:
        t_start = int(round(sampler_cfg.strength * (sched.num_steps - 1)))
        eps = rng.standard_normal(z_d.shape)
        motion0 = add_noise(z_d, t_start, eps, sched)
    steps = inference_steps(sched, sampler_cfg.num_inference_steps, t_start)

    canvas = build_canvas(motion0, z_ref)
    z = clamp_identity(canvas.latent, z_ref)
    mask_t = torch.from_numpy(canvas.mask).to(torch.float32)

    state.model.eval()
    with torch.no_grad():
        for i, t in enumerate(steps):
            t_prev = steps[i + 1] if i + 1 < len(steps) else -1
            latent_t = torch.from_numpy(z).to(torch.float32)
            t_t = torch.full((z.shape[0],), t, dtype=torch.long)
            eps_hat = state.model(latent_t, mask_t, t_t).numpy().astype(np.float64)
            z = reverse_step(z, t, t_prev, eps_hat, sched)
            z = clamp_identity(z, z_ref)
            if on_step is not None:
                on_step(t, z)

    motion, _ = split_canvas(
        type(canvas)(latent=z, mask=canvas.mask)
    )
    return codec.decode_clip(motion[0], fps=v_d.fps)
