"""Width-concatenated conditioning canvases for identity-conditioned video latents.

A latent video tensor is a 5-axis array with fixed axis semantics
(batch, channel, frame, height, width). The conditioning canvas places the
video latent on the left half (the *motion canvas*, the part being generated)
and the reference-image latent, replicated over the frame axis, on the right
half (the *identity canvas*, which is held fixed). A binary indicator mask
with the same layout (ones over the motion half, zeros over the identity half)
travels with the canvas; it is a function of shape alone and is fed to the
denoiser as an extra input channel.

All functions are pure: inputs are never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LATENT_AXES = ("batch", "channel", "frame", "height", "width")


def _check_latent(arr: np.ndarray, name: str, ndim: int) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must have {ndim} axes {LATENT_AXES[:ndim]}, got shape {arr.shape}")
    if any(s < 1 for s in arr.shape):
        raise ValueError(f"{name} has an empty axis: shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class ConditioningCanvas:
    """Latent canvas of width 2·W plus its binary motion/identity indicator.

    Invariants: ``mask`` is (B, 1, F, H, 2W) with the left half all ones and
    the right half all zeros; the right half of ``latent`` is constant along
    the frame axis (it is a replicated reference latent).
    """

    latent: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        latent = _check_latent(self.latent, "latent", 5)
        width = latent.shape[4]
        if width % 2 != 0:
            raise ValueError(f"canvas width must be even, got {width}")
        expected = indicator_mask(latent.shape[0], latent.shape[2], latent.shape[3], width // 2)
        mask = np.asarray(self.mask)
        if mask.shape != expected.shape or not np.array_equal(mask, expected):
            raise ValueError("mask must be ones over the motion half, zeros over the identity half")

    @property
    def half_width(self) -> int:
        return self.latent.shape[4] // 2


def indicator_mask(batch: int, frames: int, height: int, half_width: int) -> np.ndarray:
    """The (B, 1, F, H, 2W) canvas indicator: ones left, zeros right.

    Depends only on the requested shape, never on latent contents.
    """
    mask = np.zeros((batch, 1, frames, height, 2 * half_width))
    mask[..., :half_width] = 1.0
    return mask


def build_canvas(z_video: np.ndarray, z_reference: np.ndarray) -> ConditioningCanvas:
    """Concatenate a video latent and a frame-replicated reference latent along width.

    ``z_video`` is (B, C, F, H, W); ``z_reference`` is (B, C, H, W) and is
    replicated across the frame axis before concatenation, giving a canvas of
    shape (B, C, F, H, 2W).
    """
    z_video = _check_latent(z_video, "z_video", 5)
    z_reference = _check_latent(z_reference, "z_reference", 4)
    b, c, f, h, w = z_video.shape
    if z_reference.shape != (b, c, h, w):
        raise ValueError(
            f"reference latent shape {z_reference.shape} does not match video "
            f"latent {(b, c, h, w)} on (batch, channel, height, width)"
        )
    replicated = np.broadcast_to(z_reference[:, :, None], (b, c, f, h, w))
    latent = np.concatenate([z_video, replicated], axis=4)
    return ConditioningCanvas(latent=latent, mask=indicator_mask(b, f, h, w))


def split_canvas(canvas: ConditioningCanvas) -> tuple:
    """Split a canvas back into its motion and identity halves.

    Returns ``(motion, identity)`` where both are (B, C, F, H, W) copies;
    ``split_canvas(build_canvas(a, b))`` gives back ``a`` and the replication
    of ``b`` bit-exactly.
    """
    latent = _check_latent(canvas.latent, "canvas latent", 5)
    width = latent.shape[4]
    if width % 2 != 0:
        raise ValueError(f"canvas width must be even, got {width}")
    half = width // 2
    return latent[..., :half].copy(), latent[..., half:].copy()


def clamp_identity(canvas_state: np.ndarray, clean_identity: np.ndarray) -> np.ndarray:
    """Overwrite the identity half of a canvas-state latent with a clean reference.

    ``canvas_state`` is (B, C, F, H, 2W); ``clean_identity`` may be given with
    or without the frame axis ((B, C, F, H, W) or (B, C, H, W)). The motion
    half is returned untouched. Applying the clamp twice equals applying it
    once.
    """
    state = _check_latent(canvas_state, "canvas_state", 5)
    ident = np.asarray(clean_identity)
    if ident.ndim == 4:
        ident = np.broadcast_to(ident[:, :, None], state.shape[:4] + (ident.shape[3],))
    ident = _check_latent(ident, "clean_identity", 5)
    b, c, f, h, w2 = state.shape
    if w2 != 2 * ident.shape[4] or ident.shape[:4] != (b, c, f, h):
        raise ValueError(
            f"identity latent shape {ident.shape} is not half the width of "
            f"canvas state {state.shape}"
        )
    out = state.copy()
    out[..., ident.shape[4]:] = ident
    return out
