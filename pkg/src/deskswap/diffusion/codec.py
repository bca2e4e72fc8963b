"""Fixed orthonormal patch codec standing in for a learned autoencoder.

Each non-overlapping p×p×3 pixel patch is projected onto a small fixed
orthonormal basis; decoding applies the transpose. The basis is built from
separable cosine spatial modes crossed with an orthonormal color frame
(luminance plus two chroma axes). The first three channels are the per-axis
DC modes, so any constant frame reconstructs exactly; the fourth is an
isotropic first-order luminance mode that captures smooth shading gradients.

Because the basis is orthonormal, encode is the exact adjoint of decode and
decode(encode(x)) is the orthogonal projection of x onto the retained
subspace: deterministic, linear, and idempotent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..media import Frame, VideoClip, clip_from_array

# Orthonormal color frame: rows are luminance, blue-red difference, and a
# green-vs-mean axis.
_COLOR_AXES = np.array([
    [1.0, 1.0, 1.0],
    [1.0, 0.0, -1.0],
    [1.0, -2.0, 1.0],
])
_COLOR_AXES = _COLOR_AXES / np.linalg.norm(_COLOR_AXES, axis=1, keepdims=True)


def _cosine_mode(n: int, k: int) -> np.ndarray:
    """Orthonormal 1-D DCT-II basis vector of order k on n samples."""
    i = np.arange(n)
    if k == 0:
        return np.full(n, np.sqrt(1.0 / n))
    return np.sqrt(2.0 / n) * np.cos(np.pi * (2 * i + 1) * k / (2 * n))


def _basis_modes(patch: int, count: int) -> np.ndarray:
    """The first ``count`` basis patches, each of shape (patch, patch, 3)."""
    f0 = _cosine_mode(patch, 0)
    f1 = _cosine_mode(patch, 1)
    s00 = np.outer(f0, f0)
    s01 = np.outer(f0, f1)
    s10 = np.outer(f1, f0)
    s11 = np.outer(f1, f1)
    s_iso = (s01 + s10) / np.sqrt(2.0)
    s_anti = (s01 - s10) / np.sqrt(2.0)
    lum, c1, c2 = _COLOR_AXES
    ordered = [
        (s00, lum), (s00, c1), (s00, c2),
        (s_iso, lum),
        (s_anti, lum), (s11, lum),
        (s_iso, c1), (s_iso, c2),
    ]
    if count > len(ordered):
        raise ValueError(f"codec supports at most {len(ordered)} latent channels")
    return np.stack([spatial[..., None] * color for spatial, color in ordered[:count]])


@dataclass(frozen=True)
class CodecConfig:
    patch_size: int = 8
    latent_channels: int = 4

    def __post_init__(self):
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")
        if self.latent_channels < 1:
            raise ValueError("latent_channels must be >= 1")


class PatchCodec:
    """Encode/decode between [0,1] RGB pixels and low-channel latents."""

    def __init__(self, config: CodecConfig = CodecConfig()):
        self.config = config
        basis = _basis_modes(config.patch_size, config.latent_channels)
        basis.flags.writeable = False
        self.basis = basis

    # -- raw array layer --------------------------------------------------

    def _check_size(self, h: int, w: int):
        p = self.config.patch_size
        if h % p or w % p:
            raise ValueError(f"spatial size {h}×{w} not divisible by patch size {p}")

    def encode_array(self, arr: np.ndarray) -> np.ndarray:
        """(H, W, 3) pixels → (C, H/p, W/p) latent."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected H×W×3, got shape {arr.shape}")
        h, w, _ = arr.shape
        self._check_size(h, w)
        p = self.config.patch_size
        patches = arr.reshape(h // p, p, w // p, p, 3)
        return np.einsum("ipjqc,kpqc->kij", patches, self.basis)

    def decode_array(self, latent: np.ndarray) -> np.ndarray:
        """(C, h, w) latent → (H, W, 3) pixels, unclipped."""
        latent = np.asarray(latent, dtype=np.float64)
        if latent.ndim != 3 or latent.shape[0] != self.config.latent_channels:
            raise ValueError(
                f"expected ({self.config.latent_channels}, h, w) latent, got shape {latent.shape}"
            )
        p = self.config.patch_size
        _, lh, lw = latent.shape
        patches = np.einsum("kij,kpqc->ipjqc", latent, self.basis)
        return patches.reshape(lh * p, lw * p, 3)

    # -- typed layer -------------------------------------------------------

    def encode_frame(self, frame: Frame) -> np.ndarray:
        return self.encode_array(frame.pixels)

    def decode_frame(self, latent: np.ndarray) -> Frame:
        return Frame(np.clip(self.decode_array(latent), 0.0, 1.0))

    def encode_clip(self, clip: VideoClip) -> np.ndarray:
        """VideoClip → (C, F, h, w) latent."""
        return np.stack([self.encode_frame(f) for f in clip.frames], axis=1)

    def decode_clip(self, latent: np.ndarray, fps: float) -> VideoClip:
        latent = np.asarray(latent)
        if latent.ndim != 4:
            raise ValueError(f"expected (C, F, h, w) latent, got shape {latent.shape}")
        frames = np.stack([
            np.clip(self.decode_array(latent[:, t]), 0.0, 1.0)
            for t in range(latent.shape[1])
        ])
        return clip_from_array(frames, fps=fps)

    def encode(self, item):
        """Dispatch on Frame vs VideoClip."""
        if isinstance(item, Frame):
            return self.encode_frame(item)
        if isinstance(item, VideoClip):
            return self.encode_clip(item)
        raise TypeError(f"cannot encode {type(item).__name__}")

    @property
    def downsample_factor(self) -> int:
        return self.config.patch_size

    def latent_size(self, height: int, width: int) -> tuple:
        self._check_size(height, width)
        p = self.config.patch_size
        return height // p, width // p
