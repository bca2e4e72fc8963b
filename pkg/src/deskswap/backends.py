"""Pluggable embedding/feature backends plus deterministic built-in stubs.

The metric layer never hard-codes a specific pretrained network. It talks to
two small interfaces:

  * an embedding backend maps a Frame to a unit-norm identity vector;
  * a feature backend maps a Frame to a finite feature vector for
    perceptual-distance and distribution metrics.

Two stub implementations ship in-process so the whole evaluation protocol
runs without downloading any model: a multi-scale color/gradient histogram
(embedding) and a fixed random orthogonal projection of downsampled pixels
(features). Real networks plug in either as Python objects satisfying the
same duck type or as external executables speaking the line protocol
implemented by the adapter classes below (see docs/formats.md).
"""

from __future__ import annotations

import shlex
import subprocess

import numpy as np

from .media import Frame, resize_area, to_grayscale

UNIT_NORM_TOL = 1e-6


# ---------------------------------------------------------------------------
# Built-in stubs
# ---------------------------------------------------------------------------

class HistogramEmbedding:
    """Identity embedding stub: multi-scale color and gradient histograms.

    Per scale, an 8-bin histogram of each RGB channel plus an 8-bin histogram
    of the gray-gradient magnitude, all concatenated and L2-normalized. Crude,
    but it separates the synthetic identities (which differ mostly in color
    statistics) and it is fully deterministic.
    """

    name = "histogram"
    bins = 8
    scales = (32, 8)

    @property
    def dim(self) -> int:
        return (3 + 1) * self.bins * len(self.scales)

    def embed(self, frame: Frame) -> np.ndarray:
        parts = []
        for scale in self.scales:
            chans = [resize_area(frame.pixels[..., c], scale, scale) for c in range(3)]
            for chan in chans:
                hist, _ = np.histogram(chan, bins=self.bins, range=(0.0, 1.0))
                parts.append(hist / chan.size)
            gray = resize_area(to_grayscale(frame).intensity, scale, scale)
            gy, gx = np.gradient(gray)
            mag = np.hypot(gx, gy)
            hist, _ = np.histogram(mag, bins=self.bins, range=(0.0, 1.0))
            parts.append(hist / mag.size)
        vec = np.concatenate(parts)
        norm = np.linalg.norm(vec)
        # Histograms of a nonempty image always have positive mass.
        return vec / norm


class ProjectionFeatures:
    """Feature stub: fixed random orthogonal projection of downsampled pixels.

    Frames are area-resampled to 16×16 RGB, flattened, and projected onto a
    fixed set of orthonormal directions drawn once from a hard-coded seed.
    Linear, deterministic, and distance-preserving on its range.
    """

    name = "projection"
    side = 16
    dim = 32
    _seed = 1404

    def __init__(self):
        rng = np.random.default_rng(self._seed)
        raw = rng.standard_normal((self.side * self.side * 3, self.dim))
        q, _ = np.linalg.qr(raw)
        self._projection = q.T.copy()          # (dim, 768), orthonormal rows
        self._projection.flags.writeable = False

    def features(self, frame: Frame) -> np.ndarray:
        small = np.stack(
            [resize_area(frame.pixels[..., c], self.side, self.side) for c in range(3)],
            axis=-1,
        )
        return self._projection @ small.ravel()


# ---------------------------------------------------------------------------
# External executable adapters
# ---------------------------------------------------------------------------

class _ExecutableAdapter:
    """Line protocol: `frame H W` + one line of H·W·3 floats per request;
    the executable answers with one line of vector components. One process
    serves many frames; it exits on EOF."""

    def __init__(self, command: str):
        self.command = command
        self._proc = None

    def _ensure(self):
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                shlex.split(self.command),
                stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True,
            )
        return self._proc

    def request(self, frame: Frame) -> np.ndarray:
        proc = self._ensure()
        pixels = frame.pixels
        header = f"frame {frame.height} {frame.width}\n"
        body = " ".join(repr(v) for v in pixels.ravel().tolist()) + "\n"
        proc.stdin.write(header + body)
        proc.stdin.flush()
        reply = proc.stdout.readline()
        if not reply:
            raise RuntimeError(f"backend process {self.command!r} closed its output")
        vec = np.array([float(v) for v in reply.split()])
        if vec.size == 0 or not np.isfinite(vec).all():
            raise ValueError(f"backend {self.command!r} returned an invalid vector")
        return vec

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
        self._proc = None


class ExecutableEmbedding:
    """Unit-norm identity embeddings served by an external process."""

    def __init__(self, command: str):
        self.name = f"exec:{command}"
        self._adapter = _ExecutableAdapter(command)

    def embed(self, frame: Frame) -> np.ndarray:
        vec = self._adapter.request(frame)
        norm = np.linalg.norm(vec)
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise ValueError(f"embedding backend returned norm {norm}, expected 1")
        return vec

    def close(self):
        self._adapter.close()


class ExecutableFeatures:
    """Feature vectors served by an external process."""

    def __init__(self, command: str):
        self.name = f"exec:{command}"
        self._adapter = _ExecutableAdapter(command)

    def features(self, frame: Frame) -> np.ndarray:
        return self._adapter.request(frame)

    def close(self):
        self._adapter.close()


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

def get_embedding_backend(spec: str = "histogram"):
    """Resolve a backend name: built-in stub or `exec:<command line>`."""
    if spec == "histogram":
        return HistogramEmbedding()
    if spec.startswith("exec:"):
        return ExecutableEmbedding(spec[len("exec:"):])
    raise ValueError(f"unknown embedding backend {spec!r} (try 'histogram' or 'exec:<cmd>')")


def get_feature_backend(spec: str = "projection"):
    if spec == "projection":
        return ProjectionFeatures()
    if spec.startswith("exec:"):
        return ExecutableFeatures(spec[len("exec:"):])
    raise ValueError(f"unknown feature backend {spec!r} (try 'projection' or 'exec:<cmd>')")
