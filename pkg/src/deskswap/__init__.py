"""deskswap: mask-free video head replacement on a toy latent-diffusion stack.

The package is organised as a library of small, independently testable
layers:

  media      frame/clip/landmark/mask carriers and file formats
  canvas     side-by-side motion+identity latent conditioning
  weighting  motion/expression weight maps and the weighted loss
  diffusion  noise schedule, patch codec, denoiser, training, sampling
  metrics    identity/pose/landmark/quality scores and report I/O
  synthetic  procedural data generator with exact annotations
  pipeline   filters, head fusion, tuple assembly, dataset layout
  cli        command-line entry points wiring the layers together
"""

__version__ = "0.1.0"

from . import canvas, media, pipeline, seeding, synthetic, weighting  # noqa: F401

__all__ = ["canvas", "media", "pipeline", "seeding", "synthetic", "weighting",
           "__version__"]
