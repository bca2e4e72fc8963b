"""Motion, expression, and fused weight maps for one synthetic clip.

Writes a grey image grid (rows: motion / expression / fused, columns:
frames) next to this script.
"""

from pathlib import Path

from deskswap import media, synthetic
from deskswap.weighting import (
    WeightingConfig,
    expression_map,
    fuse_weights,
    motion_map,
    weight_grid,
)

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

pair = synthetic.generate_pair(seed=11, cfg=synthetic.SynthConfig(frame_size=64))
clip = pair.v_a
cfg = WeightingConfig()  # alpha 0.5, dilation radius 2, window 5

motion = motion_map(clip, cfg)
print("motion map:", motion.shape, "max", motion.weights.max())

# Expression bumps sit on the interior landmarks (eyes, nose, mouth) and
# ignore the head outline.
expr = expression_map(pair.landmarks, (clip.height, clip.width), cfg)
print("expression map:", expr.shape, "max", expr.weights.max())

fused = fuse_weights(motion, expr, cfg.alpha)
print("fused range: [%.3f, %.3f]" % (fused.weights.min(), fused.weights.max()))

grid = weight_grid(motion, expr, fused)
path = out_dir / "weight_grid.png"
media.save_gray_image(grid, path)
print("wrote", path)

# The loss weight is 1 + lambda * fused; with lambda = 1 the most
# emphasized pixels count double.
print("pixels above 0.5 fused weight: %.1f%%"
      % (100.0 * (fused.weights > 0.5).mean()))
