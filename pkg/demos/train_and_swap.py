"""Miniature end-to-end run: synthesize data, train briefly, swap a head.

Everything is desk-scale small, so this finishes in about a minute on a
CPU. Output quality after a few hundred steps is crude; the point is the
moving parts, not the pictures.
"""

import time
import warnings
from pathlib import Path

from deskswap import media, pipeline, seeding, synthetic
from deskswap.diffusion import (
    CodecConfig,
    DenoiserConfig,
    NoiseSchedule,
    PatchCodec,
    SamplerConfig,
    TrainerConfig,
    init_training,
    run_training,
    sample,
    smoothed,
)

out_dir = Path(__file__).parent / "out" / "swap"
out_dir.mkdir(parents=True, exist_ok=True)
t0 = time.time()

cfg = synthetic.SynthConfig(frame_size=32, frames_per_clip=4)
samples = pipeline.synth_generate(4, seed=99, cfg=cfg)
print(f"{len(samples)} samples generated")

codec = PatchCodec(CodecConfig(patch_size=8, latent_channels=4))
examples = [pipeline.to_training_example(s, codec) for s in samples]
print("latent canvas per example:", examples[0].target_latent.shape)

dcfg = DenoiserConfig(base_width=16, depth=2, frames_per_clip=4)
tcfg = TrainerConfig(learning_rate=5e-4, batch_size=2)
sched = NoiseSchedule(num_steps=200)
state = init_training(dcfg, tcfg, seed=99)
losses = run_training(examples, state, sched, tcfg, num_steps=300)
print(f"loss {losses[0]:.3f} -> {smoothed(losses)[-1]:.3f} "
      f"after {len(losses)} steps")

# Swap: drive with one clip, take the head identity from its reference
# image. Moderate strength keeps the driving clip's layout.
target = samples[0]
rng = seeding.subsystem_rng(99, "sample")
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    swapped = sample(target.v_d, target.i_b, state, sched, codec,
                     SamplerConfig(num_inference_steps=8, strength=0.6),
                     rng=rng)
media.save_clip(swapped, out_dir)
print("swapped clip in", out_dir)

print(f"seam score driving: {pipeline.seam_energy_score(target.v_d):.3f}")
print(f"seam score swapped: {pipeline.seam_energy_score(swapped):.3f}")
print(f"total {time.time() - t0:.0f}s")
