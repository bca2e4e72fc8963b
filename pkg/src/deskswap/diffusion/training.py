"""Training loop: noise the motion canvas, predict it, weighted MSE, Adam.

Each step draws a batch of pre-encoded examples, noises the motion half of
their canvases at uniformly sampled timesteps (the identity half stays
clean), and supervises the predicted noise on the motion half only, weighted
by the fused motion/expression map. All randomness flows through one numpy
generator owned by the training state, and that generator's exact state is
checkpointed, so a resumed run reproduces the loss trajectory of an
uninterrupted one.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .. import seeding
from ..canvas import build_canvas
from .model import CanvasDenoiser, DenoiserConfig, build_denoiser
from .schedule import NoiseSchedule, add_noise

CHECKPOINT_MAGIC = "deskswap-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 1e-4
    grad_clip: float = 1.0
    batch_size: int = 2
    weight_floor_lambda: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.grad_clip <= 0 or self.batch_size < 1:
            raise ValueError("learning_rate, grad_clip must be > 0 and batch_size >= 1")
        if self.weight_floor_lambda < 0:
            raise ValueError("weight_floor_lambda must be >= 0")


@dataclass(frozen=True)
class TrainingExample:
    """One pre-encoded sample: target clip latent, reference latent, weights.

    ``loss_weights`` is the fused motion/expression map at latent resolution,
    values in [0, 1]; the floor term is applied inside the loss.
    """

    target_latent: np.ndarray      # (C, F, H, W)
    reference_latent: np.ndarray   # (C, H, W)
    loss_weights: np.ndarray       # (F, H, W)

    def __post_init__(self):
        tgt = np.asarray(self.target_latent, dtype=np.float64)
        ref = np.asarray(self.reference_latent, dtype=np.float64)
        wts = np.asarray(self.loss_weights, dtype=np.float64)
        if tgt.ndim != 4:
            raise ValueError(f"target_latent must be (C, F, H, W), got {tgt.shape}")
        c, f, h, w = tgt.shape
        if ref.shape != (c, h, w):
            raise ValueError(f"reference_latent shape {ref.shape} != ({c}, {h}, {w})")
        if wts.shape != (f, h, w):
            raise ValueError(f"loss_weights shape {wts.shape} != ({f}, {h}, {w})")
        if wts.min() < 0:
            raise ValueError("loss_weights must be nonnegative")
        object.__setattr__(self, "target_latent", tgt)
        object.__setattr__(self, "reference_latent", ref)
        object.__setattr__(self, "loss_weights", wts)


@dataclass
class TrainingState:
    """Mutable trainer state; owned exclusively by the training loop."""

    model: CanvasDenoiser
    optimizer: torch.optim.Adam
    rng: np.random.Generator
    seed: int
    step: int = 0


def init_training(denoiser_cfg: DenoiserConfig = DenoiserConfig(),
                  trainer_cfg: TrainerConfig = TrainerConfig(),
                  seed: int = 0) -> TrainingState:
    """Fresh model, optimizer, and rng, all derived from one root seed."""
    # Single-threaded keeps CPU reductions bit-reproducible across runs.
    torch.set_num_threads(1)
    model = build_denoiser(denoiser_cfg, seeding.torch_manual_seed(seed, "train"))
    optimizer = torch.optim.Adam(model.parameters(), lr=trainer_cfg.learning_rate)
    rng = seeding.subsystem_rng(seed, "train")
    return TrainingState(model=model, optimizer=optimizer, rng=rng, seed=seed)


def train_step(batch, state: TrainingState, sched: NoiseSchedule,
               cfg: TrainerConfig = TrainerConfig()) -> float:
    """One optimization step over a batch of TrainingExample; returns the loss.

    Draw order from the state rng is fixed (timesteps, then noise) so seeded
    runs are reproducible step for step.
    """
    batch = list(batch)
    if not batch:
        raise ValueError("train_step requires a non-empty batch")
    shapes = {ex.target_latent.shape for ex in batch}
    if len(shapes) != 1:
        raise ValueError(f"batch examples disagree on latent shape: {sorted(shapes)}")

    z0 = np.stack([ex.target_latent for ex in batch])          # (B, C, F, H, W)
    ref = np.stack([ex.reference_latent for ex in batch])      # (B, C, H, W)
    amap = np.stack([ex.loss_weights for ex in batch])         # (B, F, H, W)
    b, _, _, _, w = z0.shape

    t = state.rng.integers(0, sched.num_steps, size=b)
    eps = state.rng.standard_normal(z0.shape)
    noisy = add_noise(z0, t, eps, sched)
    canvas = build_canvas(noisy, ref)

    latent_t = torch.from_numpy(canvas.latent).to(torch.float32)
    mask_t = torch.from_numpy(canvas.mask).to(torch.float32)
    t_t = torch.from_numpy(np.ascontiguousarray(t)).to(torch.long)
    target_t = torch.from_numpy(eps).to(torch.float32)
    weights_t = 1.0 + cfg.weight_floor_lambda * torch.from_numpy(amap).to(torch.float32)
    weights_t = weights_t[:, None]                              # (B, 1, F, H, W)

    state.model.train()
    eps_hat = state.model(latent_t, mask_t, t_t)
    pred = eps_hat[..., :w]
    wb = weights_t.expand_as(pred)
    loss = (wb * (pred - target_t) ** 2).sum() / wb.sum()

    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    torch.nn.utils.clip_grad_norm_(state.model.parameters(), cfg.grad_clip)
    state.optimizer.step()
    state.step += 1
    return float(loss.item())


@dataclass
class TrainingLog:
    """Append-only `step,loss,wall_clock_s` lines, optionally mirrored to disk."""

    path: Path | None = None
    started: float = field(default_factory=time.perf_counter)
    rows: list = field(default_factory=list)

    def record(self, step: int, loss: float) -> None:
        wall = time.perf_counter() - self.started
        self.rows.append((step, loss, wall))
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(f"{step},{loss!r},{wall:.3f}\n")


def run_training(examples, state: TrainingState, sched: NoiseSchedule,
                 cfg: TrainerConfig, num_steps: int,
                 log: TrainingLog | None = None,
                 checkpoint_path=None, checkpoint_every: int | None = None,
                 denoiser_cfg: DenoiserConfig | None = None) -> list:
    """Run ``num_steps`` optimization steps over a fixed example set.

    Batch membership is drawn from the state rng (before the step's own
    draws), so checkpoint/resume reproduces batching exactly.
    """
    examples = list(examples)
    if not examples:
        raise ValueError("training needs at least one example")
    losses = []
    for _ in range(num_steps):
        idx = state.rng.integers(0, len(examples), size=cfg.batch_size)
        batch = [examples[i] for i in idx]
        loss = train_step(batch, state, sched, cfg)
        losses.append(loss)
        if log is not None:
            log.record(state.step, loss)
        if checkpoint_path is not None and checkpoint_every:
            if state.step % checkpoint_every == 0:
                save_checkpoint(checkpoint_path, state, sched,
                                denoiser_cfg or state.model.config, cfg)
    return losses


# ---------------------------------------------------------------------------
# Checkpoint container: one zip of arrays plus a JSON meta record.
# ---------------------------------------------------------------------------

def save_checkpoint(path, state: TrainingState, sched: NoiseSchedule,
                    denoiser_cfg: DenoiserConfig, trainer_cfg: TrainerConfig) -> None:
    path = Path(path)
    arrays = {}
    for name, tensor in state.model.state_dict().items():
        arrays[f"param/{name}"] = tensor.detach().cpu().numpy()
    opt_state = state.optimizer.state_dict()
    for idx, slots in opt_state["state"].items():
        for key, val in slots.items():
            val = val.detach().cpu().numpy() if isinstance(val, torch.Tensor) else np.asarray(val)
            arrays[f"adam/{idx}/{key}"] = val
    meta = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "step": state.step,
        "seed": state.seed,
        "rng_state": state.rng.bit_generator.state,
        "denoiser_config": asdict(denoiser_cfg),
        "trainer_config": asdict(trainer_cfg),
        "schedule": {
            "num_steps": sched.num_steps,
            "beta_start": sched.beta_start,
            "beta_end": sched.beta_end,
        },
        "param_groups": opt_state["param_groups"],
    }
    arrays["meta.json"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def _read_meta(arrays) -> dict:
    if "meta.json" not in arrays:
        raise ValueError("not a training checkpoint: missing meta record")
    meta = json.loads(bytes(arrays["meta.json"].tobytes()).decode("utf-8"))
    if meta.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"bad checkpoint magic: {meta.get('magic')!r}")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    return meta


def load_checkpoint(path):
    """Restore (state, sched, denoiser_cfg, trainer_cfg) from a checkpoint.

    The restored state continues training exactly where the saved run left
    off: parameters, Adam moments, step count, and rng state all round-trip.
    """
    path = Path(path)
    with np.load(path, allow_pickle=False) as npz:
        arrays = {k: npz[k] for k in npz.files}
    meta = _read_meta(arrays)
    denoiser_cfg = DenoiserConfig(**meta["denoiser_config"])
    trainer_cfg = TrainerConfig(**meta["trainer_config"])
    sched = NoiseSchedule(**meta["schedule"])

    torch.set_num_threads(1)
    model = CanvasDenoiser(denoiser_cfg)
    params = {
        name[len("param/"):]: torch.from_numpy(arr.copy())
        for name, arr in arrays.items() if name.startswith("param/")
    }
    model.load_state_dict(params)

    optimizer = torch.optim.Adam(model.parameters(), lr=trainer_cfg.learning_rate)
    slots: dict = {}
    for name, arr in arrays.items():
        if not name.startswith("adam/"):
            continue
        _, idx, key = name.split("/", 2)
        slots.setdefault(int(idx), {})[key] = torch.from_numpy(arr.copy())
    if slots:
        optimizer.load_state_dict({"state": slots, "param_groups": meta["param_groups"]})

    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    state = TrainingState(model=model, optimizer=optimizer, rng=rng,
                          seed=int(meta["seed"]), step=int(meta["step"]))
    return state, sched, denoiser_cfg, trainer_cfg


def smoothed(losses, window: int = 50) -> list:
    """Trailing-mean smoothing used for loss-drop checks on noisy traces."""
    out = []
    for i in range(len(losses)):
        lo = max(0, i - window + 1)
        out.append(float(np.mean(losses[lo:i + 1])))
    return out


def warn_if_untrained(state: TrainingState) -> None:
    if state.step == 0:
        warnings.warn("model has had no training steps; samples will be noise",
                      stacklevel=3)
