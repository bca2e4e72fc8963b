"""Command-line harness gluing the library together.

Five subcommands cover the whole loop: ``gen-data`` writes a filtered
synthetic dataset, ``train`` fits the denoiser and writes checkpoints plus a
loss log, ``swap`` runs one head swap from a checkpoint, ``eval`` scores
generated clips against their ground truth, and ``weights-viz`` renders the
motion/expression/fused weight maps for inspection.

Configuration is a flat key=value space with one precedence rule:
defaults, then ``--config FILE`` lines, then key=value arguments on the
command line. Unknown keys are rejected with the full valid-key list.
A single root seed feeds every subsystem through named substreams, so one
integer pins the whole pipeline.

Exit codes are documented in ``--help``: 0 success, 1 internal error,
2 usage or configuration error, 3 missing input, 4 malformed dataset or
checkpoint, 5 unwritable output.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import backends, media, metrics, pipeline, seeding, synthetic, weighting
from .diffusion import (
    CodecConfig,
    DenoiserConfig,
    NoiseSchedule,
    PatchCodec,
    SamplerConfig,
    TrainerConfig,
    TrainingLog,
    init_training,
    load_checkpoint,
    run_training,
    sample,
    save_checkpoint,
    smoothed,
)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_MALFORMED = 4
EXIT_UNWRITABLE = 5


class ConfigError(Exception):
    """Bad key, bad value, or unreadable config file."""


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_sigma(raw: str):
    if raw.strip().lower() == "auto":
        return None
    return float(raw)


# name -> (default, parser, help). The single source for --help, defaults,
# and override validation.
CONFIG_KEYS = {
    "seed": (1404, int, "root seed split across data/train/sample substreams"),
    "n_samples": (8, int, "gen-data: number of samples to synthesize"),
    "frame_size": (64, int, "gen-data: square frame side in pixels"),
    "frames_per_clip": (8, int, "gen-data: frames per clip"),
    "fps": (8.0, float, "gen-data: clip frame rate"),
    "reference_policy": ("first", str, "gen-data: reference frame choice, first|random"),
    "alpha": (0.5, float, "weighting: expression blend factor in [0, 1]"),
    "dilation_radius": (2, int, "weighting: motion-map dilation radius"),
    "dilation_iterations": (2, int, "weighting: motion-map dilation passes"),
    "aggregation_window": (5, int, "weighting: landmark box-sum window"),
    "landmark_sigma": ("auto", _parse_sigma,
                       "weighting: Gaussian sigma in px, or auto for 4% of height"),
    "weight_floor_lambda": (1.0, float, "training loss: lambda in w = 1 + lambda*A"),
    "per_frame_normalization": (False, _parse_bool,
                                "weighting: normalize each frame separately"),
    "patch_size": (8, int, "codec: square patch side"),
    "latent_channels": (4, int, "codec/model: latent channel count"),
    "base_width": (64, int, "model: channel width"),
    "depth": (3, int, "model: residual blocks"),
    "temporal_attention": (True, _parse_bool, "model: attend across frames"),
    "num_steps": (1000, int, "schedule: diffusion timesteps"),
    "beta_start": (1e-4, float, "schedule: first beta"),
    "beta_end": (2e-2, float, "schedule: last beta"),
    "learning_rate": (1e-4, float, "train: Adam learning rate"),
    "grad_clip": (1.0, float, "train: gradient-norm clip"),
    "batch_size": (2, int, "train: examples per step"),
    "train_steps": (500, int, "train: optimization steps this invocation"),
    "checkpoint_every": (100, int, "train: periodic checkpoint interval, 0 disables"),
    "num_inference_steps": (50, int, "swap: reverse-process steps"),
    "strength": (1.0, float, "swap: noising strength in (0, 1]"),
    "embedding_backend": ("histogram", str,
                          "eval: identity embedding, histogram|exec:CMD"),
    "feature_backend": ("projection", str,
                        "eval: perceptual features, projection|exec:CMD"),
}


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved invocation: command, named paths, config values."""

    command: str
    paths: dict
    values: dict

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    def __getitem__(self, key):
        return self.values[key]


def _reject_unknown(key: str) -> None:
    if key not in CONFIG_KEYS:
        raise ConfigError(f"unknown configuration key {key!r}; valid keys: "
                          + ", ".join(sorted(CONFIG_KEYS)))


def _coerce(key: str, raw: str):
    _reject_unknown(key)
    parser = CONFIG_KEYS[key][1]
    try:
        return parser(raw)
    except ValueError as exc:
        raise ConfigError(f"invalid value for {key}: {raw!r} ({exc})") from exc


def _read_config_file(path: str) -> dict:
    cfg_path = Path(path)
    if not cfg_path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, raw in enumerate(cfg_path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        values[key] = _coerce(key, val)
    return values


def build_run_config(command: str, paths: dict, config_file: str | None,
                     overrides) -> RunConfig:
    """Resolve defaults, config file, then command-line overrides."""
    # string defaults (like landmark_sigma's "auto") go through their parser
    values = {key: parser(default) if isinstance(default, str) else default
              for key, (default, parser, _) in CONFIG_KEYS.items()}
    if config_file:
        values.update(_read_config_file(config_file))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, val = item.split("=", 1)
        values[key.strip()] = _coerce(key.strip(), val.strip())
    return RunConfig(command=command, paths=dict(paths), values=values)


# ---------------------------------------------------------------------------
# Path validation, before any real work happens
# ---------------------------------------------------------------------------

def _require_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise FileNotFoundError(f"{what} not found: {path}")
    return p


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return p


def _ensure_out_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except (FileExistsError, NotADirectoryError) as exc:
        raise NotADirectoryError(f"output path is not a usable directory: "
                                 f"{path} ({exc})") from exc
    if not p.is_dir():
        raise NotADirectoryError(f"output path is not a directory: {path}")
    if not os.access(p, os.W_OK):
        raise PermissionError(f"output directory is not writable: {path}")
    return p


# ---------------------------------------------------------------------------
# Shared builders
# ---------------------------------------------------------------------------

def _weighting_config(rc: RunConfig) -> weighting.WeightingConfig:
    try:
        return weighting.WeightingConfig(
            alpha=rc["alpha"],
            dilation_radius=rc["dilation_radius"],
            dilation_iterations=rc["dilation_iterations"],
            landmark_sigma=rc["landmark_sigma"],
            aggregation_window=rc["aggregation_window"],
            weight_floor_lambda=rc["weight_floor_lambda"],
            per_frame_normalization=rc["per_frame_normalization"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _codec(rc: RunConfig, latent_channels: int | None = None) -> PatchCodec:
    try:
        cfg = CodecConfig(patch_size=rc["patch_size"],
                          latent_channels=latent_channels or rc["latent_channels"])
        return PatchCodec(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _schedule(rc: RunConfig) -> NoiseSchedule:
    try:
        return NoiseSchedule(num_steps=rc["num_steps"],
                             beta_start=rc["beta_start"], beta_end=rc["beta_end"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _eval_backends(rc: RunConfig):
    try:
        return (backends.get_embedding_backend(rc["embedding_backend"]),
                backends.get_feature_backend(rc["feature_backend"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_gen_data(rc: RunConfig) -> None:
    out = _ensure_out_dir(rc.paths["out"])
    try:
        synth_cfg = synthetic.SynthConfig(frame_size=rc["frame_size"],
                                          frames_per_clip=rc["frames_per_clip"],
                                          fps=rc["fps"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if rc["reference_policy"] not in ("first", "random"):
        raise ConfigError(f"reference_policy must be first or random, "
                          f"got {rc['reference_policy']!r}")
    samples = pipeline.synth_generate(rc["n_samples"], rc.seed, synth_cfg,
                                      reference_policy=rc["reference_policy"])
    ids = pipeline.write_dataset(samples, out)
    print(f"wrote {len(ids)} samples to {out}")


def _load_examples(rc: RunConfig, dataset_dir) -> tuple:
    data = pipeline.load_dataset(dataset_dir)
    codec = _codec(rc)
    wcfg = _weighting_config(rc)
    examples = [pipeline.to_training_example(s, codec, wcfg) for _, s in data]
    return data, examples


def _cmd_train(rc: RunConfig) -> None:
    dataset_dir = _require_dir(rc.paths["dataset"], "dataset directory")
    out = _ensure_out_dir(rc.paths["out"])
    resume = rc.paths.get("resume")
    data, examples = _load_examples(rc, dataset_dir)
    frames = len(data[0][1].v_a)

    if resume:
        _require_file(resume, "checkpoint")
        state, sched, denoiser_cfg, trainer_cfg = load_checkpoint(resume)
        print(f"resumed from {resume} at step {state.step}")
    else:
        try:
            denoiser_cfg = DenoiserConfig(latent_channels=rc["latent_channels"],
                                          base_width=rc["base_width"],
                                          depth=rc["depth"],
                                          temporal_attention=rc["temporal_attention"],
                                          frames_per_clip=frames)
            trainer_cfg = TrainerConfig(learning_rate=rc["learning_rate"],
                                        grad_clip=rc["grad_clip"],
                                        batch_size=rc["batch_size"],
                                        weight_floor_lambda=rc["weight_floor_lambda"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        sched = _schedule(rc)
        state = init_training(denoiser_cfg, trainer_cfg, seed=rc.seed)

    log_path = out / "loss_log.txt"
    if not resume and log_path.exists():
        log_path.unlink()
    log = TrainingLog(path=log_path)
    checkpoint_path = out / "checkpoint.npz"
    every = rc["checkpoint_every"] or None
    losses = run_training(examples, state, sched, trainer_cfg,
                          num_steps=rc["train_steps"], log=log,
                          checkpoint_path=checkpoint_path,
                          checkpoint_every=every, denoiser_cfg=denoiser_cfg)
    save_checkpoint(checkpoint_path, state, sched, denoiser_cfg, trainer_cfg)
    trail = smoothed(losses)[-1] if losses else float("nan")
    print(f"trained {len(losses)} steps to step {state.step}; "
          f"smoothed loss {trail:.6f}")
    print(f"checkpoint: {checkpoint_path}")
    print(f"loss log: {log_path}")


def _cmd_swap(rc: RunConfig) -> None:
    ckpt_path = _require_file(rc.paths["checkpoint"], "checkpoint")
    driving_dir = _require_dir(rc.paths["driving"], "driving clip directory")
    reference_path = _require_file(rc.paths["reference"], "reference image")
    out = _ensure_out_dir(rc.paths["out"])

    state, sched, denoiser_cfg, _ = load_checkpoint(ckpt_path)
    driving = media.load_clip(driving_dir)
    reference = media.load_frame(reference_path)
    codec = _codec(rc, latent_channels=denoiser_cfg.latent_channels)
    try:
        sampler_cfg = SamplerConfig(num_inference_steps=rc["num_inference_steps"],
                                    strength=rc["strength"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rng = seeding.subsystem_rng(rc.seed, "sample")
    swapped = sample(driving, reference, state, sched, codec=codec,
                     sampler_cfg=sampler_cfg, rng=rng)
    media.save_clip(swapped, out)
    print(f"wrote swapped clip ({len(swapped)} frames) to {out}")


def _eval_item(sid: str, gen: media.VideoClip,
               sample_: pipeline.PairedSample) -> metrics.ClipEval:
    gt_lms = sample_.landmarks_a
    size_h, size_w = gen.height, gen.width
    try:
        gen_lms = synthetic.estimate_landmark_track(gen)
    except ValueError:
        gen_lms = ()
    gen_poses = tuple(synthetic.pose_from_landmarks(lm, size_h, size_w)
                      for lm in gen_lms)
    gt_poses = tuple(synthetic.pose_from_landmarks(lm, size_h, size_w)
                     for lm in gt_lms)
    return metrics.ClipEval(clip_id=sid, gen=gen, gt=sample_.v_a,
                            gen_poses=gen_poses,
                            gt_poses=gt_poses if gen_poses else (),
                            gen_landmarks=gen_lms, gt_landmarks=gt_lms)


def _cmd_eval(rc: RunConfig) -> None:
    generated_dir = _require_dir(rc.paths["generated"], "generated clips directory")
    dataset_dir = _require_dir(rc.paths["dataset"], "dataset directory")
    out = _ensure_out_dir(rc.paths["out"])
    embedding, features = _eval_backends(rc)

    data = pipeline.load_dataset(dataset_dir)
    items = []
    for sid, sample_ in data:
        clip_dir = generated_dir / sid
        if not clip_dir.is_dir():
            raise FileNotFoundError(f"no generated clip for {sid} at {clip_dir}")
        gen = media.load_clip(clip_dir)
        items.append(_eval_item(sid, gen, sample_))
    report = metrics.evaluate(items, embedding, features,
                              eye_indices=synthetic.EYE_INDICES)
    text = metrics.report_to_text(report)
    print(text)
    (out / "report.txt").write_text(text + "\n")
    metrics.save_report(report, out / "report.json")
    print(f"reports: {out / 'report.txt'}, {out / 'report.json'}")


def _cmd_weights_viz(rc: RunConfig) -> None:
    dataset_dir = _require_dir(rc.paths["dataset"], "dataset directory")
    out = _ensure_out_dir(rc.paths["out"])
    wcfg = _weighting_config(rc)
    data = pipeline.load_dataset(dataset_dir)
    for sid, sample_ in data:
        motion = weighting.motion_map(sample_.v_a, wcfg)
        expression = weighting.expression_map(
            sample_.landmarks_a, (sample_.v_a.height, sample_.v_a.width), wcfg)
        fused = weighting.fuse_weights(motion, expression, wcfg.alpha)
        grid = weighting.weight_grid(motion, expression, fused)
        media.save_gray_image(grid, out / f"{sid}_weights.png")
    print(f"wrote {len(data)} weight grids to {out}")


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "swap": _cmd_swap,
    "eval": _cmd_eval,
    "weights-viz": _cmd_weights_viz,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _key_epilog() -> str:
    lines = ["configuration keys (override with key=value):"]
    for name, (default, _, help_text) in CONFIG_KEYS.items():
        lines.append(f"  {name:<26} {help_text} (default {default!r})")
    lines += [
        "",
        "exit codes:",
        "  0 success",
        "  1 internal error",
        "  2 usage or configuration error",
        "  3 missing input (dataset, checkpoint, clip, or reference)",
        "  4 malformed dataset or checkpoint",
        "  5 unwritable output path",
    ]
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deskswap",
        description="Desk-scale video head swapping: data, training, "
                    "swapping, and evaluation.",
        epilog=_key_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, help_text, paths):
        p = sub.add_parser(name, help=help_text, epilog=_key_epilog(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        for flag, (required, path_help) in paths.items():
            p.add_argument(f"--{flag}", required=required, help=path_help)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("overrides", nargs="*", metavar="key=value",
                       help="config overrides, highest precedence")
        return p

    add("gen-data", "synthesize a filtered paired dataset",
        {"out": (True, "dataset output directory")})
    add("train", "train the denoiser on a dataset",
        {"dataset": (True, "dataset directory from gen-data"),
         "out": (True, "run directory for checkpoint and loss log"),
         "resume": (False, "checkpoint to continue from")})
    add("swap", "swap the head identity of a driving clip",
        {"checkpoint": (True, "trained checkpoint file"),
         "driving": (True, "driving clip directory"),
         "reference": (True, "reference identity image (PNG)"),
         "out": (True, "output clip directory")})
    add("eval", "score generated clips against ground truth",
        {"generated": (True, "directory of generated clips, one per sample id"),
         "dataset": (True, "dataset directory with ground truth"),
         "out": (True, "report output directory")})
    add("weights-viz", "render motion/expression/fused weight grids",
        {"dataset": (True, "dataset directory"),
         "out": (True, "image output directory")})
    return parser


_PATH_FLAGS = {
    "gen-data": ("out",),
    "train": ("dataset", "out", "resume"),
    "swap": ("checkpoint", "driving", "reference", "out"),
    "eval": ("generated", "dataset", "out"),
    "weights-viz": ("dataset", "out"),
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        paths = {flag: getattr(args, flag) for flag in _PATH_FLAGS[args.command]
                 if getattr(args, flag) is not None}
        rc = build_run_config(args.command, paths, args.config, args.overrides)
        _COMMANDS[args.command](rc)
        return EXIT_OK
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING_INPUT, "missing-input", exc)
    except (NotADirectoryError, IsADirectoryError, FileExistsError,
            PermissionError) as exc:
        return _fail(EXIT_UNWRITABLE, "unwritable-output", exc)
    except ValueError as exc:
        return _fail(EXIT_MALFORMED, "malformed-data", exc)
    except OSError as exc:
        return _fail(EXIT_UNWRITABLE, "unwritable-output", exc)


def _fail(code: int, category: str, exc: Exception) -> int:
    print(f"error[{category}]: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
