"""``mdc`` command line: train, complete, eval, imu, plot, h36m-convert.

Settings come from built-in defaults, then an optional TOML file
(``--config``), then command-line flags. The effective settings are written
next to every output as ``config_used.json`` (directory outputs) or
``<output>.config_used.json`` (file outputs).

Failures print one line ``error: <ErrorClass>: <message>`` to stderr and exit
with status 1; usage errors exit with status 2.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .errors import ConfigError, IngestionError, MdcError
from .model import ModelConfig, parameter_count

log = logging.getLogger("mdcnet")

# toy-scale model used when neither the config file nor flags set dimensions
DESK_MODEL = {"latent_dim": 64, "n_heads": 4, "ff_dim": 128, "n_blocks": 4, "dropout": 0.0}


COMMANDS = ("train", "complete", "eval", "imu", "plot", "h36m-convert")


def _load_config_file(path, command: str) -> dict:
    """Settings for ``command``: its ``[command]`` table if present, else the top level."""
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if any(c in data for c in COMMANDS):
        return dict(data.get(command, {}))
    return data


def _write_provenance(out: Path, settings: dict, is_dir: bool) -> None:
    target = out / "config_used.json" if is_dir else out.with_name(out.name + ".config_used.json")
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps({"mdcnet_version": __version__, **settings}, indent=2, sort_keys=True, default=str))


def _merge(file_cfg: dict, flags: dict) -> dict:
    merged = dict(file_cfg)
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


def _windows_from_dir(path: Path, window: int, stride: int, split: str = "train"):
    from .dataset import load_h36m, window_ranges
    from .motion import FrameRange, center_on_root, load_motion, slice_motion

    if not path.is_dir():
        raise IngestionError(f"data directory {path} does not exist")
    if any(p.is_dir() and p.name.startswith("S") for p in path.iterdir()):
        return load_h36m(path, window=window, stride=stride).sequences(split)
    seqs = []
    for f in sorted(path.rglob("*.json")):
        if f.name.endswith("config_used.json"):
            continue
        seq = center_on_root(load_motion(f))[0]
        seqs += [slice_motion(seq, r) for r in window_ranges(seq.n_frames, window, stride)]
    if not seqs:
        raise IngestionError(f"no {window}-frame windows found under {path}")
    return seqs


# ----------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> dict:
    from .dataset import synthetic_motions
    from .trainer import TrainConfig, Trainer

    file_cfg = _load_config_file(args.config, "train")
    model_file = file_cfg.pop("model", {})
    data_file = file_cfg.pop("data", {})
    stride = args.stride or data_file.get("stride", 25)
    train_cfg = TrainConfig.from_dict(_merge(file_cfg, {
        "epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr,
        "schedule": args.schedule, "steps": args.steps, "window": args.window,
        "seed": args.seed, "checkpoint_every": args.checkpoint_every,
        "n_coeffs": args.n_coeffs, "partition": args.partition,
    }))
    model_dict = {**DESK_MODEL, **model_file} if not args.full_model else dict(model_file)
    model_dict = _merge(model_dict, {
        "latent_dim": args.latent_dim, "n_blocks": args.n_blocks, "n_heads": args.n_heads,
        "ff_dim": args.ff_dim, "dropout": args.dropout,
        "use_gate": False if args.no_gate else None,
        "multiscale_time": False if args.no_multiscale_time else None,
    })
    model_cfg = ModelConfig.from_dict(model_dict)
    if args.synthetic:
        windows = synthetic_motions(train_cfg.seed, args.synthetic, n_frames=train_cfg.window)
    elif args.data:
        windows = _windows_from_dir(Path(args.data), train_cfg.window, stride, "train")
    else:
        raise ConfigError("train needs --data DIR or --synthetic COUNT")
    out = Path(args.out or "runs/latest")
    if args.resume:
        trainer = Trainer.resume(args.resume, windows, out)
        trainer.config.epochs = train_cfg.epochs
    else:
        trainer = Trainer(windows, train_cfg, model_cfg, out)
    n_params = parameter_count(trainer.model.config)
    log.info("training %d windows, %d parameters", len(windows), n_params)
    losses = trainer.fit()
    settings = {"command": "train", "train": trainer.config.to_dict(),
                "model": trainer.model.config.to_dict(), "parameters": n_params,
                "data": args.data or f"synthetic:{args.synthetic}", "stride": stride}
    _write_provenance(out, settings, is_dir=True)
    print(f"trained {trainer.epoch} epochs, final loss {losses[-1]:.5f}, checkpoint {out / 'model.ckpt'}")
    return settings


def cmd_complete(args) -> dict:
    from .diffusion import load_checkpoint
    from .motion import load_motion, save_motion
    from .sampler import complete_pair

    cfg = _merge(_load_config_file(args.config, "complete"), {
        "tail": args.tail, "head": args.head, "fill": args.fill,
        "padding": args.padding, "seed": args.seed, "resample": args.resample,
    })
    h1 = load_motion(args.h1)
    h2 = load_motion(args.h2)
    diffusion, _ = load_checkpoint(args.ckpt)
    tail = cfg.get("tail", 15)
    head = cfg.get("head", 20)
    fill = cfg.get("fill", 90)
    padding = cfg.get("padding", "split_ends")
    seed = cfg.get("seed", 0)
    resample = cfg.get("resample", 1)
    joined = complete_pair(h1, h2, tail, head, fill, diffusion, padding, seed, resample)
    out = Path(args.out or "joined.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_motion(joined, out)
    settings = {"command": "complete", "h1": args.h1, "h2": args.h2, "ckpt": args.ckpt,
                "tail": tail, "head": head, "fill": fill, "padding": padding, "seed": seed,
                "resample": resample}
    _write_provenance(out, settings, is_dir=False)
    print(f"wrote {joined.n_frames} frames to {out}")
    return settings


def cmd_eval(args) -> dict:
    from .diffusion import load_checkpoint
    from .metrics import DEFAULT_MULTIMODAL_THRESHOLD, DEFAULT_SAMPLES, EvalInstance, evaluate
    from .motion import FrameRange, slice_motion
    from .sampler import CompletionTask, sample_completion

    cfg = _merge(_load_config_file(args.config, "eval"), {
        "samples": args.samples, "seed": args.seed, "threshold": args.threshold,
        "tail": args.tail, "head": args.head, "padding": args.padding, "limit": args.limit,
        "resample": args.resample,
    })
    diffusion, _ = load_checkpoint(args.ckpt)
    n = diffusion.config.n_frames
    x0, m0, k0 = diffusion.default_partition
    x = cfg.get("tail", x0)
    k = cfg.get("head", k0)
    m = n - x - k
    samples = cfg.get("samples", DEFAULT_SAMPLES)
    threshold = cfg.get("threshold", DEFAULT_MULTIMODAL_THRESHOLD)
    seed = cfg.get("seed", 0)
    padding = cfg.get("padding", "split_ends")
    resample = cfg.get("resample", 1)
    windows = _windows_from_dir(Path(args.data), n, cfg.get("stride", n), "test")
    if cfg.get("limit"):
        windows = windows[: cfg["limit"]]
    instances = []
    for i, w in enumerate(windows):
        task = CompletionTask(slice_motion(w, FrameRange(0, x)), slice_motion(w, FrameRange(n - k, n)),
                              m, padding, seed * 100003 + i)
        preds = sample_completion(task, diffusion, n_samples=max(samples, 2), resample=resample)
        preds = preds[:samples] if samples >= 2 else preds[:1]
        instances.append(EvalInstance(
            observed=w.data[:x], gt_future=w.data[x:x + m],
            predictions=np.stack([p.data[x:x + m] for p in preds]),
        ))
    results = evaluate(instances, threshold)
    settings = {"command": "eval", "ckpt": args.ckpt, "data": args.data, "samples": samples,
                "seed": seed, "threshold": threshold, "partition": [x, m, k], "padding": padding,
                "resample": resample, "instances": len(instances)}
    out = Path(args.out or "results.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"metrics": results, "config": settings}, indent=2, sort_keys=True))
    _write_provenance(out, settings, is_dir=False)
    print(" ".join(f"{k}={v:.4f}" for k, v in results.items()))
    return settings


def cmd_imu(args) -> dict:
    from .imu import SensorSite, export_imu, synthesize_imu
    from .motion import load_motion

    seq = load_motion(args.motion)
    normals = None
    source = args.normals
    if source != "skeleton_derived":
        path = Path(source)
        normals = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, delimiter=",", ndmin=2)
        source = "file"
    trace = synthesize_imu(seq, SensorSite(args.joint, source), normals)
    out = Path(args.out or "imu.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    export_imu(trace, out, magnetometer=args.magnetometer)
    settings = {"command": "imu", "motion": args.motion, "joint": args.joint,
                "normals": args.normals, "magnetometer": args.magnetometer}
    _write_provenance(out, settings, is_dir=False)
    print(f"wrote {len(trace)} IMU samples to {out}")
    return settings


def cmd_plot(args) -> dict:
    from .imu import load_imu, plot_imu

    trace, mag = load_imu(args.imu)
    out = Path(args.out or "imu.png")
    out.parent.mkdir(parents=True, exist_ok=True)
    plot_imu(trace, out, mag)
    settings = {"command": "plot", "imu": args.imu}
    _write_provenance(out, settings, is_dir=False)
    print(f"wrote {out}")
    return settings


def cmd_convert(args) -> dict:
    from .dataset import convert_h36m

    out = Path(args.out or "canonical")
    written = convert_h36m(args.src, out, fps=args.fps, selection=args.joints)
    settings = {"command": "h36m-convert", "in": args.src, "fps": args.fps, "joints": args.joints}
    _write_provenance(out, settings, is_dir=True)
    print(f"wrote {len(written)} clips to {out}")
    return settings


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", default=None, help="TOML file with default settings")
    common.add_argument("--out", default=None)
    common.add_argument("--verbose", "-v", action="store_true")

    parser = argparse.ArgumentParser(prog="mdc", description="Masked DCT-diffusion motion completion")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("train", parents=[common], help="train a denoiser")
    p.add_argument("--data")
    p.add_argument("--synthetic", type=int, help="train on COUNT procedural clips")
    p.add_argument("--resume")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--schedule", choices=("cosine", "linear", "sigmoid", "sqrt"))
    p.add_argument("--steps", type=int, help="diffusion steps T")
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--partition", choices=("random", "fixed"))
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--n-coeffs", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--n-blocks", type=int)
    p.add_argument("--n-heads", type=int)
    p.add_argument("--ff-dim", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--no-gate", action="store_true")
    p.add_argument("--no-multiscale-time", action="store_true")
    p.add_argument("--full-model", action="store_true",
                   help="start from the full-size model dimensions instead of the desk preset")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("complete", parents=[common], help="generate a transition between two clips")
    p.add_argument("--h1", required=True)
    p.add_argument("--h2", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--tail", type=int)
    p.add_argument("--head", type=int)
    p.add_argument("--fill", type=int)
    p.add_argument("--padding", choices=("split_ends", "zeros", "last_of_h1", "first_of_h2"))
    p.add_argument("--resample", type=int, help="repeats of each reverse step (default 1)")
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("eval", parents=[common], help="score completions with APD/ADE/FDE/MMADE/MMFDE")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--samples", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--tail", type=int)
    p.add_argument("--head", type=int)
    p.add_argument("--padding", choices=("split_ends", "zeros", "last_of_h1", "first_of_h2"))
    p.add_argument("--limit", type=int, help="score at most this many windows")
    p.add_argument("--resample", type=int, help="repeats of each reverse step (default 1)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("imu", parents=[common], help="synthesize accelerometer/gyro traces")
    p.add_argument("--motion", required=True)
    p.add_argument("--joint", default="left_wrist")
    p.add_argument("--normals", default="skeleton_derived",
                   help="'skeleton_derived' or a .npy/.csv file of per-frame unit normals")
    p.add_argument("--magnetometer", action="store_true")
    p.set_defaults(func=cmd_imu)

    p = sub.add_parser("plot", parents=[common], help="plot an IMU CSV")
    p.add_argument("--imu", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("h36m-convert", parents=[common], help="convert 32-joint Human3.6M arrays")
    p.add_argument("--in", dest="src", required=True)
    p.add_argument("--fps", type=float, default=50.0)
    p.add_argument("--joints", default="h36m17", choices=("h36m17", "h36m16"))
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except MdcError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: IOError: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
