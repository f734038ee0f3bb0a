"""Command line entry point.

Every subcommand can read a YAML config file (``--config``); flags given on
the command line override the matching config keys.  Output directories use
the layout ``checkpoints/``, ``logs/``, ``reports/``, ``plots/``.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import datasets as ds
from . import evaluation as ev
from .model import ModelConfig
from .training import CheckpointError

log = logging.getLogger("moveint")

MODE_NAMES = ("reach", "wave", "circle")


class UsageError(Exception):
    pass


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as err:
        raise UsageError(f"cannot read config {path}: {err}") from err
    if not isinstance(cfg, dict):
        raise UsageError(f"config {path} must be a mapping")
    return cfg


def merged(section: dict, overrides: dict) -> dict:
    out = dict(section)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dataset_digest(manifest: Path) -> str:
    h = hashlib.sha256(manifest.read_bytes())
    root = manifest.parent
    for f in sorted((root / "trajectories").glob("*.npz")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args, cfg):
    sc = merged(cfg.get("synth", {}), {
        "n_train": args.n_train, "n_test": args.n_test, "length": args.length,
        "noise": args.noise, "frame_rate": args.frame_rate,
    })
    if args.modes is not None:
        if not 1 <= args.modes <= len(MODE_NAMES):
            raise UsageError(f"--modes must be between 1 and {len(MODE_NAMES)}")
        sc["modes"] = list(MODE_NAMES[: args.modes])
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    split = ds.synth_interaction_dataset(ds.SynthConfig.from_dict(sc), seed=seed)
    manifest = ds.save_dataset(split, args.out)
    print(f"wrote {len(split.train)} train / {len(split.test)} test trajectories to {args.out}")
    print(f"dataset sha256 {dataset_digest(manifest)}")


def cmd_prepare(args, cfg):
    pc = merged(cfg.get("data", {}), {"target_hz": args.target_hz})
    manifest = ds.prepare_dataset(_require(args.manifest, "manifest"), args.out, pc.get("target_hz"))
    print(f"wrote {manifest}")


def _model_config(split, cfg, args) -> ModelConfig:
    from .training import infer_model_config

    mc = merged(cfg.get("model", {}), {
        "latent_dim": args.latent_dim, "n_components": args.n_components,
        "recurrent_width": args.recurrent_width,
    })
    if args.hidden_widths:
        mc["hidden_widths"] = [int(w) for w in args.hidden_widths.split(",")]
    return infer_model_config(split, **mc)


def cmd_train(args, cfg):
    from .training import TrainConfig, train

    split = ds.load_dataset(_require(args.data, "dataset manifest"))
    tc = merged(cfg.get("train", {}), {
        "epochs": args.epochs, "step_size": args.step_size, "beta": args.beta,
        "seed": args.seed, "n_samples": args.n_samples, "batch_size": args.batch_size,
        "init_checkpoint": args.init_checkpoint, "log_interval": args.log_interval,
        "plateau_patience": args.plateau_patience,
    })
    if args.no_separation:
        tc["separation"] = False
    if "seed" not in tc and "seed" in cfg:
        tc["seed"] = cfg["seed"]
    try:
        train_config = TrainConfig.from_dict(tc)
        model_config = _model_config(split, cfg, args)
    except (TypeError, ValueError) as err:
        raise UsageError(str(err)) from err
    if train_config.init_checkpoint:
        _require(train_config.init_checkpoint, "init checkpoint")
    out = Path(args.out)
    ckpt = train(split, model_config, train_config, out)
    path = out / "checkpoints" / "model.npz"
    final = ckpt.history[-1]["mean_total"]
    print(f"trained {len(ckpt.history)} epochs, final mean loss {final:.5f}")
    print(f"checkpoint {path} sha256 {file_digest(path)}")


def _load(args):
    from .training import load_checkpoint

    split = ds.load_dataset(_require(args.data, "dataset manifest"))
    ckpt = load_checkpoint(_require(args.checkpoint, "checkpoint")) if args.checkpoint else None
    return split, ckpt


def cmd_eval(args, cfg):
    split, ckpt = _load(args)
    if args.predictor == "model":
        if ckpt is None:
            raise UsageError("--checkpoint is required for the model predictor")
        pred = ev.model_predictor(ckpt)
    elif args.predictor == "oracle":
        pred = ev.oracle_predictor()
    else:
        pred = ev.mean_trajectory_predictor(split.train)
    rows = ev.mse_report(pred, split)
    out = Path(args.out) / "reports" / "mse.csv"
    ev.write_report(rows, out, pred.name)
    print(ev.format_table(rows, pred.name))
    if args.with_baseline and args.predictor != "mean-baseline":
        base = ev.baseline_mse(split)
        ev.write_report(base, Path(args.out) / "reports" / "baseline_mse.csv", "mean-baseline")
        print(ev.format_table(base, "mean-baseline"))
    print(f"wrote {out}")


def _selected(split, which: str):
    return split.test if which == "test" else split.train if which == "train" else split.train + split.test


def cmd_rollout(args, cfg):
    from .inference import robot_output_frames, rollout

    split, ckpt = _load(args)
    if ckpt is None:
        raise UsageError("--checkpoint is required")
    out = Path(args.out) / "rollouts"
    out.mkdir(parents=True, exist_ok=True)
    for traj in _selected(split, args.split):
        ro = rollout(traj.human_frames, ckpt.model, ckpt.feature_spec, ckpt.robot_frame_dim)
        with open(out / f"{traj.name}.npz", "wb") as fh:
            np.savez(
                fh,
                human=traj.human_frames.astype("<f4"),
                robot=robot_output_frames(ro, traj.robot_frames.shape[1]).astype("<f4"),
                alphas=ro.alphas.astype("<f4"),
                component_robot=ro.component_actions[..., : traj.robot_frames.shape[1]].astype("<f4"),
            )
    print(f"wrote rollouts to {out}")


def cmd_plot(args, cfg):
    from .inference import rollout
    from .plotting import plot_interaction

    split, ckpt = _load(args)
    if ckpt is None:
        raise UsageError("--checkpoint is required")
    out = Path(args.out) / "plots"
    trajs = _selected(split, args.split)[: args.limit]
    for traj in trajs:
        ro = rollout(traj.human_frames, ckpt.model, ckpt.feature_spec, ckpt.robot_frame_dim)
        title = f"{traj.name} ({traj.action_label})" if traj.action_label else traj.name
        plot_interaction(traj, ro, ckpt.feature_spec, out / f"{traj.name}.{args.format}", title)
    print(f"wrote {len(trajs)} figures to {out}")


def cmd_oracle_check(args, cfg):
    from .oracle_check import run

    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    report = run(seed, args.cases)
    print(f"max covariance-identity residual {report.identity_residual:.3e} over {report.cases} mixtures")
    print(f"max hmm forward vs path-enumeration residual {report.hmm_residual:.3e}")
    return 0 if report.ok else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="moveint", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="YAML config file")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("synth", cmd_synth, "generate a synthetic interaction dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--modes", type=int, help=f"number of interaction modes (taken from {', '.join(MODE_NAMES)})")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n-train", type=int)
    sp.add_argument("--n-test", type=int)
    sp.add_argument("--length", type=int)
    sp.add_argument("--noise", type=float)
    sp.add_argument("--frame-rate", type=float)

    sp = add("prepare-data", cmd_prepare, "ingest and downsample trajectories listed in a manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--target-hz", type=float)

    sp = add("train", cmd_train, "train a model")
    sp.add_argument("--data", required=True, help="dataset manifest.json")
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--step-size", type=float)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n-samples", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--log-interval", type=int)
    sp.add_argument("--plateau-patience", type=int)
    sp.add_argument("--init-checkpoint")
    sp.add_argument("--no-separation", action="store_true")
    sp.add_argument("--latent-dim", type=int)
    sp.add_argument("--n-components", type=int)
    sp.add_argument("--recurrent-width", type=int)
    sp.add_argument("--hidden-widths", help="comma separated, e.g. 40,20")

    for name, fn, help in (
        ("eval", cmd_eval, "prediction MSE report per action"),
        ("rollout", cmd_rollout, "generate robot trajectories and alpha traces"),
        ("plot", cmd_plot, "static trajectory and alpha figures"),
    ):
        sp = add(name, fn, help)
        sp.add_argument("--data", required=True, help="dataset manifest.json")
        sp.add_argument("--checkpoint")
        sp.add_argument("--out", required=True)
        if name == "eval":
            sp.add_argument("--predictor", choices=["model", "oracle", "mean-baseline"], default="model")
            sp.add_argument("--with-baseline", action="store_true")
        else:
            sp.add_argument("--split", choices=["train", "test", "all"], default="test")
        if name == "plot":
            sp.add_argument("--limit", type=int, default=4)
            sp.add_argument("--format", choices=["png", "pdf", "svg"], default="png")

    sp = add("oracle-check", cmd_oracle_check, "verify the regression oracle identities")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--cases", type=int, default=1000)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.fn(args, cfg) or 0
    except (UsageError, ds.DatasetError, CheckpointError, ev.UnitMismatchError) as err:
        print(f"moveint: error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001
        print(f"moveint: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
