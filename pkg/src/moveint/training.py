"""Trajectory-sequential training loop and checkpoint persistence.

Checkpoints are ``.npz`` archives: one float array per parameter/buffer under
``param/<name>`` plus a JSON document in ``__meta__`` holding the model
config (and its hash), the training config, the feature spec, the training
manifest hash and the per-epoch loss history.  No pickled objects.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import time
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .datasets import DatasetSplit, FeatureSpec, feature_spec_of, manifest_hash, trajectory_windows
from .losses import DEFAULT_BETA, LossBreakdown, total_loss
from .model import ModelConfig, MoVEInt

log = logging.getLogger(__name__)

LOG_FIELDS = ["step", "epoch", "trajectory", "bc", "recon", "kl", "sep_means", "sep_temporal", "sep_entropy", "total", "wall_clock"]


class CheckpointError(ValueError):
    pass


class IncompatibleCheckpointError(CheckpointError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, msg: str, last_good: "Checkpoint"):
        super().__init__(msg)
        self.last_good = last_good


@dataclass
class TrainConfig:
    beta: float = DEFAULT_BETA
    n_samples: int = 1
    epochs: int = 100
    step_size: float = 5e-4
    seed: int = 0
    init_checkpoint: str | None = None
    grad_clip: float | None = 1.0
    log_interval: int = 1
    batch_size: int = 1
    separation: bool = True
    shuffle: bool = True
    plateau_patience: int = 0  # epochs without improvement before stopping; 0 disables
    threads: int = 1
    dtype: str = "float32"
    normalize: bool = True
    recon_reduction: str = "mean"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.n_samples < 1 or self.log_interval < 1 or self.batch_size < 1:
            raise ValueError("n_samples, log_interval and batch_size must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)

    @property
    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32


def config_hash(cfg: ModelConfig) -> str:
    return hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class Checkpoint:
    model: MoVEInt
    model_config: ModelConfig
    feature_spec: FeatureSpec
    train_config: TrainConfig | None = None
    manifest_hash: str = ""
    robot_units: str = "radians"
    robot_frame_dim: int = 0
    history: list[dict] = field(default_factory=list)
    log_rows: list[dict] = field(default_factory=list)

    def meta(self) -> dict:
        return {
            "format": "moveint-checkpoint/1",
            "model_config": self.model_config.to_dict(),
            "model_config_hash": config_hash(self.model_config),
            "feature_spec": self.feature_spec.to_dict(),
            "train_config": asdict(self.train_config) if self.train_config else None,
            "manifest_hash": self.manifest_hash,
            "robot_units": self.robot_units,
            "robot_frame_dim": self.robot_frame_dim,
            "history": self.history,
        }


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in ckpt.model.state_dict().items()}
    arrays["__meta__"] = np.array(json.dumps(ckpt.meta(), sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> Checkpoint:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            params = {k[len("param/"):]: np.array(data[k]) for k in data.files if k.startswith("param/")}
    except (OSError, ValueError, KeyError, EOFError, zipfile.BadZipFile, json.JSONDecodeError) as err:
        raise CheckpointError(f"cannot parse checkpoint {path}: {err}") from err

    cfg = ModelConfig.from_dict(meta["model_config"])
    if meta.get("model_config_hash") != config_hash(cfg):
        raise CheckpointError(f"checkpoint {path} has an inconsistent config hash")
    if expected_config is not None and config_hash(expected_config) != config_hash(cfg):
        raise IncompatibleCheckpointError(
            f"checkpoint config {cfg.to_dict()} is incompatible with requested {expected_config.to_dict()}"
        )
    model = MoVEInt(cfg)
    dtype = next(iter(params.values())).dtype if params else np.float32
    if dtype == np.float64:
        model = model.double()
    state = {k: torch.from_numpy(v) for k, v in params.items()}
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as err:
        raise CheckpointError(f"checkpoint {path} parameters do not match its config: {err}") from err
    model.eval()
    tc = meta.get("train_config")
    return Checkpoint(
        model=model,
        model_config=cfg,
        feature_spec=FeatureSpec.from_dict(meta["feature_spec"]),
        train_config=TrainConfig(**tc) if tc else None,
        manifest_hash=meta.get("manifest_hash", ""),
        robot_units=meta.get("robot_units", "radians"),
        robot_frame_dim=int(meta.get("robot_frame_dim", 0)),
        history=meta.get("history", []),
    )


def prepare_tensors(trajs, spec: FeatureSpec, dtype=torch.float32):
    """Raw (unnormalized) window tensors per trajectory."""
    out = []
    for traj in trajs:
        xh, xr = trajectory_windows(traj, spec)
        out.append((torch.as_tensor(xh, dtype=dtype), torch.as_tensor(xr, dtype=dtype)))
    return out


def infer_model_config(dataset: DatasetSplit, **overrides) -> ModelConfig:
    """Model config with input sizes read off the dataset's feature spec."""
    spec = feature_spec_of(dataset)
    xh, xr = trajectory_windows(dataset.train[0], spec)
    return ModelConfig(human_dim=xh.shape[1], robot_dim=xr.shape[1], **overrides)


def _batches(order: list[int], lengths: list[int], batch_size: int) -> list[list[int]]:
    if batch_size == 1:
        return [[i] for i in order]
    groups: dict[int, list[int]] = {}
    for i in order:
        groups.setdefault(lengths[i], []).append(i)
    out = []
    for idx in groups.values():
        out.extend(idx[k : k + batch_size] for k in range(0, len(idx), batch_size))
    return sorted(out, key=lambda b: order.index(b[0]))


def _write_log(rows: list[dict], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def train(
    dataset: DatasetSplit,
    model_config: ModelConfig | None,
    train_config: TrainConfig,
    out_dir=None,
) -> Checkpoint:
    """Fit the VAE and mixture policy jointly, one trajectory (or batch) per step.

    With ``out_dir`` the checkpoint goes to ``checkpoints/model.npz`` and the
    per-step loss log to ``logs/train.csv``.
    """
    if not dataset.train:
        raise ValueError("training split is empty")
    tc = train_config
    prev_threads = torch.get_num_threads()
    torch.set_num_threads(tc.threads)
    try:
        return _train(dataset, model_config, tc, Path(out_dir) if out_dir else None)
    finally:
        torch.set_num_threads(prev_threads)


def _train(dataset, model_config, tc: TrainConfig, out_dir):
    spec = feature_spec_of(dataset)
    dtype = tc.torch_dtype
    raw = prepare_tensors(dataset.train, spec, dtype)
    if model_config is None:
        model_config = infer_model_config(dataset)
    if raw[0][0].shape[1] != model_config.human_dim or raw[0][1].shape[1] != model_config.robot_dim:
        raise ValueError(
            f"dataset windows ({raw[0][0].shape[1]}, {raw[0][1].shape[1]}) do not match model dims "
            f"({model_config.human_dim}, {model_config.robot_dim})"
        )

    torch.manual_seed(tc.seed)
    gen = torch.Generator().manual_seed(tc.seed)
    rng = np.random.default_rng(tc.seed)

    if tc.init_checkpoint:
        init = load_checkpoint(tc.init_checkpoint, expected_config=model_config)
        model = init.model.to(dtype)
    else:
        model = MoVEInt(model_config).to(dtype)
    if not tc.init_checkpoint and tc.normalize:
        model.fit_normalizer(
            torch.cat([h for h, _ in raw]), torch.cat([r for _, r in raw])
        )
    model.train()
    data = [(model.normalize_human(h), model.normalize_robot(r)) for h, r in raw]

    units = {t.units for t in dataset.train}
    if len(units) != 1:
        raise ValueError(f"mixed robot units in training split: {sorted(units)}")
    ckpt = Checkpoint(
        model=model,
        model_config=model_config,
        feature_spec=spec,
        train_config=tc,
        manifest_hash=manifest_hash(dataset.manifest),
        robot_units=units.pop(),
        robot_frame_dim=spec.robot.frame_dim(dataset.train[0].robot_frames.shape[1]),
    )

    opt = torch.optim.Adam(model.parameters(), lr=tc.step_size)
    lengths = [len(h) for h, _ in data]
    step = 0
    last_good = None
    best, stale = np.inf, 0
    t0 = time.perf_counter()
    for epoch in range(1, tc.epochs + 1):
        order = rng.permutation(len(data)).tolist() if tc.shuffle else list(range(len(data)))
        epoch_total = 0.0
        for batch in _batches(order, lengths, tc.batch_size):
            if len(batch) == 1:
                xh, xr = data[batch[0]]
            else:
                xh = torch.stack([data[i][0] for i in batch])
                xr = torch.stack([data[i][1] for i in batch])
            losses = total_loss(model, xh, xr, tc.beta, tc.n_samples, gen, tc.separation, tc.recon_reduction)
            if not torch.isfinite(losses.total):
                if last_good is not None:
                    model.load_state_dict(last_good)
                if out_dir:
                    save_checkpoint(ckpt, out_dir / "checkpoints" / "last_good.npz")
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, step {step}: {losses.as_floats()}", ckpt
                )
            # parameters that produced a finite loss
            last_good = copy.deepcopy(model.state_dict())
            opt.zero_grad()
            losses.total.backward()
            if tc.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), tc.grad_clip)
            opt.step()
            step += 1
            epoch_total += float(losses.total.detach())
            if step % tc.log_interval == 0:
                row = {"step": step, "epoch": epoch, "trajectory": ";".join(dataset.train[i].name for i in batch)}
                row.update(losses.as_floats())
                row["wall_clock"] = round(time.perf_counter() - t0, 4)
                ckpt.log_rows.append(row)
        epoch_mean = epoch_total / len(data)
        ckpt.history.append({"epoch": epoch, "mean_total": epoch_mean})
        log.debug("epoch %d mean total %.5f", epoch, epoch_mean)
        if tc.plateau_patience:
            if epoch_mean < best - 1e-6 * abs(best):
                best, stale = epoch_mean, 0
            else:
                stale += 1
                if stale >= tc.plateau_patience:
                    log.info("loss plateaued at epoch %d", epoch)
                    break

    model.eval()
    if out_dir:
        save_checkpoint(ckpt, out_dir / "checkpoints" / "model.npz")
        _write_log(ckpt.log_rows, out_dir / "logs" / "train.csv")
    return ckpt
