"""Prediction-error reports over held-out trajectories.

Protocol: for every test trajectory, roll the policy out from the human side,
take the squared error against the recorded robot frames, and average over
timesteps and output dimensions.  Per action label, the report gives the
mean and the population standard deviation of those per-trajectory values.
Position data is scored in centimetres, joint angles in radians.
"""
from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .datasets import DatasetSplit, TrajectoryPair
from .inference import robot_output_frames, rollout
from .training import Checkpoint

REPORT_HEADER = (
    "# per-trajectory MSE averaged over timesteps and robot dimensions; "
    "per action: mean and population std over trajectories; meters scored in cm"
)
UNIT_SCALE = {"meters": 100.0, "radians": 1.0}
REPORT_UNITS = {"meters": "cm", "radians": "rad"}


class UnitMismatchError(ValueError):
    pass


@dataclass
class Predictor:
    """Maps a trajectory to predicted robot frames (T x D_r, dataset units)."""

    fn: Callable[[TrajectoryPair], np.ndarray]
    units: str | None = None
    name: str = "model"

    def __call__(self, traj: TrajectoryPair) -> np.ndarray:
        return self.fn(traj)


def model_predictor(ckpt: Checkpoint) -> Predictor:
    def predict(traj):
        ro = rollout(traj.human_frames, ckpt.model, ckpt.feature_spec, ckpt.robot_frame_dim)
        return robot_output_frames(ro, traj.robot_frames.shape[1])

    return Predictor(predict, ckpt.robot_units, "moveint")


def oracle_predictor() -> Predictor:
    return Predictor(lambda traj: traj.robot_frames.copy(), None, "oracle")


def zero_predictor() -> Predictor:
    return Predictor(lambda traj: np.zeros_like(traj.robot_frames), None, "zero")


def mean_trajectory_predictor(train: Sequence[TrajectoryPair]) -> Predictor:
    """Predicts the per-timestep mean of the training robot trajectories.

    Beyond the longest training trajectory the last mean frame is held.
    """
    if not train:
        raise ValueError("mean baseline needs training trajectories")
    T = max(len(t) for t in train)
    D = train[0].robot_frames.shape[1]
    acc, cnt = np.zeros((T, D)), np.zeros((T, 1))
    for traj in train:
        acc[: len(traj)] += traj.robot_frames
        cnt[: len(traj)] += 1
    mean = acc / cnt

    def predict(traj):
        idx = np.minimum(np.arange(len(traj)), T - 1)
        return mean[idx]

    return Predictor(predict, train[0].units, "mean-baseline")


def trajectory_mse(pred: np.ndarray, truth: np.ndarray, units: str) -> float:
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth {truth.shape}")
    scale = UNIT_SCALE[units]
    return float(np.mean(((pred - truth) * scale) ** 2))


def mse_report(predictor: Predictor, dataset: DatasetSplit | Sequence[TrajectoryPair]) -> list[dict]:
    """One row per action label (sorted), plus an ``all`` row."""
    trajs = dataset.test if isinstance(dataset, DatasetSplit) else list(dataset)
    if not trajs:
        raise ValueError("test split is empty")
    per_action: dict[str, list[float]] = defaultdict(list)
    units = set()
    for traj in trajs:
        if predictor.units is not None and predictor.units != traj.units:
            raise UnitMismatchError(
                f"predictor emits {predictor.units} but trajectory {traj.name!r} is in {traj.units}"
            )
        units.add(traj.units)
        err = trajectory_mse(predictor(traj), traj.robot_frames, traj.units)
        per_action[traj.action_label or "unlabeled"].append(err)
    unit = REPORT_UNITS[units.pop()] if len(units) == 1 else "mixed"
    rows = []
    for label in sorted(per_action):
        rows.append(_row(label, per_action[label], unit))
    rows.append(_row("all", [v for vals in per_action.values() for v in vals], unit))
    return rows


def baseline_mse(dataset: DatasetSplit) -> list[dict]:
    return mse_report(mean_trajectory_predictor(dataset.train), dataset)


def _row(label: str, values: list[float], unit: str) -> dict:
    v = np.asarray(values)
    mean, std = float(v.mean()), float(v.std())
    return {"action": label, "mse_mean": mean, "mse_std": std, "n": len(v), "units": unit, "formatted": format_pm(mean, std)}


def format_pm(mean: float, std: float) -> str:
    return f"{mean:.3f} ± {std:.3f}"


def write_report(rows: list[dict], path, method: str = "moveint") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(REPORT_HEADER + "\n")
        writer = csv.DictWriter(fh, fieldnames=["method", "action", "mse_mean", "mse_std", "n", "units", "formatted"])
        writer.writeheader()
        for row in rows:
            writer.writerow({"method": method, **row})
    return path


def read_report(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def format_table(rows: list[dict], method: str = "moveint") -> str:
    width = max(len(r["action"]) for r in rows)
    lines = [f"{'action'.ljust(width)}  {method} ({rows[0]['units']})"]
    lines += [f"{r['action'].ljust(width)}  {r['formatted']}" for r in rows]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# mixture diagnostics
# ---------------------------------------------------------------------------


def _rollouts(ckpt: Checkpoint, trajs):
    return [rollout(t.human_frames, ckpt.model, ckpt.feature_spec, ckpt.robot_frame_dim) for t in trajs]


def component_mode_map(ckpt: Checkpoint, trajs: Sequence[TrajectoryPair], t_min: int = 10) -> dict[int, str]:
    """Majority mode label for each component's argmax-alpha timesteps."""
    votes: dict[int, Counter] = defaultdict(Counter)
    for traj, ro in zip(trajs, _rollouts(ckpt, trajs)):
        for k in np.argmax(ro.alphas[t_min + 1 :], axis=1):
            votes[int(k)][traj.action_label] += 1
    return {k: c.most_common(1)[0][0] for k, c in votes.items()}


def mode_agreement(ckpt: Checkpoint, fit: Sequence[TrajectoryPair], test: Sequence[TrajectoryPair], t_min: int = 10) -> float:
    """Fraction of steady-state test steps (t > t_min) whose argmax component maps to the true mode.

    The component-to-mode map is fitted on ``fit`` only.
    """
    mapping = component_mode_map(ckpt, fit, t_min)
    hits = total = 0
    for traj, ro in zip(test, _rollouts(ckpt, test)):
        ks = np.argmax(ro.alphas[t_min + 1 :], axis=1)
        hits += sum(mapping.get(int(k)) == traj.action_label for k in ks)
        total += len(ks)
    return hits / max(total, 1)


def component_spread(ckpt: Checkpoint, trajs: Sequence[TrajectoryPair]) -> float:
    """Mean pairwise Euclidean distance between latent component means over all windows."""
    dists = []
    for ro in _rollouts(ckpt, trajs):
        mu = ro.component_means
        n = mu.shape[1]
        iu = np.triu_indices(n, 1)
        d = np.linalg.norm(mu[:, :, None, :] - mu[:, None, :, :], axis=-1)[:, iu[0], iu[1]]
        dists.append(d.reshape(-1))
    return float(np.concatenate(dists).mean())
