"""Static figures: 3-D trajectories with decoded components and alpha progressions."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .datasets import FeatureSpec, StreamSpec, TrajectoryPair  # noqa: E402
from .inference import Rollout  # noqa: E402

RCPARAMS = {
    "figure.dpi": 120,
    "savefig.bbox": "tight",
    "savefig.pad_inches": 0.05,
    "axes.linewidth": 0.75,
    "axes.grid": True,
    "grid.linewidth": 0.5,
    "grid.color": "lightgray",
    "lines.linewidth": 1.5,
    "font.size": 9,
    "legend.fontsize": 7,
}
HUMAN_COLOR = "tab:red"
ROBOT_COLOR = "tab:blue"
TRUTH_COLOR = "black"
COMPONENT_COLORS = ["#2ca02c", "#d62790", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]


def _xyz(frames: np.ndarray, stream: StreamSpec) -> np.ndarray:
    """Three columns to draw: the last joint for position streams, the first three angles otherwise."""
    frames = np.asarray(frames)
    if stream.kind == "positions" and stream.joints:
        return frames[..., (stream.joints - 1) * 3 : stream.joints * 3]
    pad = max(0, 3 - frames.shape[-1])
    if pad:
        frames = np.concatenate([frames, np.zeros((*frames.shape[:-1], pad))], axis=-1)
    return frames[..., :3]


def _component_color(k: int) -> str:
    return COMPONENT_COLORS[k % len(COMPONENT_COLORS)]


def plot_interaction(traj: TrajectoryPair, ro: Rollout, spec: FeatureSpec, path, title: str | None = None) -> Path:
    """Observed human path, generated and ground-truth robot paths, per-component decodings, alphas."""
    raw_dim = traj.robot_frames.shape[1]
    with plt.rc_context(RCPARAMS):
        fig = plt.figure(figsize=(11, 3.6))
        ax_h = fig.add_subplot(1, 3, 1, projection="3d")
        ax_r = fig.add_subplot(1, 3, 2, projection="3d")
        ax_a = fig.add_subplot(1, 3, 3)

        h = _xyz(traj.human_frames, spec.human)
        ax_h.plot(*h.T, color=HUMAN_COLOR, label="human (observed)")
        ax_h.set_title("human")

        n = ro.alphas.shape[1]
        for k in range(n):
            comp = _xyz(ro.component_actions[:, k, :raw_dim], spec.robot)
            ax_r.plot(*comp.T, color=_component_color(k), alpha=0.6, lw=1, label=f"component {k}")
        ax_r.plot(*_xyz(traj.robot_frames, spec.robot).T, color=TRUTH_COLOR, label="ground truth")
        ax_r.plot(*_xyz(ro.actions[:, :raw_dim], spec.robot).T, color=ROBOT_COLOR, label="generated")
        ax_r.set_title("robot")
        ax_r.legend(loc="upper left")
        if spec.robot.kind == "positions" and spec.human.kind == "positions":
            ax_r.plot(*h.T, color=HUMAN_COLOR, alpha=0.4)

        t = np.arange(len(ro.alphas))
        for k in range(n):
            ax_a.plot(t, ro.alphas[:, k], color=_component_color(k), label=rf"$\alpha_{k}$")
        ax_a.set_ylim(-0.02, 1.02)
        ax_a.set_xlabel("timestep")
        ax_a.set_ylabel("mixture weight")
        ax_a.legend()
        if title:
            fig.suptitle(title)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_alphas(alphas: np.ndarray, path, title: str | None = None) -> Path:
    with plt.rc_context(RCPARAMS):
        fig, ax = plt.subplots(figsize=(5, 2.5))
        for k in range(alphas.shape[1]):
            ax.plot(alphas[:, k], color=_component_color(k), label=rf"$\alpha_{k}$")
        ax.set_ylim(-0.02, 1.02)
        ax.set_xlabel("timestep")
        ax.legend()
        if title:
            ax.set_title(title)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path)
        plt.close(fig)
    return path
