"""Reactive robot motion generation from streamed human observations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .datasets import FeatureSpec, TrajectoryPair, last_frame, stream_features, window_matrix
from .model import MixtureDensity, MoVEInt, ModelError, RecurrentState, combine_mixture


@dataclass
class ReactiveOutput:
    robot_action: torch.Tensor  # decoded window of the combined prior (normalized units)
    components_decoded: torch.Tensor  # (N, robot_dim)
    alphas: torch.Tensor
    state: RecurrentState
    mixture: MixtureDensity


def _act(model: MoVEInt, mix: MixtureDensity, sample: bool, generator) -> tuple[torch.Tensor, torch.Tensor]:
    prior = combine_mixture(mix)
    z = prior.rsample(1, generator)[0] if sample else prior.mean
    return model.decode_robot(z), model.decode_robot(mix.means)


@torch.no_grad()
def reactive_step(x_h, state: RecurrentState, model: MoVEInt, *, sample=False, generator=None, trajectory_id=None) -> ReactiveOutput:
    """One normalized human window in, one decoded robot window out.

    The action decodes the combined prior mean; each component mean is also
    decoded for inspection.
    """
    x_h = torch.as_tensor(x_h, dtype=model.human_mean.dtype)
    if x_h.shape[-1] != model.cfg.human_dim:
        raise ModelError(f"human window length {x_h.shape[-1]} != {model.cfg.human_dim}")
    mix, new_state = model.mdn_step(x_h, state, trajectory_id)
    action, comps = _act(model, mix, sample, generator)
    return ReactiveOutput(action, comps, mix.alphas, new_state, mix)


@dataclass
class Rollout:
    robot_windows: np.ndarray  # (T, robot_dim), raw units
    actions: np.ndarray  # (T, frame_dim), newest frame of each window
    component_windows: np.ndarray  # (T, N, robot_dim), raw units
    component_actions: np.ndarray  # (T, N, frame_dim)
    alphas: np.ndarray  # (T, N)
    component_means: np.ndarray  # (T, N, latent_dim)
    component_stds: np.ndarray


@torch.no_grad()
def rollout_windows(model: MoVEInt, human_windows, frame_dim: int | None = None, stepwise=False) -> Rollout:
    """Generate from raw (unnormalized) human windows starting at a fresh state."""
    xh = torch.as_tensor(np.asarray(human_windows), dtype=model.human_mean.dtype)
    if xh.dim() != 2 or len(xh) == 0:
        raise ModelError("rollout needs a non-empty (T, D) sequence of human windows")
    xh = model.normalize_human(xh)
    if stepwise:
        state = model.initial_state()
        acts, comps, alphas, means, stds = [], [], [], [], []
        for t in range(len(xh)):
            out = reactive_step(xh[t], state, model)
            state = out.state
            acts.append(out.robot_action)
            comps.append(out.components_decoded)
            alphas.append(out.alphas)
            means.append(out.mixture.means)
            stds.append(out.mixture.stds)
        act, comp = torch.stack(acts), torch.stack(comps)
        mix = MixtureDensity(torch.stack(means), torch.stack(stds), torch.stack(alphas))
    else:
        mix = model.mdn_sequence(xh)
        act, comp = _act(model, mix, False, None)
    robot = model.denormalize_robot(act).numpy()
    comp = model.denormalize_robot(comp).numpy()
    fd = frame_dim or robot.shape[-1]
    return Rollout(
        robot_windows=robot,
        actions=last_frame(robot, fd),
        component_windows=comp,
        component_actions=last_frame(comp, fd),
        alphas=mix.alphas.numpy(),
        component_means=mix.means.numpy(),
        component_stds=mix.stds.numpy(),
    )


def rollout(human_frames, model: MoVEInt, spec: FeatureSpec, frame_dim: int, stepwise=False) -> Rollout:
    """Robot trajectory for a raw human trajectory (T x D_h frames, or a TrajectoryPair)."""
    if isinstance(human_frames, TrajectoryPair):
        human_frames = human_frames.human_frames
    human_frames = np.atleast_2d(np.asarray(human_frames, dtype=np.float64))
    if human_frames.size == 0:
        raise ModelError("empty human trajectory")
    windows = window_matrix(stream_features(human_frames, spec.human), spec.window)
    return rollout_windows(model, windows, frame_dim, stepwise)


def robot_output_frames(ro: Rollout, raw_robot_dim: int) -> np.ndarray:
    """Executed robot frames without any velocity channels."""
    return ro.actions[:, :raw_robot_dim]
