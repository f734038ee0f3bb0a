"""Robot-motion VAE and the recurrent mixture-density policy over its latent space."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn

LOG_STD_MIN = -10.0
LOG_STD_MAX = 3.0
STD_FLOOR = 1e-6


class ModelError(ValueError):
    pass


class StaleStateError(RuntimeError):
    """A recurrent state was fed to a different trajectory than it started on."""


@dataclass
class DiagonalGaussian:
    """Diagonal Gaussian stored as mean and (floored) standard deviation."""

    mean: torch.Tensor
    std: torch.Tensor

    @classmethod
    def from_log_std(cls, mean: torch.Tensor, log_std: torch.Tensor) -> "DiagonalGaussian":
        log_std = torch.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX)
        return cls(mean, torch.exp(log_std) + STD_FLOOR)

    @property
    def log_std(self) -> torch.Tensor:
        return torch.log(self.std)

    @property
    def var(self) -> torch.Tensor:
        return self.std**2

    def rsample(self, n_samples: int, generator: torch.Generator | None = None) -> torch.Tensor:
        """Reparameterized samples, shape (n_samples, *mean.shape)."""
        eps = torch.randn(
            (n_samples, *self.mean.shape),
            generator=generator,
            dtype=self.mean.dtype,
            device=self.mean.device,
        )
        return self.mean + self.std * eps


@dataclass
class MixtureDensity:
    """N diagonal Gaussians over the latent space plus mixture weights.

    ``means``/``stds`` have shape (..., N, d) and ``alphas`` (..., N).
    """

    means: torch.Tensor
    stds: torch.Tensor
    alphas: torch.Tensor

    @property
    def n_components(self) -> int:
        return self.alphas.shape[-1]

    def component(self, i: int) -> DiagonalGaussian:
        return DiagonalGaussian(self.means[..., i, :], self.stds[..., i, :])

    def __getitem__(self, idx) -> "MixtureDensity":
        return MixtureDensity(self.means[idx], self.stds[idx], self.alphas[idx])


def combine_mixture(m: MixtureDensity) -> DiagonalGaussian:
    """Collapse a mixture to one diagonal Gaussian.

    Mean and variance are the alpha-weighted averages of the component means
    and variances; the spread of the means is not added.
    """
    a = m.alphas.unsqueeze(-1)
    mean = (a * m.means).sum(-2)
    var = (a * m.stds**2).sum(-2)
    return DiagonalGaussian(mean, torch.sqrt(var))


@dataclass
class ModelConfig:
    human_dim: int
    robot_dim: int
    hidden_widths: tuple[int, int] = (40, 20)
    latent_dim: int = 5
    n_components: int = 3
    recurrent_width: int = 20
    negative_slope: float = 0.01

    def __post_init__(self):
        self.hidden_widths = tuple(int(w) for w in self.hidden_widths)
        for name in ("human_dim", "robot_dim", "latent_dim", "n_components", "recurrent_width"):
            if int(getattr(self, name)) < 1:
                raise ModelError(f"{name} must be a positive integer")
        if not self.hidden_widths or min(self.hidden_widths) < 1:
            raise ModelError("hidden widths must be positive integers")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def _mlp(sizes, slope: float, final_activation: bool) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        layers.append(nn.Linear(a, b))
        if final_activation or i < len(sizes) - 2:
            layers.append(nn.LeakyReLU(slope))
    return nn.Sequential(*layers)


def _check_dim(x: torch.Tensor, d: int, what: str) -> None:
    if x.shape[-1] != d:
        raise ModelError(f"{what} expects feature length {d}, got {x.shape[-1]}")


class RobotVAE(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        widths = list(cfg.hidden_widths)
        self.encoder = _mlp([cfg.robot_dim, *widths], cfg.negative_slope, True)
        self.enc_mean = nn.Linear(widths[-1], cfg.latent_dim)
        self.enc_log_std = nn.Linear(widths[-1], cfg.latent_dim)
        self.decoder = _mlp([cfg.latent_dim, *reversed(widths), cfg.robot_dim], cfg.negative_slope, False)

    def encode(self, x_r: torch.Tensor) -> DiagonalGaussian:
        _check_dim(x_r, self.cfg.robot_dim, "robot encoder")
        h = self.encoder(x_r)
        return DiagonalGaussian.from_log_std(self.enc_mean(h), self.enc_log_std(h))

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        _check_dim(z, self.cfg.latent_dim, "robot decoder")
        return self.decoder(z)


@dataclass
class RecurrentState:
    hidden: torch.Tensor
    trajectory_id: object = None
    steps: int = 0


class MixturePolicy(nn.Module):
    """Human window -> latent mixture.

    Component means/log-stds come from a feed-forward trunk shaped like the
    robot encoder; the trunk features also drive a single-layer GRU whose
    output gives the mixture weights through a linear + softmax head.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        widths = list(cfg.hidden_widths)
        n, d = cfg.n_components, cfg.latent_dim
        self.trunk = _mlp([cfg.human_dim, *widths], cfg.negative_slope, True)
        self.means = nn.Linear(widths[-1], n * d)
        self.log_stds = nn.Linear(widths[-1], n * d)
        self.gru = nn.GRU(widths[-1], cfg.recurrent_width, num_layers=1, batch_first=True)
        self.alpha_head = nn.Linear(cfg.recurrent_width, n)

    def initial_state(self, trajectory_id=None, batch_shape=()) -> RecurrentState:
        p = self.alpha_head.weight
        hidden = torch.zeros((1, *batch_shape, self.cfg.recurrent_width), dtype=p.dtype, device=p.device)
        return RecurrentState(hidden, trajectory_id, 0)

    def _components(self, feats: torch.Tensor):
        n, d = self.cfg.n_components, self.cfg.latent_dim
        means = self.means(feats).unflatten(-1, (n, d))
        log_stds = self.log_stds(feats).unflatten(-1, (n, d))
        g = DiagonalGaussian.from_log_std(means, log_stds)
        return g.mean, g.std

    def forward(self, x_h: torch.Tensor, h0: torch.Tensor | None = None):
        """Unrolled pass over a sequence.

        ``x_h`` is (T, D) or (B, T, D).  Returns the MixtureDensity for every
        step and the final GRU hidden state.
        """
        _check_dim(x_h, self.cfg.human_dim, "mixture policy")
        batched = x_h.dim() == 3
        seq = x_h if batched else x_h.unsqueeze(0)
        feats = self.trunk(seq)
        if h0 is not None and not batched:
            h0 = h0.reshape(1, 1, -1)
        out, h_n = self.gru(feats, h0)
        alphas = torch.softmax(self.alpha_head(out), dim=-1)
        means, stds = self._components(feats)
        mix = MixtureDensity(means, stds, alphas)
        if not batched:
            mix = mix[0]
            h_n = h_n.reshape(1, -1)
        return mix, h_n


class MoVEInt(nn.Module):
    """Robot VAE regularized by, and decoded from, a human-conditioned mixture policy."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.vae = RobotVAE(cfg)
        self.policy = MixturePolicy(cfg)
        # feature standardization, fitted on training data
        self.register_buffer("human_mean", torch.zeros(cfg.human_dim))
        self.register_buffer("human_scale", torch.ones(cfg.human_dim))
        self.register_buffer("robot_mean", torch.zeros(cfg.robot_dim))
        self.register_buffer("robot_scale", torch.ones(cfg.robot_dim))

    def encode_robot(self, x_r: torch.Tensor) -> DiagonalGaussian:
        return self.vae.encode(x_r)

    def decode_robot(self, z: torch.Tensor) -> torch.Tensor:
        return self.vae.decode(z)

    def initial_state(self, trajectory_id=None) -> RecurrentState:
        return self.policy.initial_state(trajectory_id)

    def mdn_step(
        self, x_h: torch.Tensor, state: RecurrentState, trajectory_id=None
    ) -> tuple[MixtureDensity, RecurrentState]:
        """Advance the policy by one timestep on a single window (D,)."""
        if trajectory_id is not None and state.trajectory_id is not None and state.trajectory_id != trajectory_id:
            raise StaleStateError(
                f"recurrent state belongs to trajectory {state.trajectory_id!r}, not {trajectory_id!r}"
            )
        x_h = torch.as_tensor(x_h, dtype=self.human_mean.dtype)
        mix, h = self.policy(x_h.reshape(1, -1), state.hidden.reshape(1, -1))
        tag = state.trajectory_id if state.trajectory_id is not None else trajectory_id
        return mix[0], RecurrentState(h.reshape(state.hidden.shape), tag, state.steps + 1)

    def mdn_sequence(self, x_h: torch.Tensor) -> MixtureDensity:
        """Whole-trajectory policy from a zero state; (T, D) or (B, T, D)."""
        return self.policy(x_h)[0]

    # standardization helpers; inputs are raw windows
    def normalize_human(self, x):
        return (x - self.human_mean) / self.human_scale

    def normalize_robot(self, x):
        return (x - self.robot_mean) / self.robot_scale

    def denormalize_robot(self, x):
        return x * self.robot_scale + self.robot_mean

    def fit_normalizer(self, human_windows: torch.Tensor, robot_windows: torch.Tensor, min_scale=1e-3):
        with torch.no_grad():
            for x, mean, scale in (
                (human_windows, self.human_mean, self.human_scale),
                (robot_windows, self.robot_mean, self.robot_scale),
            ):
                x = torch.as_tensor(x, dtype=mean.dtype).reshape(-1, mean.shape[0])
                mean.copy_(x.mean(0))
                scale.copy_(torch.clamp(x.std(0, unbiased=False), min=min_scale))
