"""Training objectives.

The decoder likelihood is a unit-variance Gaussian per output feature, so
every reconstruction term is ``0.5 * squared error`` and reported values are
exact only up to the dropped additive constant.  By default the per-feature
log-likelihoods are averaged over the window (``reduction="mean"``) rather
than summed; summing scales the reconstruction terms with the window length
and drowns the beta-weighted terms.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import torch

from .model import DiagonalGaussian, MixtureDensity, MoVEInt, ModelError, combine_mixture

DEFAULT_BETA = 0.005


@dataclass
class LossBreakdown:
    bc: torch.Tensor
    recon: torch.Tensor
    kl: torch.Tensor
    sep_means: torch.Tensor
    sep_temporal: torch.Tensor
    sep_entropy: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name).detach()) for f in fields(self)}


def kl_diag_gaussians(q: DiagonalGaussian, p: DiagonalGaussian) -> torch.Tensor:
    """KL(q || p), summed over the last axis."""
    if q.mean.shape[-1] != p.mean.shape[-1]:
        raise ModelError(f"KL dimension mismatch: {q.mean.shape[-1]} vs {p.mean.shape[-1]}")
    ratio = (q.std / p.std) ** 2
    kl = 0.5 * (ratio + ((q.mean - p.mean) / p.std) ** 2 - 1.0 - torch.log(ratio))
    return kl.sum(-1)


def decoder_log_likelihood(x: torch.Tensor, x_hat: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """log N(x; x_hat, I) without the normalizing constant, reduced over features."""
    if x.shape[-1] != x_hat.shape[-1]:
        raise ModelError(f"reconstruction length {x_hat.shape[-1]} != target {x.shape[-1]}")
    sq = (x - x_hat) ** 2
    if reduction == "mean":
        return -0.5 * sq.mean(-1)
    if reduction == "sum":
        return -0.5 * sq.sum(-1)
    raise ValueError(f"unknown reduction {reduction!r}")


def expected_log_likelihood(model: MoVEInt, x_r, dist: DiagonalGaussian, n_samples: int, generator=None, reduction="mean"):
    """Monte-Carlo E_{z ~ dist}[log p(x_r | z)] with reparameterized samples."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    z = dist.rsample(n_samples, generator)
    return decoder_log_likelihood(x_r, model.decode_robot(z), reduction).mean(0)


def elbo(model: MoVEInt, x_r, q: DiagonalGaussian, prior: DiagonalGaussian, beta: float, n_samples: int = 1, generator=None, reduction="mean"):
    """Per-window ELBO: expected reconstruction log-likelihood minus beta * KL(q || prior)."""
    recon = expected_log_likelihood(model, x_r, q, n_samples, generator, reduction)
    return recon - beta * kl_diag_gaussians(q, prior)


def behavior_cloning_loss(model: MoVEInt, x_r, prior: DiagonalGaussian, n_samples: int = 1, generator=None, reduction="mean"):
    """Negative expected decoder log-likelihood under samples from the policy prior."""
    return -expected_log_likelihood(model, x_r, prior, n_samples, generator, reduction)


def _xlogx(p: torch.Tensor) -> torch.Tensor:
    return torch.where(p > 0, p * torch.log(torch.where(p > 0, p, torch.ones_like(p))), torch.zeros_like(p))


def separation_loss(m_t: MixtureDensity, m_prev: MixtureDensity | None):
    """Returns (sep_means, sep_temporal, sep_entropy) for one step (or a batch of steps).

    ``sep_temporal`` is zero when there is no previous step.
    """
    mu = m_t.means
    n = mu.shape[-2]
    d2 = ((mu.unsqueeze(-2) - mu.unsqueeze(-3)) ** 2).sum(-1)
    iu = torch.triu_indices(n, n, offset=1)
    sep_means = torch.exp(-d2[..., iu[0], iu[1]]).sum(-1)
    if m_prev is None:
        sep_temporal = torch.zeros_like(sep_means)
    else:
        drift = ((mu - m_prev.means) ** 2).sum(-1)
        sep_temporal = 1.0 - torch.exp(-drift).mean(-1)
    sep_entropy = _xlogx(m_t.alphas).sum(-1)
    return sep_means, sep_temporal, sep_entropy


def total_loss(
    model: MoVEInt,
    x_h: torch.Tensor,
    x_r: torch.Tensor,
    beta: float = DEFAULT_BETA,
    n_samples: int = 1,
    generator: torch.Generator | None = None,
    separation: bool = True,
    reduction: str = "mean",
) -> LossBreakdown:
    """Trajectory loss summed over timesteps.

    ``x_h`` and ``x_r`` are normalized windows, (T, D) or (B, T, D); a batch
    is summed over trajectories too.  Reconstructions are drawn both from the
    policy prior (behavior cloning) and from the VAE posterior (ELBO), with
    equal weight.
    """
    if x_h.shape[:-1] != x_r.shape[:-1]:
        raise ModelError(f"misaligned human/robot windows: {tuple(x_h.shape)} vs {tuple(x_r.shape)}")
    mix = model.mdn_sequence(x_h)
    prior = combine_mixture(mix)
    q = model.encode_robot(x_r)

    bc = behavior_cloning_loss(model, x_r, prior, n_samples, generator, reduction)
    recon = expected_log_likelihood(model, x_r, q, n_samples, generator, reduction)
    kl = kl_diag_gaussians(q, prior)

    # previous-step mixture along the time axis (second to last of the batch dims)
    t_axis = x_h.dim() - 2
    prev = MixtureDensity(
        mix.means.narrow(t_axis, 0, mix.means.shape[t_axis] - 1),
        mix.stds.narrow(t_axis, 0, mix.stds.shape[t_axis] - 1),
        mix.alphas.narrow(t_axis, 0, mix.alphas.shape[t_axis] - 1),
    )
    sep_m, _, sep_e = separation_loss(mix, None)
    cur = MixtureDensity(
        mix.means.narrow(t_axis, 1, mix.means.shape[t_axis] - 1),
        mix.stds.narrow(t_axis, 1, mix.stds.shape[t_axis] - 1),
        mix.alphas.narrow(t_axis, 1, mix.alphas.shape[t_axis] - 1),
    )
    _, sep_t, _ = separation_loss(cur, prev)

    terms = {
        "bc": bc.sum(),
        "recon": recon.sum(),
        "kl": kl.sum(),
        "sep_means": sep_m.sum(),
        "sep_temporal": sep_t.sum(),
        "sep_entropy": sep_e.sum(),
    }
    sep = terms["sep_means"] + terms["sep_temporal"] + terms["sep_entropy"]
    total = terms["bc"] - (terms["recon"] - beta * terms["kl"])
    if separation:
        total = total + beta * sep
    return LossBreakdown(total=total, **terms)
