"""Exact Gaussian Mixture Regression and HMM forward coefficients.

Reference machinery for the learned mixture policy: conditioning a joint
human/robot Gaussian mixture on the human block, and computing temporally
filtered mixture weights with an HMM forward pass.  Everything here is plain
numpy and float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

PD_TOL = 1e-9
SIMPLEX_TOL = 1e-9


class GMRNumericalError(ArithmeticError):
    def __init__(self, component: int, msg: str):
        super().__init__(f"component {component}: {msg}")
        self.component = component


def _check_pd(cov: np.ndarray, what: str) -> None:
    if not np.allclose(cov, cov.T, atol=1e-10):
        raise ValueError(f"{what} is not symmetric")
    if np.linalg.eigvalsh(cov).min() <= PD_TOL:
        raise ValueError(f"{what} is not positive definite")


@dataclass
class JointGaussianComponent:
    mu_h: np.ndarray
    mu_r: np.ndarray
    Sigma_hh: np.ndarray
    Sigma_hr: np.ndarray
    Sigma_rr: np.ndarray
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.mu_h = np.atleast_1d(np.asarray(self.mu_h, dtype=np.float64))
        self.mu_r = np.atleast_1d(np.asarray(self.mu_r, dtype=np.float64))
        dh, dr = len(self.mu_h), len(self.mu_r)
        self.Sigma_hh = np.asarray(self.Sigma_hh, dtype=np.float64).reshape(dh, dh)
        self.Sigma_hr = np.asarray(self.Sigma_hr, dtype=np.float64).reshape(dh, dr)
        self.Sigma_rr = np.asarray(self.Sigma_rr, dtype=np.float64).reshape(dr, dr)
        if self.validate:
            _check_pd(self.covariance, "joint covariance")

    @property
    def Sigma_rh(self) -> np.ndarray:
        return self.Sigma_hr.T

    @property
    def mean(self) -> np.ndarray:
        return np.concatenate([self.mu_h, self.mu_r])

    @property
    def covariance(self) -> np.ndarray:
        return np.block([[self.Sigma_hh, self.Sigma_hr], [self.Sigma_rh, self.Sigma_rr]])

    @classmethod
    def from_joint(cls, mean, cov, d_h: int) -> "JointGaussianComponent":
        mean = np.asarray(mean, dtype=np.float64)
        cov = np.asarray(cov, dtype=np.float64)
        return cls(mean[:d_h], mean[d_h:], cov[:d_h, :d_h], cov[:d_h, d_h:], cov[d_h:, d_h:])

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "cov": self.covariance.tolist(), "d_h": len(self.mu_h)}

    @classmethod
    def from_dict(cls, d: dict) -> "JointGaussianComponent":
        return cls.from_joint(d["mean"], d["cov"], int(d["d_h"]))


def _check_simplex(p: np.ndarray, what: str) -> None:
    if (p < -SIMPLEX_TOL).any() or abs(p.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"{what} must be nonnegative and sum to 1 (sum={p.sum()!r})")


@dataclass
class JointGMM:
    components: list[JointGaussianComponent]
    priors: np.ndarray

    def __post_init__(self):
        self.priors = np.asarray(self.priors, dtype=np.float64)
        if len(self.priors) != len(self.components) or not self.components:
            raise ValueError("need one prior per component and at least one component")
        _check_simplex(self.priors, "priors")

    @property
    def n_components(self) -> int:
        return len(self.components)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``n`` joint samples; returns (human block, robot block)."""
        labels = rng.choice(self.n_components, size=n, p=self.priors)
        d_h = len(self.components[0].mu_h)
        out = np.empty((n, d_h + len(self.components[0].mu_r)))
        for i, comp in enumerate(self.components):
            idx = np.flatnonzero(labels == i)
            out[idx] = rng.multivariate_normal(comp.mean, comp.covariance, size=len(idx))
        return out[:, :d_h], out[:, d_h:]

    def to_dict(self) -> dict:
        return {"components": [c.to_dict() for c in self.components], "priors": self.priors.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "JointGMM":
        return cls([JointGaussianComponent.from_dict(c) for c in d["components"]], d["priors"])


def _gains(gmm: JointGMM, z_h, alphas) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Weights, per-component gains K_i and conditional means."""
    z_h = np.atleast_1d(np.asarray(z_h, dtype=np.float64))
    alphas = np.asarray(alphas, dtype=np.float64)
    if len(alphas) != gmm.n_components:
        raise ValueError(f"expected {gmm.n_components} alphas, got {len(alphas)}")
    _check_simplex(alphas, "alphas")
    gains, means = [], []
    for i, c in enumerate(gmm.components):
        if np.linalg.cond(c.Sigma_hh) > 1.0 / np.finfo(np.float64).eps:
            raise GMRNumericalError(i, "human covariance block is singular")
        # K = Sigma_rh Sigma_hh^-1, via a solve on the transpose
        K = np.linalg.solve(c.Sigma_hh, c.Sigma_hr).T
        gains.append(K)
        means.append(c.mu_r + K @ (z_h - c.mu_h))
    return alphas, gains, means


def condition_gmm(gmm: JointGMM, z_h, alphas) -> tuple[np.ndarray, np.ndarray]:
    """Conditional robot mean and covariance given the human block ``z_h``.

    The covariance includes the spread of the per-component conditional means
    around the mixture mean.
    """
    alphas, gains, means = _gains(gmm, z_h, alphas)
    mean = sum(a * m for a, m in zip(alphas, means))
    d_r = len(mean)
    cov = np.zeros((d_r, d_r))
    for a, c, K, m in zip(alphas, gmm.components, gains, means):
        dev = m - mean
        cov += a * (c.Sigma_rr - K @ c.Sigma_hr + np.outer(dev, dev))
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def simplified_covariance(gmm: JointGMM, z_h, alphas) -> np.ndarray:
    """Second-moment form: sum_i a_i (S_i + m_i m_i^T) - m m^T."""
    alphas, gains, means = _gains(gmm, z_h, alphas)
    mean = sum(a * m for a, m in zip(alphas, means))
    d_r = len(mean)
    acc = np.zeros((d_r, d_r))
    for a, c, K, m in zip(alphas, gmm.components, gains, means):
        acc += a * (c.Sigma_rr - K @ c.Sigma_hr + np.outer(m, m))
    cov = acc - np.outer(mean, mean)
    return 0.5 * (cov + cov.T)


def responsibilities(gmm: JointGMM, z_h) -> np.ndarray:
    """Static mixture weights p(i | z_h) from the human marginals."""
    z_h = np.atleast_1d(np.asarray(z_h, dtype=np.float64))
    logp = np.array(
        [
            np.log(max(p, 1e-300)) + multivariate_normal.logpdf(z_h, c.mu_h, c.Sigma_hh)
            for p, c in zip(gmm.priors, gmm.components)
        ]
    )
    return np.exp(logp - logsumexp(logp))


@dataclass
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        d = len(self.mean)
        self.cov = np.asarray(self.cov, dtype=np.float64).reshape(d, d)
        _check_pd(self.cov, "state covariance")

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        return multivariate_normal.logpdf(x, self.mean, self.cov)


@dataclass
class HMMSpec:
    states: list[GaussianState]
    transition: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.initial = np.asarray(self.initial, dtype=np.float64)
        n = len(self.states)
        if self.transition.shape != (n, n) or self.initial.shape != (n,):
            raise ValueError(f"transition must be {n}x{n} and initial length {n}")
        for row in self.transition:
            _check_simplex(row, "transition row")
        _check_simplex(self.initial, "initial distribution")

    @classmethod
    def from_gmm_human(cls, gmm: JointGMM, transition, initial=None) -> "HMMSpec":
        """HMM over the human marginals of a joint mixture."""
        states = [GaussianState(c.mu_h, c.Sigma_hh) for c in gmm.components]
        return cls(states, transition, gmm.priors if initial is None else initial)

    def to_dict(self) -> dict:
        return {
            "states": [{"mean": s.mean.tolist(), "cov": s.cov.tolist()} for s in self.states],
            "transition": self.transition.tolist(),
            "initial": self.initial.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HMMSpec":
        return cls([GaussianState(s["mean"], s["cov"]) for s in d["states"]], d["transition"], d["initial"])


def hmm_forward_coefficients(latent_obs, hmm: HMMSpec) -> np.ndarray:
    """Normalized forward variables, one row per timestep (T x N).

    Each row is renormalized so it can be used directly as mixture weights.
    """
    obs = np.asarray(latent_obs, dtype=np.float64)
    if obs.ndim == 1:
        obs = obs[:, None]
    if not np.isfinite(obs).all():
        raise ValueError("observations must be finite")
    log_emit = np.stack([s.logpdf(obs).reshape(len(obs)) for s in hmm.states], axis=1)
    with np.errstate(divide="ignore"):
        log_T = np.log(hmm.transition)
        log_prev = np.log(hmm.initial)
    out = np.empty_like(log_emit)
    for t in range(len(obs)):
        if t > 0:
            log_prev = logsumexp(out_log[:, None] + log_T, axis=0)
        row = log_emit[t] + log_prev
        out_log = row - logsumexp(row)
        out[t] = np.exp(out_log)
    return out
