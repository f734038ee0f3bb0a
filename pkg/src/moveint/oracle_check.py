"""Randomized self-check of the regression oracle (used by ``moveint oracle-check``)."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.stats import multivariate_normal

from .gmr import GaussianState, HMMSpec, JointGaussianComponent, JointGMM, condition_gmm, hmm_forward_coefficients, simplified_covariance


def random_spd(rng: np.random.Generator, d: int, jitter: float = 0.1) -> np.ndarray:
    a = rng.normal(size=(d, d))
    return a @ a.T + jitter * np.eye(d)


def random_joint_gmm(rng: np.random.Generator, n: int, d_h: int, d_r: int, spread: float = 2.0) -> JointGMM:
    comps = [
        JointGaussianComponent.from_joint(rng.normal(scale=spread, size=d_h + d_r), random_spd(rng, d_h + d_r), d_h)
        for _ in range(n)
    ]
    return JointGMM(comps, rng.dirichlet(np.ones(n)))


def random_simplex(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.dirichlet(np.ones(n))


def random_hmm(rng: np.random.Generator, n: int, d: int) -> HMMSpec:
    states = [GaussianState(rng.normal(scale=1.5, size=d), random_spd(rng, d, 0.3)) for _ in range(n)]
    trans = rng.dirichlet(np.ones(n), size=n)
    return HMMSpec(states, trans, rng.dirichlet(np.ones(n)))


def enumerate_filter(obs: np.ndarray, hmm: HMMSpec) -> np.ndarray:
    """p(state_t | obs_0..t) by summing over every state path (exponential)."""
    obs = np.asarray(obs, dtype=np.float64).reshape(len(obs), -1)
    n = len(hmm.states)
    emit = np.array([[multivariate_normal.pdf(o, s.mean, s.cov) for s in hmm.states] for o in obs])
    out = np.zeros((len(obs), n))
    for t in range(len(obs)):
        for path in itertools.product(range(n), repeat=t + 1):
            p = hmm.initial[path[0]] * emit[0, path[0]]
            for k in range(1, t + 1):
                p *= hmm.transition[path[k - 1], path[k]] * emit[k, path[k]]
            out[t, path[-1]] += p
        out[t] /= out[t].sum()
    return out


@dataclass
class OracleReport:
    identity_residual: float
    hmm_residual: float
    cases: int

    @property
    def ok(self) -> bool:
        return self.identity_residual < 1e-8 and self.hmm_residual < 1e-10


def run(seed: int = 0, n_cases: int = 1000, hmm_cases: int = 20) -> OracleReport:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        n = int(rng.choice([1, 2, 3, 5]))
        d_h, d_r = rng.integers(1, 5, size=2)
        gmm = random_joint_gmm(rng, n, int(d_h), int(d_r))
        z = rng.normal(scale=2.0, size=d_h)
        a = random_simplex(rng, n)
        _, cov = condition_gmm(gmm, z, a)
        worst = max(worst, float(np.abs(simplified_covariance(gmm, z, a) - cov).max()))
    hmm_worst = 0.0
    for _ in range(hmm_cases):
        n, T = int(rng.integers(2, 4)), int(rng.integers(3, 6))
        hmm = random_hmm(rng, n, 1)
        obs = rng.normal(scale=1.5, size=(T, 1))
        diff = np.abs(hmm_forward_coefficients(obs, hmm) - enumerate_filter(obs, hmm)).max()
        hmm_worst = max(hmm_worst, float(diff))
    return OracleReport(worst, hmm_worst, n_cases)
