"""Poisson observations over a Gamma multiplicative latent chain.

    y_ij ~ Poisson(z_ij * t_ij)
    z_i  = (M_i z_{i-1}) * eps_i,   eps_ij ~ Gamma(alpha, alpha)

Gamma distributions are shape-rate throughout, so ``z_ij`` given the past
is Gamma(alpha, alpha / mu_ij) with mean ``mu_ij = (M_i z_{i-1})_j``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .errors import DegenerateMean, DimensionMismatch, InvalidInput, InvariantViolation
from .transition import TransitionKernel, TransitionParams


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Counts ``y`` and efforts ``t`` (hours), both ``n_time x n_node``."""

    y: np.ndarray
    t: np.ndarray
    node_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        y = np.asarray(self.y)
        t = np.asarray(self.t, dtype=float)
        if y.shape != t.shape or y.ndim != 2:
            raise DimensionMismatch(f"counts {y.shape} and efforts {t.shape} must be matching 2-D arrays")
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise InvalidInput("counts must be nonnegative integers")
        if np.any(t < 0) or not np.all(np.isfinite(t)):
            raise InvalidInput("efforts must be finite and nonnegative")
        if np.any((t == 0) & (y > 0)):
            i, j = np.argwhere((t == 0) & (y > 0))[0]
            raise InvariantViolation(f"positive count with zero effort at time {i}, node {j}")
        if self.node_ids is not None and len(self.node_ids) != y.shape[1]:
            raise DimensionMismatch("node_ids length does not match the node axis")
        object.__setattr__(self, "y", y.astype(np.int64))
        object.__setattr__(self, "t", t)

    @property
    def shape(self) -> tuple[int, int]:
        return self.y.shape

    @property
    def observed(self) -> np.ndarray:
        return self.t > 0


@dataclass(frozen=True, eq=False)
class LatentPath:
    z: np.ndarray
    z0: np.ndarray

    def __post_init__(self):
        if np.any(~(np.asarray(self.z) > 0)) or np.any(~(np.asarray(self.z0) > 0)):
            raise InvalidInput("latent rates must be strictly positive")


@dataclass(frozen=True)
class ModelParams:
    thetas: tuple[TransitionParams, ...]
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidInput(f"alpha must be positive, got {self.alpha!r}")
        object.__setattr__(self, "thetas", tuple(self.thetas))

    @property
    def n_time(self) -> int:
        return len(self.thetas)


def gamma_logpdf(z, alpha, mean):
    """Elementwise log density of Gamma(shape=alpha, rate=alpha/mean) at z."""
    return (alpha * np.log(alpha / mean) + (alpha - 1.0) * np.log(z)
            - alpha * z / mean - gammaln(alpha))


def trans_logpdf(z_next: np.ndarray, mean: np.ndarray, alpha: float) -> float:
    mean = np.asarray(mean, dtype=float)
    if np.any(~(mean > 0)):
        raise DegenerateMean("transition mean must be strictly positive")
    return float(np.sum(gamma_logpdf(np.asarray(z_next, dtype=float), alpha, mean)))


def poisson_terms(y, t, z):
    """Per-cell Poisson log pmf of y at rate z*t; cells with t = 0 contribute 0."""
    y = np.asarray(y)
    t = np.asarray(t, dtype=float)
    obs = t > 0
    out = np.zeros(np.broadcast(y, t, z).shape)
    lam = (z * t)[obs]
    out[obs] = y[obs] * np.log(lam) - lam - gammaln(y[obs] + 1.0)
    return out


def obs_loglik(y_i: np.ndarray, t_i: np.ndarray, z_i: np.ndarray) -> float:
    y_i = np.asarray(y_i)
    t_i = np.asarray(t_i, dtype=float)
    if np.any((t_i == 0) & (y_i > 0)):
        raise InvariantViolation("positive count with zero effort")
    return float(np.sum(poisson_terms(y_i, t_i, np.asarray(z_i, dtype=float))))


def log_joint(obs: ObservationSet, path: LatentPath, matrices: Sequence[np.ndarray], alpha: float) -> float:
    """log pi(y_1..n, z_1..n | z_0, M, alpha) as a sum over time steps."""
    total = 0.0
    z_prev = path.z0
    for i, M in enumerate(matrices):
        total += obs_loglik(obs.y[i], obs.t[i], path.z[i])
        total += trans_logpdf(path.z[i], M @ z_prev, alpha)
        z_prev = path.z[i]
    return total


def simulate_efforts(n_time: int, n_node: int, rng: np.random.Generator, rate: float = 0.1) -> np.ndarray:
    """Exponential efforts with the given rate (mean ``1/rate`` hours)."""
    return rng.exponential(1.0 / rate, size=(n_time, n_node))


def simulate_path(kernel: TransitionKernel, params: ModelParams, t: np.ndarray, seed,
                  z0: np.ndarray | None = None) -> tuple[LatentPath, ObservationSet]:
    """Forward-simulate latent rates and counts for the given efforts."""
    rng = np.random.default_rng(seed)
    t = np.asarray(t, dtype=float)
    n_time, n = t.shape
    if n != kernel.n or n_time != params.n_time:
        raise DimensionMismatch(f"efforts {t.shape} vs {params.n_time} steps on {kernel.n} nodes")
    z0 = np.ones(n) if z0 is None else np.asarray(z0, dtype=float)
    alpha = params.alpha
    z = np.empty((n_time, n))
    z_prev = z0
    for i, theta in enumerate(params.thetas):
        mu = kernel.matrix(theta) @ z_prev
        eps = rng.gamma(alpha, 1.0 / alpha, size=n)
        # floor keeps extremely small alpha from producing exact zeros
        z[i] = np.maximum(mu * eps, np.finfo(float).tiny)
        z_prev = z[i]
    y = rng.poisson(z * t)
    return LatentPath(z, z0), ObservationSet(y, t, kernel.graph.node_ids)


def censor_mask(shape: tuple[int, int], fraction: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= fraction < 1.0:
        raise InvalidInput(f"censoring fraction must lie in [0, 1), got {fraction}")
    n_cells = int(np.prod(shape))
    k = int(np.floor(fraction * n_cells))
    mask = np.zeros(n_cells, dtype=bool)
    mask[rng.choice(n_cells, size=k, replace=False)] = True
    return mask.reshape(shape)


def censor(obs: ObservationSet, fraction: float, seed) -> ObservationSet:
    """Zero out counts and efforts on a uniformly random subset of cells."""
    mask = censor_mask(obs.shape, fraction, np.random.default_rng(seed))
    return apply_censoring(obs, mask)


def apply_censoring(obs: ObservationSet, mask: np.ndarray) -> ObservationSet:
    y = np.where(mask, 0, obs.y)
    t = np.where(mask, 0.0, obs.t)
    return ObservationSet(y, t, obs.node_ids)
