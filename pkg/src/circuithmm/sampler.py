"""MCMC for the circuit-driven Poisson-Gamma HMM.

One iteration sweeps the time steps in order.  At each step ``i`` the
latent rates ``z_i`` get a Langevin (MALA) proposal in log space, the
direction flag ``q_i`` is drawn exactly from its three-point conditional,
and ``(rho_i, nu_i, delta_i)`` get a joint adaptive random-walk proposal in
log space.  The concentration ``alpha`` is updated last, unless fixed.

All adaptation (MALA step sizes and diagonal preconditioners, adaptive
Metropolis covariances and scales, the alpha step) runs during burn-in
only and is frozen afterwards.
"""
from __future__ import annotations

import logging
import os
import pickle
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import DegenerateMean, DimensionMismatch, InvalidConfig
from .hmm import ModelParams, ObservationSet, gamma_logpdf
from .transition import DIRECTIONS, TransitionKernel, TransitionParams

logger = logging.getLogger(__name__)

AM_SCALE = 2.38 ** 2 / 3
AM_JITTER = 1e-6
EMPIRICAL_SHRINK = (0.5, 1.0)


@dataclass
class PriorSpec:
    """Gamma(shape, rate) priors on alpha, rho, nu, delta and a categorical prior on q.

    Defaults are the generative settings of the lattice simulation study.
    ``z0`` is ``"ones"``, ``"empirical"`` (shrunk rate over the first four
    time steps) or an explicit per-node list.
    """

    a_alpha: float = 10.0
    b_alpha: float = 2.0
    a_rho: float = 3.0
    b_rho: float = 1.5
    a_nu: float = 3.0
    b_nu: float = 6.0
    a_delta: float = 3.0
    b_delta: float = 6.0
    p_plus: float = 0.25
    p_zero: float = 0.5
    p_minus: float = 0.25
    z0: str | list = "ones"
    alpha_fixed: float | None = None

    def __post_init__(self):
        for name in ("a_alpha", "b_alpha", "a_rho", "b_rho", "a_nu", "b_nu", "a_delta", "b_delta"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be positive")
        probs = (self.p_minus, self.p_zero, self.p_plus)
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-12:
            raise InvalidConfig("direction probabilities must be nonnegative and sum to 1")
        if self.alpha_fixed is not None and not self.alpha_fixed > 0:
            raise InvalidConfig("alpha_fixed must be positive")
        if isinstance(self.z0, str) and self.z0 not in ("ones", "empirical"):
            raise InvalidConfig(f"unknown z0 policy {self.z0!r}")

    @classmethod
    def county(cls) -> "PriorSpec":
        """Hyperparameters used for the county-level fits (alpha fixed at 2)."""
        return cls(a_rho=5, b_rho=2, a_nu=5, b_nu=10, a_delta=5, b_delta=10,
                   p_plus=0.2, p_zero=0.6, p_minus=0.2, z0="empirical", alpha_fixed=2.0)

    @property
    def q_probs(self) -> np.ndarray:
        """Prior probabilities ordered as ``DIRECTIONS`` = (-1, 0, 1)."""
        return np.array([self.p_minus, self.p_zero, self.p_plus])

    def theta_shapes_rates(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([self.a_rho, self.a_nu, self.a_delta]),
                np.array([self.b_rho, self.b_nu, self.b_delta]))

    def resolve_z0(self, obs: ObservationSet) -> np.ndarray:
        n = obs.shape[1]
        if isinstance(self.z0, str):
            if self.z0 == "ones":
                return np.ones(n)
            c, c_t = EMPIRICAL_SHRINK
            k = min(4, obs.shape[0])
            return (obs.y[:k].sum(axis=0) + c) / (obs.t[:k].sum(axis=0) + c_t)
        z0 = np.asarray(self.z0, dtype=float)
        if z0.shape != (n,) or np.any(~(z0 > 0)):
            raise InvalidConfig("explicit z0 must be a positive vector with one entry per node")
        return z0

    def sample_params(self, n_time: int, rng: np.random.Generator) -> ModelParams:
        """Draw ``(q, rho, nu, delta)`` per time step and alpha from the prior."""
        qs = rng.choice(DIRECTIONS, size=n_time, p=self.q_probs)
        rho = rng.gamma(self.a_rho, 1.0 / self.b_rho, size=n_time)
        nu = rng.gamma(self.a_nu, 1.0 / self.b_nu, size=n_time)
        delta = rng.gamma(self.a_delta, 1.0 / self.b_delta, size=n_time)
        alpha = self.alpha_fixed if self.alpha_fixed is not None else rng.gamma(self.a_alpha, 1.0 / self.b_alpha)
        thetas = tuple(TransitionParams(int(q), float(r), float(v), float(d))
                       for q, r, v, d in zip(qs, rho, nu, delta))
        return ModelParams(thetas, float(alpha))


@dataclass
class SamplerConfig:
    n_iterations: int = 15000
    burn_in: int = 5000
    thin: int = 1
    mala_step: float = 0.1
    mala_target: float = 0.574
    precondition: bool = True
    adapt_window: int = 500
    adapt_target: float = 0.3
    theta_step: float = 0.2
    alpha_step: float = 0.1
    alpha_target: float = 0.44
    seed: int = 0
    # disables every likelihood term; z is then held at its initial value
    prior_only: bool = False

    def __post_init__(self):
        if self.n_iterations < 1:
            raise InvalidConfig("n_iterations must be positive")
        if self.burn_in < 0 or self.burn_in >= self.n_iterations:
            raise InvalidConfig("burn_in must satisfy 0 <= burn_in < n_iterations")
        if self.thin < 1:
            raise InvalidConfig("thin must be a positive integer")
        for name in ("adapt_target", "mala_target", "alpha_target"):
            if not 0 < getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must lie in (0, 1)")
        if self.adapt_window < 10:
            raise InvalidConfig("adapt_window must be at least 10")
        if not (self.mala_step > 0 and self.theta_step > 0 and self.alpha_step > 0):
            raise InvalidConfig("initial step sizes must be positive")

    @property
    def n_draws(self) -> int:
        return len(range(self.burn_in, self.n_iterations, self.thin))


@dataclass
class ChainState:
    """Current values of every unknown plus cached transition matrices and means.

    ``mu[i]`` always equals ``M[i] @ z_{i-1}`` (with ``z_{-1} = z0``).
    """

    y: np.ndarray
    t: np.ndarray
    z: np.ndarray
    z0: np.ndarray
    q: np.ndarray
    rho: np.ndarray
    nu: np.ndarray
    delta: np.ndarray
    alpha: float
    M: np.ndarray
    mu: np.ndarray

    @property
    def n_time(self) -> int:
        return self.z.shape[0]

    def z_prev(self, i: int) -> np.ndarray:
        return self.z0 if i == 0 else self.z[i - 1]

    def set_matrix(self, i: int, M: np.ndarray, mu: np.ndarray | None = None):
        self.M[i] = M
        self.mu[i] = M @ self.z_prev(i) if mu is None else mu

    @classmethod
    def initialize(cls, obs: ObservationSet, kernel: TransitionKernel, priors: PriorSpec) -> "ChainState":
        n_time, n = obs.shape
        if n != kernel.n:
            raise DimensionMismatch(f"counts have {n} nodes but the graph has {kernel.n}")
        c, c_t = EMPIRICAL_SHRINK
        z = (obs.y + c) / (obs.t + c_t)
        a, b = priors.theta_shapes_rates()
        rho, nu, delta = (np.full(n_time, m) for m in a / b)
        alpha = priors.alpha_fixed if priors.alpha_fixed is not None else priors.a_alpha / priors.b_alpha
        state = cls(obs.y.astype(float), obs.t.copy(), z, priors.resolve_z0(obs),
                    np.zeros(n_time, dtype=int), rho, nu, delta, float(alpha),
                    np.empty((n_time, n, n)), np.empty((n_time, n)))
        for i in range(n_time):
            F = kernel.flow(0, rho[i])
            state.set_matrix(i, _assemble(F, nu[i], delta[i]))
        return state


def _assemble(F: np.ndarray, nu: float, delta: float) -> np.ndarray:
    M = nu * F
    M.flat[:: M.shape[0] + 1] += delta
    return M


# ---------------------------------------------------------------- latent rates

def _z_logpost(z, y, t, mu, z_next, M_next, alpha):
    lam = z * t
    obs = t > 0
    val = np.sum(y[obs] * np.log(lam[obs]) - lam[obs] - gammaln(y[obs] + 1.0))
    grad = y / z - t
    val += np.sum(gamma_logpdf(z, alpha, mu))
    grad += (alpha - 1.0) / z - alpha / mu
    if z_next is not None:
        mu_n = M_next @ z
        val += np.sum(gamma_logpdf(z_next, alpha, mu_n))
        grad += M_next.T @ (alpha * (z_next / mu_n - 1.0) / mu_n)
    return val, grad


def log_target_z(z_i, y_i, t_i, z_prev, z_next, M_i, M_next, alpha):
    """Full conditional log density of ``z_i`` (up to its normalizer) and its gradient in ``z_i``.

    Sums the Poisson term for ``y_i``, the Gamma transition density of
    ``z_i`` given ``M_i z_prev`` and, unless ``z_next`` is None, the Gamma
    density of ``z_next`` given ``M_next z_i``.
    """
    z_i = np.asarray(z_i, dtype=float)
    mu = np.asarray(M_i, dtype=float) @ np.asarray(z_prev, dtype=float)
    if np.any(~(mu > 0)):
        raise DegenerateMean("transition mean must be strictly positive")
    return _z_logpost(z_i, np.asarray(y_i, dtype=float), np.asarray(t_i, dtype=float), mu,
                      None if z_next is None else np.asarray(z_next, dtype=float),
                      None if M_next is None else np.asarray(M_next, dtype=float), alpha)


@dataclass
class MalaTuning:
    """Per-time-step log step sizes and diagonal preconditioners for the z updates."""

    log_step: np.ndarray
    precond: np.ndarray
    target: float = 0.574
    enabled_precond: bool = True
    n_seen: int = 0
    w_mean: np.ndarray | None = None
    w_m2: np.ndarray | None = None

    @classmethod
    def create(cls, n_time: int, n: int, config: SamplerConfig) -> "MalaTuning":
        return cls(np.full(n_time, np.log(config.mala_step)), np.ones((n_time, n)),
                   config.mala_target, config.precondition)

    def adapt_step(self, i: int, accept_prob: float, iteration: int):
        gain = 0.5 / (iteration + 1) ** 0.6
        self.log_step[i] += gain * (accept_prob - self.target)

    def observe(self, z: np.ndarray):
        """Welford update with the current log rates of every time step."""
        w = np.log(z)
        if self.w_mean is None:
            self.w_mean = np.zeros_like(w)
            self.w_m2 = np.zeros_like(w)
        self.n_seen += 1
        d = w - self.w_mean
        self.w_mean += d / self.n_seen
        self.w_m2 += d * (w - self.w_mean)

    def refresh_precond(self):
        if not self.enabled_precond or self.n_seen < 100:
            return
        var = self.w_m2 / (self.n_seen - 1)
        var = np.maximum(var, 1e-12)
        scale = np.exp(np.mean(np.log(var), axis=1, keepdims=True))
        self.precond = np.clip(var / scale, 1e-2, 1e2)


def mala_update_z(state: ChainState, i: int, tuning: MalaTuning, rng: np.random.Generator,
                  adapt: bool = False, iteration: int = 0) -> bool:
    """One MALA step on ``w = log z_i``; returns whether the proposal was accepted.

    Drift ``(h^2 / 2) P grad`` and noise ``h sqrt(P)`` with diagonal
    preconditioner ``P``; the target includes the log-space Jacobian.
    """
    last = i == state.n_time - 1
    y, t, mu = state.y[i], state.t[i], state.mu[i]
    z_next = None if last else state.z[i + 1]
    M_next = None if last else state.M[i + 1]
    alpha = state.alpha

    def target(w):
        z = np.exp(w)
        val, g = _z_logpost(z, y, t, mu, z_next, M_next, alpha)
        return val + w.sum(), g * z + 1.0

    h = np.exp(tuning.log_step[i])
    P = tuning.precond[i]
    sd = h * np.sqrt(P)
    w = np.log(state.z[i])
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        lp, g = target(w)
        fwd = w + 0.5 * h * h * P * g
        w_new = fwd + sd * rng.standard_normal(w.shape)
        lp_new, g_new = target(w_new)
        bwd = w_new + 0.5 * h * h * P * g_new
        log_q_fwd = -0.5 * np.sum(((w_new - fwd) / sd) ** 2)
        log_q_bwd = -0.5 * np.sum(((w - bwd) / sd) ** 2)
        log_r = lp_new - lp + log_q_bwd - log_q_fwd
    if not np.isfinite(log_r) or not np.all(np.isfinite(w_new)):
        accept_prob = 0.0
    else:
        accept_prob = float(np.exp(min(0.0, log_r)))
    accepted = rng.random() < accept_prob
    if adapt:
        tuning.adapt_step(i, accept_prob, iteration)
    if accepted:
        z_new = np.exp(w_new)
        state.z[i] = z_new
        if not last:
            state.mu[i + 1] = state.M[i + 1] @ z_new
    return accepted


# ---------------------------------------------------------------- direction flag

def q_conditional(state: ChainState, i: int, kernel: TransitionKernel, priors: PriorSpec,
                  prior_only: bool = False) -> tuple[np.ndarray, dict]:
    """Normalized probabilities over ``DIRECTIONS`` and the flow matrices used."""
    with np.errstate(divide="ignore"):
        log_p = np.log(priors.q_probs)
    flows = kernel.flows(state.rho[i])
    mus = {}
    z_prev = state.z_prev(i)
    for k, q in enumerate(DIRECTIONS):
        mu = state.nu[i] * (flows[q] @ z_prev) + state.delta[i] * z_prev
        mus[q] = mu
        if not prior_only:
            log_p[k] += np.sum(gamma_logpdf(state.z[i], state.alpha, mu))
    probs = np.exp(log_p - log_p.max())
    probs /= probs.sum()
    return probs, {"flows": flows, "mus": mus}


def update_q(state: ChainState, i: int, kernel: TransitionKernel, priors: PriorSpec,
             rng: np.random.Generator, prior_only: bool = False) -> int:
    probs, cache = q_conditional(state, i, kernel, priors, prior_only)
    q = int(DIRECTIONS[rng.choice(3, p=probs)])
    state.q[i] = q
    state.set_matrix(i, _assemble(cache["flows"][q], state.nu[i], state.delta[i]), cache["mus"][q])
    return q


# ---------------------------------------------------------------- transition parameters

@dataclass
class ThetaTuning:
    """Adaptive Metropolis state for ``log(rho, nu, delta)`` at every time step."""

    window: int
    history: np.ndarray
    count: np.ndarray
    cov: np.ndarray
    chol: np.ndarray
    log_scale: np.ndarray
    target: float

    @classmethod
    def create(cls, n_time: int, config: SamplerConfig) -> "ThetaTuning":
        cov = np.tile(np.eye(3) * config.theta_step ** 2, (n_time, 1, 1))
        return cls(config.adapt_window, np.zeros((n_time, config.adapt_window, 3)),
                   np.zeros(n_time, dtype=int), cov, np.linalg.cholesky(cov),
                   np.zeros(n_time), config.adapt_target)

    def push(self, i: int, x: np.ndarray):
        self.history[i, self.count[i] % self.window] = x
        self.count[i] += 1

    def refresh(self, i: int):
        k = min(self.count[i], self.window)
        if k < 50:
            return
        emp = np.cov(self.history[i, :k], rowvar=False)
        self.cov[i] = AM_SCALE * emp + AM_JITTER * np.eye(3)
        self.chol[i] = np.linalg.cholesky(self.cov[i])

    def adapt_scale(self, i: int, accept_prob: float, iteration: int):
        gain = 1.0 / (iteration + 1) ** 0.6
        self.log_scale[i] += gain * (accept_prob - self.target)


def _theta_log_target(x, z_i, z_prev, q, kernel, alpha, shapes, rates, prior_only):
    """log posterior of ``x = log(rho, nu, delta)`` including the Jacobian."""
    theta = np.exp(x)
    lp = float(np.sum(shapes * x - rates * theta))
    if prior_only:
        return lp, None
    F = kernel.flow(q, theta[0])
    mu = theta[1] * (F @ z_prev) + theta[2] * z_prev
    return lp + float(np.sum(gamma_logpdf(z_i, alpha, mu))), (F, mu)


def update_theta(state: ChainState, i: int, kernel: TransitionKernel, priors: PriorSpec,
                 tuning: ThetaTuning, rng: np.random.Generator, adapt: bool = False,
                 iteration: int = 0, prior_only: bool = False) -> bool:
    """Joint random-walk Metropolis step on ``log(rho_i, nu_i, delta_i)``."""
    shapes, rates = priors.theta_shapes_rates()
    x = np.log([state.rho[i], state.nu[i], state.delta[i]])
    lp = float(np.sum(shapes * x - rates * np.exp(x)))
    if not prior_only:
        lp += float(np.sum(gamma_logpdf(state.z[i], state.alpha, state.mu[i])))
    step = np.exp(tuning.log_scale[i]) * (tuning.chol[i] @ rng.standard_normal(3))
    x_new = x + step
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if np.all(np.isfinite(np.exp(x_new))) and np.all(np.exp(x_new) > 0):
            lp_new, cache = _theta_log_target(x_new, state.z[i], state.z_prev(i), int(state.q[i]), kernel,
                                              state.alpha, shapes, rates, prior_only)
        else:
            lp_new, cache = -np.inf, None
    log_r = lp_new - lp
    accept_prob = float(np.exp(min(0.0, log_r))) if np.isfinite(log_r) else 0.0
    accepted = rng.random() < accept_prob
    if accepted:
        rho, nu, delta = np.exp(x_new)
        state.rho[i], state.nu[i], state.delta[i] = rho, nu, delta
        if cache is None:
            F = kernel.flow(int(state.q[i]), rho)
            state.set_matrix(i, _assemble(F, nu, delta))
        else:
            F, mu = cache
            state.set_matrix(i, _assemble(F, nu, delta), mu)
        x = x_new
    if adapt:
        tuning.adapt_scale(i, accept_prob, iteration)
        tuning.push(i, x)
    return accepted


# ---------------------------------------------------------------- concentration

def alpha_loglik(alpha: float, z: np.ndarray, mu: np.ndarray) -> float:
    """Sum of Gamma(alpha, alpha/mu) log densities over every cell."""
    N = z.size
    return float(N * (alpha * np.log(alpha) - gammaln(alpha)) - alpha * np.sum(np.log(mu))
                 + (alpha - 1.0) * np.sum(np.log(z)) - alpha * np.sum(z / mu))


def update_alpha(state: ChainState, priors: PriorSpec, log_step: float, rng: np.random.Generator,
                 prior_only: bool = False) -> tuple[bool, float]:
    """Random-walk step on ``log alpha``.  Returns ``(accepted, acceptance probability)``.

    Does nothing when ``priors.alpha_fixed`` is set.
    """
    if priors.alpha_fixed is not None:
        state.alpha = float(priors.alpha_fixed)
        return False, 0.0
    a, b = priors.a_alpha, priors.b_alpha

    def target(al):
        # Gamma prior times Jacobian of the log transform
        lp = a * np.log(al) - b * al
        if not prior_only:
            lp += alpha_loglik(al, state.z, state.mu)
        return lp

    alpha_new = state.alpha * np.exp(np.exp(log_step) * rng.standard_normal())
    if not (np.isfinite(alpha_new) and alpha_new > 0):
        return False, 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        log_r = target(alpha_new) - target(state.alpha)
    accept_prob = float(np.exp(min(0.0, log_r))) if np.isfinite(log_r) else 0.0
    accepted = rng.random() < accept_prob
    if accepted:
        state.alpha = float(alpha_new)
    return accepted, accept_prob


# ---------------------------------------------------------------- chain driver

@dataclass
class PosteriorSamples:
    """Thinned post-burn-in draws plus acceptance and adaptation diagnostics."""

    z_draws: np.ndarray
    q_draws: np.ndarray
    rho_draws: np.ndarray
    nu_draws: np.ndarray
    delta_draws: np.ndarray
    alpha_draws: np.ndarray
    acceptance: dict = field(default_factory=dict)
    adaptation: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.z_draws.shape[0]


class Sampler:
    """Stateful chain; picklable so long runs can be checkpointed and resumed."""

    def __init__(self, obs: ObservationSet, kernel: TransitionKernel, priors: PriorSpec,
                 config: SamplerConfig):
        self.obs = obs
        self.kernel = kernel
        self.priors = priors
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.state = ChainState.initialize(obs, kernel, priors)
        n_time, n = obs.shape
        self.mala = MalaTuning.create(n_time, n, config)
        self.theta_tuning = ThetaTuning.create(n_time, config)
        self.alpha_log_step = float(np.log(config.alpha_step))
        self.iteration = 0
        nd = config.n_draws
        self.draws = {
            "z": np.empty((nd, n_time, n)),
            "q": np.empty((nd, n_time), dtype=np.int8),
            "rho": np.empty((nd, n_time)),
            "nu": np.empty((nd, n_time)),
            "delta": np.empty((nd, n_time)),
            "alpha": np.empty(nd),
        }
        self.n_recorded = 0
        zeros = lambda: np.zeros(n_time, dtype=np.int64)  # noqa: E731
        self.counts = {phase: {"z_acc": zeros(), "theta_acc": zeros(), "alpha_acc": 0, "sweeps": 0}
                       for phase in ("burn_in", "sampling")}
        self.trace = {"iteration": [], "mala_step": [], "theta_scale": [], "alpha_step": []}

    @property
    def done(self) -> bool:
        return self.iteration >= self.config.n_iterations

    def step(self):
        cfg = self.config
        it = self.iteration
        adapt = it < cfg.burn_in
        s, rng = self.state, self.rng
        counts = self.counts["burn_in" if adapt else "sampling"]
        for i in range(s.n_time):
            if not cfg.prior_only:
                counts["z_acc"][i] += mala_update_z(s, i, self.mala, rng, adapt, it)
            update_q(s, i, self.kernel, self.priors, rng, cfg.prior_only)
            counts["theta_acc"][i] += update_theta(s, i, self.kernel, self.priors, self.theta_tuning,
                                                   rng, adapt, it, cfg.prior_only)
        acc, prob = update_alpha(s, self.priors, self.alpha_log_step, rng, cfg.prior_only)
        counts["alpha_acc"] += acc
        counts["sweeps"] += 1

        if adapt:
            if self.priors.alpha_fixed is None:
                self.alpha_log_step += 0.5 / (it + 1) ** 0.6 * (prob - cfg.alpha_target)
            if it >= cfg.burn_in // 10 and not cfg.prior_only:
                self.mala.observe(s.z)
            if (it + 1) % 100 == 0:
                self.mala.refresh_precond()
            if (it + 1) % 50 == 0:
                for i in range(s.n_time):
                    self.theta_tuning.refresh(i)
            if (it + 1) % 100 == 0:
                self.trace["iteration"].append(it + 1)
                self.trace["mala_step"].append(np.exp(self.mala.log_step).tolist())
                self.trace["theta_scale"].append(np.exp(self.theta_tuning.log_scale).tolist())
                self.trace["alpha_step"].append(float(np.exp(self.alpha_log_step)))
        elif (it - cfg.burn_in) % cfg.thin == 0:
            k = self.n_recorded
            d = self.draws
            d["z"][k] = s.z
            d["q"][k] = s.q
            d["rho"][k] = s.rho
            d["nu"][k] = s.nu
            d["delta"][k] = s.delta
            d["alpha"][k] = s.alpha
            self.n_recorded += 1
        self.iteration += 1

    def run(self, checkpoint: str | os.PathLike | None = None, checkpoint_every: int = 1000,
            heartbeat: float = 30.0, progress: Callable[[int, int], None] | None = None) -> PosteriorSamples:
        """Iterate until ``n_iterations``; optionally pickle a checkpoint periodically."""
        last_beat = time.monotonic()
        total = self.config.n_iterations
        try:
            while not self.done:
                self.step()
                if checkpoint is not None and self.iteration % checkpoint_every == 0:
                    self.save(checkpoint)
                now = time.monotonic()
                if now - last_beat > heartbeat:
                    logger.info("iteration %d / %d", self.iteration, total)
                    last_beat = now
                if progress is not None:
                    progress(self.iteration, total)
        except KeyboardInterrupt:
            if checkpoint is not None:
                self.save(checkpoint)
            raise
        if checkpoint is not None:
            self.save(checkpoint)
        return self.samples()

    def save(self, path):
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as fh:
            pickle.dump(self, fh, protocol=pickle.HIGHEST_PROTOCOL)
        os.replace(tmp, path)

    @staticmethod
    def load(path) -> "Sampler":
        with open(path, "rb") as fh:
            return pickle.load(fh)

    def acceptance_rates(self) -> dict:
        out = {}
        for phase, c in self.counts.items():
            sweeps = max(c["sweeps"], 1)
            out[phase] = {
                "z": (c["z_acc"] / sweeps).tolist(),
                "theta": (c["theta_acc"] / sweeps).tolist(),
                "alpha": c["alpha_acc"] / sweeps,
                "sweeps": c["sweeps"],
            }
        return out

    def samples(self) -> PosteriorSamples:
        k = self.n_recorded
        d = self.draws
        meta = {
            "seed": self.config.seed,
            "config": asdict(self.config),
            "priors": asdict(self.priors),
            "node_ids": list(self.kernel.graph.node_ids),
            "iterations_completed": self.iteration,
        }
        adaptation = dict(self.trace)
        adaptation["final_mala_step"] = np.exp(self.mala.log_step).tolist()
        adaptation["final_theta_scale"] = np.exp(self.theta_tuning.log_scale).tolist()
        adaptation["final_alpha_step"] = float(np.exp(self.alpha_log_step))
        return PosteriorSamples(d["z"][:k], d["q"][:k], d["rho"][:k], d["nu"][:k], d["delta"][:k],
                                d["alpha"][:k], self.acceptance_rates(), adaptation, meta)


def run_chain(obs: ObservationSet, kernel: TransitionKernel, priors: PriorSpec,
              config: SamplerConfig, **run_kwargs) -> PosteriorSamples:
    """Run a freshly initialized chain to completion and return the draws."""
    return Sampler(obs, kernel, priors, config).run(**run_kwargs)
