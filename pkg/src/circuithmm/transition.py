"""Transition matrices built from directional currents and distances.

    M = nu * scale_col(C_dir / D**rho) + delta * I

where ``C_dir`` is the positive-flow, negative-flow or diffusion matrix
selected by the direction flag ``q``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .circuit import CircuitSolution, DirectionalCurrents, solve_circuit, split_directions
from .errors import DimensionMismatch, DivideByZero, InvalidInput
from .graph import AugmentedGraph, SpatialGraph, augment, distance_matrix

DIRECTIONS = (-1, 0, 1)


@dataclass(frozen=True)
class TransitionParams:
    q: int
    rho: float
    nu: float
    delta: float

    def __post_init__(self):
        if self.q not in DIRECTIONS:
            raise InvalidInput(f"q must be one of {DIRECTIONS}, got {self.q!r}")
        for name in ("rho", "nu", "delta"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise InvalidInput(f"{name} must be positive, got {val!r}")

    @classmethod
    def limiting(cls, q: int, rho: float, nu: float, delta: float) -> "TransitionParams":
        """Bypass positivity checks (for limiting-case tests such as ``nu = 0``)."""
        obj = object.__new__(cls)
        for k, v in dict(q=q, rho=rho, nu=nu, delta=delta).items():
            object.__setattr__(obj, k, v)
        return obj


def safe_divide(N: np.ndarray, D_pow: np.ndarray) -> np.ndarray:
    """Elementwise ``N / D_pow`` with ``0 / 0 = 0``."""
    N = np.asarray(N, dtype=float)
    D_pow = np.asarray(D_pow, dtype=float)
    if N.shape != D_pow.shape:
        raise DimensionMismatch(f"shapes {N.shape} and {D_pow.shape} differ")
    zero = D_pow == 0
    if np.any(zero & (N != 0)):
        raise DivideByZero("nonzero numerator over zero denominator")
    return np.divide(N, D_pow, out=np.zeros_like(N), where=~zero)


def scale_col(M: np.ndarray) -> np.ndarray:
    """Rescale columns to sum to one; all-zero columns stay zero."""
    M = np.asarray(M, dtype=float)
    if np.any(M < 0):
        raise InvalidInput("scale_col expects a nonnegative matrix")
    s = M.sum(axis=0)
    return np.divide(M, s, out=np.zeros_like(M), where=s > 0)


def power_distance(D: np.ndarray, rho: float, log_D: np.ndarray | None = None) -> np.ndarray:
    """``D ** rho`` on positive entries via exp(rho * log D); zeros stay zero."""
    D = np.asarray(D, dtype=float)
    pos = D > 0
    if log_D is None:
        log_D = np.zeros_like(D)
        log_D[pos] = np.log(D[pos])
    return np.exp(rho * log_D, out=np.zeros_like(D), where=pos)


def flow_matrix(q: int, rho: float, dc: DirectionalCurrents, D: np.ndarray,
                log_D: np.ndarray | None = None) -> np.ndarray:
    """``scale_col(C_dir / D**rho)`` for direction flag ``q``."""
    C = dc.select(q)
    if C.shape != np.shape(D):
        raise DimensionMismatch(f"currents {C.shape} vs distances {np.shape(D)}")
    return scale_col(safe_divide(C, power_distance(D, rho, log_D)))


def build_transition(p: TransitionParams, dc: DirectionalCurrents, D: np.ndarray) -> np.ndarray:
    F = flow_matrix(p.q, p.rho, dc, D)
    return p.nu * F + p.delta * np.eye(F.shape[0])


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    """Everything needed to evaluate transition matrices on one graph.

    Bundles the graph, the circuit solution for its terminal configuration,
    the directional currents and the centroid distances.  ``flows`` shares a
    single ``D**rho`` across the three directions; results are identical to
    :func:`build_transition`.
    """

    graph: SpatialGraph
    augmented: AugmentedGraph
    circuit: CircuitSolution = field(repr=False)
    currents: DirectionalCurrents = field(repr=False)
    D: np.ndarray = field(repr=False)
    log_D: np.ndarray = field(repr=False)

    @classmethod
    def from_graph(cls, graph: SpatialGraph, battery: Sequence[str], ground: Sequence[str],
                   battery_conductance: float = 1.0, ground_conductance: float = 1.0) -> "TransitionKernel":
        ag = augment(graph, battery, ground, battery_conductance, ground_conductance)
        sol = solve_circuit(ag, 1.0)
        D = distance_matrix(graph)
        log_D = np.zeros_like(D)
        pos = D > 0
        log_D[pos] = np.log(D[pos])
        log_D.setflags(write=False)
        return cls(graph, ag, sol, split_directions(sol.C), D, log_D)

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def voltages(self) -> np.ndarray:
        return self.circuit.base_voltages

    def flow(self, q: int, rho: float) -> np.ndarray:
        return flow_matrix(q, rho, self.currents, self.D, self.log_D)

    def flows(self, rho: float) -> dict[int, np.ndarray]:
        D_pow = power_distance(self.D, rho, self.log_D)
        return {q: scale_col(safe_divide(self.currents.select(q), D_pow)) for q in DIRECTIONS}

    def matrix(self, p: TransitionParams) -> np.ndarray:
        return p.nu * self.flow(p.q, p.rho) + p.delta * np.eye(self.n)
