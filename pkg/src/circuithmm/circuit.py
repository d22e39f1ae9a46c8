"""Electrical solve on an augmented graph.

Voltages are obtained by fixing the battery and ground potentials and
solving the grounded Laplacian system for the remaining nodes.  Effective
currents between every pair of base nodes follow from those voltages and
the resistance distances of the augmented network.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import IllConditioned, SolveFailed
from .graph import AugmentedGraph

PINV_RTOL = 1e-10
VOLTAGE_RTOL = 1e-12


def pseudoinverse(L: np.ndarray) -> np.ndarray:
    """Moore-Penrose inverse of a connected-graph Laplacian.

    Eigenvalues below ``1e-10 * max eigenvalue`` are treated as zero.  A
    connected graph has exactly one such eigenvalue; more means the input
    is not what it claims to be.
    """
    L = np.asarray(L, dtype=float)
    w, U = np.linalg.eigh(L)
    cutoff = PINV_RTOL * max(abs(w).max(), 1e-300)
    keep = np.abs(w) > cutoff
    if np.count_nonzero(~keep) > 1:
        raise IllConditioned(f"{np.count_nonzero(~keep)} near-zero eigenvalues; expected one")
    Lp = (U[:, keep] / w[keep]) @ U[:, keep].T
    return 0.5 * (Lp + Lp.T)


def resistance_distance(L_plus: np.ndarray) -> np.ndarray:
    """``(e_j - e_k)' L+ (e_j - e_k)`` for all pairs."""
    d = np.diag(L_plus)
    omega = d[:, None] + d[None, :] - 2.0 * L_plus
    np.fill_diagonal(omega, 0.0)
    return np.maximum(omega, 0.0)


def solve_voltages(ag: AugmentedGraph, v_battery: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Node voltages and net injected currents with the battery held at ``v_battery``.

    Returns ``(v, i_net)`` over all ``n + 2`` augmented nodes.  The known
    block is (battery, ground); the unknown voltages solve
    ``L22 v_u = -L21 v_k`` since no current is injected at ordinary nodes.
    """
    L = ag.laplacian()
    n = ag.n
    known = [ag.battery_index, ag.ground_index]
    vk = np.array([float(v_battery), 0.0])
    L22 = L[:n, :n]
    L21 = L[:n, known]
    try:
        vu = np.linalg.solve(L22, -L21 @ vk)
    except np.linalg.LinAlgError as exc:
        raise SolveFailed("grounded Laplacian is singular") from exc
    if not np.all(np.isfinite(vu)):
        raise SolveFailed("non-finite voltages")
    v = np.concatenate([vu, vk])
    i_net = L @ v
    return v, i_net


def currents_matrix(v: np.ndarray, omega: np.ndarray, n: int | None = None) -> np.ndarray:
    """Signed effective currents ``c_jk = (v_k - v_j) / omega_jk``.

    ``c_jk > 0`` is flow from node k toward node j.  Only the first ``n``
    rows and columns (the base nodes) are returned.
    """
    v = np.asarray(v, dtype=float)
    if n is None:
        n = len(v)
    v = v[:n]
    om = omega[:n, :n]
    dv = v[None, :] - v[:, None]
    # equal voltages (e.g. a lattice row) differ only by solver rounding;
    # left alone that noise would be renormalized into spurious flow
    dv[np.abs(dv) <= VOLTAGE_RTOL * np.abs(v).max(initial=0.0)] = 0.0
    C = np.zeros((n, n))
    off = ~np.eye(n, dtype=bool)
    C[off] = dv[off] / om[off]
    return C


@dataclass(frozen=True, eq=False)
class CircuitSolution:
    v: np.ndarray
    i_net: np.ndarray
    Omega: np.ndarray = field(repr=False)
    C: np.ndarray = field(repr=False)
    v_battery: float = 1.0

    @property
    def base_voltages(self) -> np.ndarray:
        return self.v[: self.C.shape[0]]


@dataclass(frozen=True)
class DirectionalCurrents:
    """Positive-voltage flow, negative-voltage flow and the diffusion surrogate."""

    C_pos: np.ndarray
    C_neg: np.ndarray
    C_zero: np.ndarray

    def select(self, q: int) -> np.ndarray:
        if q == 1:
            return self.C_pos
        if q == -1:
            return self.C_neg
        if q == 0:
            return self.C_zero
        raise ValueError(f"direction flag must be -1, 0 or 1, got {q!r}")


def split_directions(C: np.ndarray) -> DirectionalCurrents:
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    C_pos = np.maximum(C, 0.0)
    C_neg = np.maximum(C.T, 0.0)
    C_zero = np.ones((n, n)) - np.eye(n)
    for a in (C_pos, C_neg, C_zero):
        np.fill_diagonal(a, 0.0)
        a.setflags(write=False)
    return DirectionalCurrents(C_pos, C_neg, C_zero)


def solve_circuit(ag: AugmentedGraph, v_battery: float = 1.0) -> CircuitSolution:
    """Voltages, net currents, resistance distances and the currents matrix."""
    omega = _augmented_omega(ag)
    v, i_net = solve_voltages(ag, v_battery)
    C = currents_matrix(v, omega, ag.n)
    return CircuitSolution(v, i_net, omega, C, float(v_battery))


@lru_cache(maxsize=32)
def _augmented_omega(ag: AugmentedGraph) -> np.ndarray:
    omega = resistance_distance(pseudoinverse(ag.laplacian()))
    omega.setflags(write=False)
    return omega


def node_throughput(ag: AugmentedGraph, v: np.ndarray) -> np.ndarray:
    """Current passing through each base node: half the summed |edge current|."""
    A = ag.A_star
    flow = np.abs(A * (v[:, None] - v[None, :]))
    return 0.5 * flow.sum(axis=1)[: ag.n]
