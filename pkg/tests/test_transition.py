import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from circuithmm.circuit import split_directions
from circuithmm.errors import DivideByZero, InvalidInput
from circuithmm.graph import build_graph
from circuithmm.transition import (DIRECTIONS, TransitionKernel, TransitionParams, build_transition,
                                   power_distance, safe_divide, scale_col)

RHO_GRID = [0.5, 1, 2, 4, 8]


def test_safe_divide_examples():
    out = safe_divide(np.array([[0, 1], [2, 0.0]]), np.array([[0, 2], [4, 0.0]]))
    np.testing.assert_array_equal(out, [[0, 0.5], [0.5, 0]])
    with pytest.raises(DivideByZero):
        safe_divide(np.array([[1.0]]), np.array([[0.0]]))


def test_scale_col_examples():
    np.testing.assert_array_equal(scale_col(np.array([[1, 0], [3, 0.0]])), [[0.25, 0], [0.75, 0]])
    P = np.array([[0.2, 0.5], [0.8, 0.5]])
    np.testing.assert_allclose(scale_col(P), P, atol=1e-15)
    np.testing.assert_array_equal(scale_col(np.zeros((3, 3))), 0)
    with pytest.raises(InvalidInput):
        scale_col(np.array([[-1.0, 0], [1, 1]]))


def test_power_distance_keeps_zeros():
    D = np.array([[0, 2.0], [2.0, 0]])
    np.testing.assert_allclose(power_distance(D, 3.0), [[0, 8], [8, 0]])


def test_params_validation():
    with pytest.raises(InvalidInput):
        TransitionParams(2, 1, 1, 1)
    with pytest.raises(InvalidInput):
        TransitionParams(0, 1, 0, 1)
    TransitionParams.limiting(0, 1, 0, 1)


def test_nu_zero_limit(small_kernel):
    M = small_kernel.matrix(TransitionParams.limiting(1, 2.0, 0.0, 0.7))
    np.testing.assert_array_equal(M, 0.7 * np.eye(small_kernel.n))


def test_uniform_diffusion_three_nodes():
    g = build_graph([("a", 0, 0), ("b", 1, 0), ("c", 0, 3)], [("a", "b"), ("b", "c")])
    k = TransitionKernel.from_graph(g, ["c"], ["a"])
    M = k.matrix(TransitionParams(0, 1e-14, 0.6, 0.3))
    expected = 0.3 * np.eye(3) + 0.3 * (np.ones((3, 3)) - np.eye(3))
    np.testing.assert_allclose(M, expected, atol=1e-12)


def test_chain_positive_direction(chain_kernel):
    # battery on a, ground on b: q = +1 moves mass from a toward b
    M = chain_kernel.matrix(TransitionParams(1, 1.0, 0.5, 0.5))
    assert M[1, 0] > 0
    assert M[0, 1] == 0
    np.testing.assert_allclose(M, [[0.5, 0.0], [0.5, 0.5]], atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(DIRECTIONS), st.floats(0.05, 12), st.floats(0.01, 5), st.floats(0.01, 5))
def test_column_sum_law(lattice_kernel, q, rho, nu, delta):
    M = lattice_kernel.matrix(TransitionParams(q, rho, nu, delta))
    active = lattice_kernel.currents.select(q).sum(axis=0) > 0
    np.testing.assert_allclose(M.sum(axis=0), nu * active + delta, rtol=0, atol=1e-10)
    assert np.all(M >= 0)
    assert np.all(np.diag(M) >= delta)
    if q == 0:
        assert active.all()


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(DIRECTIONS), st.floats(0.05, 8), st.floats(0.01, 2), st.floats(0.01, 2),
       st.integers(0, 2**32 - 1))
def test_mass_propagation(lattice_kernel, q, rho, nu, delta, seed):
    z = np.random.default_rng(seed).gamma(2.0, 1.0, lattice_kernel.n)
    M = lattice_kernel.matrix(TransitionParams(q, rho, nu, delta))
    s = (lattice_kernel.currents.select(q).sum(axis=0) > 0).astype(float)
    assert (M @ z).sum() == pytest.approx(nu * s @ z + delta * z.sum(), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 8), st.floats(0.01, 2), st.floats(0.01, 2))
def test_direction_zero_pattern(lattice_kernel, rho, nu, delta):
    v = lattice_kernel.voltages
    off = ~np.eye(lattice_kernel.n, dtype=bool)
    M_pos = lattice_kernel.matrix(TransitionParams(1, rho, nu, delta))
    M_neg = lattice_kernel.matrix(TransitionParams(-1, rho, nu, delta))
    assert np.all(M_pos[(v[:, None] >= v[None, :]) & off] == 0)
    assert np.all(M_neg[(v[:, None] <= v[None, :]) & off] == 0)


def _displacement(kernel, M, z):
    xy = kernel.graph.centroids
    m = M @ z
    return np.linalg.norm(m @ xy / m.sum() - z @ xy / z.sum())


@pytest.mark.parametrize("seed", [None, 1, 2])
def test_rho_reduces_displacement(lattice_kernel, seed):
    n = lattice_kernel.n
    z = np.ones(n) if seed is None else np.random.default_rng(seed).gamma(2.0, 1.0, n)
    disp = [_displacement(lattice_kernel, lattice_kernel.matrix(TransitionParams(-1, r, 0.5, 0.5)), z)
            for r in RHO_GRID]
    assert np.all(np.diff(disp) <= 1e-12)
    assert disp[0] > disp[-1]


def test_delta_share_reduces_total_variation(lattice_kernel):
    z = np.random.default_rng(3).gamma(2.0, 1.0, lattice_kernel.n)
    zn = z / z.sum()
    tv = []
    for share in np.linspace(0.05, 0.95, 10):
        M = lattice_kernel.matrix(TransitionParams(-1, 1.5, 1 - share, share))
        m = M @ z
        tv.append(0.5 * np.abs(m / m.sum() - zn).sum())
    assert np.all(np.diff(tv) <= 1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 10))
def test_shared_flows_match_direct_build(lattice_kernel, rho):
    flows = lattice_kernel.flows(rho)
    for q in DIRECTIONS:
        direct = build_transition(TransitionParams(q, rho, 0.4, 0.6), lattice_kernel.currents, lattice_kernel.D)
        np.testing.assert_array_equal(0.4 * flows[q] + 0.6 * np.eye(lattice_kernel.n), direct)


def test_build_transition_from_parts(chain_kernel):
    dc = split_directions(chain_kernel.circuit.C)
    M = build_transition(TransitionParams(-1, 2.0, 1.0, 0.25), dc, chain_kernel.D)
    np.testing.assert_allclose(M, [[0.25, 1.0], [0.0, 0.25]], atol=1e-15)
