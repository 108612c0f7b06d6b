import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fnls.domain import Field, Grid, inner, l2_norm
from fnls.operators import (
    OperatorHandle,
    Potential,
    ResolventError,
    apply_fractional_laplacian,
    apply_H,
    apply_resolvent,
    dense_matrix,
    greens_function_profile,
    kinetic_matrix,
)

G64 = Grid(1, 8.0, 64)


# ---------------------------------------------------------------- potentials


def test_power_potential_samples(grid):
    V = Potential.power(grid, 4.0)
    assert np.allclose(V.samples, np.abs(grid.axis) ** 4)
    assert V.lower_bound == 0.0
    assert np.allclose(V.gradient(0), 4 * grid.axis**3)


def test_potential_validation(grid):
    with pytest.raises(ValueError):
        Potential.power(grid, 0.5)
    with pytest.raises(ValueError):
        Potential.harmonic_plus_quartic(grid, -1.0)


def test_harmonic_plus_quartic(grid):
    V = Potential.harmonic_plus_quartic(grid, 0.25)
    x = grid.axis
    assert np.allclose(V.samples, x**2 + 0.25 * x**4)
    assert V.to_config() == {"kind": "harmquart", "a": 0.25}


def test_from_config_roundtrip_and_rejections(grid):
    V = Potential.from_config(grid, {"kind": "power", "alpha": 3})
    assert V.to_config() == {"kind": "power", "alpha": 3.0}
    with pytest.raises(ValueError):
        Potential.from_config(grid, {"kind": "wells"})
    with pytest.raises(ValueError):
        Potential.from_config(grid, {"kind": "power", "alpah": 2})


def test_tabulated_from_csv(tmp_path, grid):
    r = np.linspace(0, 20, 401)
    path = tmp_path / "v.csv"
    np.savetxt(path, np.column_stack([r, r**2, 2 * r]), delimiter=",", header="r,V,dV")
    V = Potential.from_csv(grid, path)
    # monotone cubic interpolation on a 0.05 spacing
    assert np.allclose(V.samples, grid.axis**2, atol=2e-3)
    assert np.allclose(V.gradient(0), 2 * grid.axis, atol=1e-8)
    assert V.lower_bound == 0.0


def test_tabulated_rejects_decreasing_and_short_tables(grid):
    with pytest.raises(ValueError):
        Potential.tabulated(grid, [0, 1, 20], [0, 2, 1])
    with pytest.raises(ValueError):
        Potential.tabulated(grid, [0, 1, 2], [0, 1, 2])


def test_tabulated_without_derivative(grid):
    V = Potential.tabulated(grid, [0, 20], [0, 20])
    with pytest.raises(ValueError):
        V.gradient(0)


def test_non_monotone_profile_rejected(grid):
    with pytest.raises(ValueError):
        Potential("bad", {}, grid, profile=lambda r: np.cos(r))


def test_capped_potential(grid):
    V = Potential.power(grid, 2.0)
    W = V.capped(3.0)
    assert np.allclose(W.samples, np.minimum(grid.axis**2, 9.0))
    assert np.all(W.samples <= V.samples)
    assert np.array_equal(V.capped(grid.L).samples, V.samples)


# ---------------------------------------------------------------- operators


@settings(max_examples=30, deadline=None)
@given(arrays(float, 64, elements=st.floats(-3, 3)), arrays(float, 64, elements=st.floats(-3, 3)),
       st.sampled_from([0.3, 0.5, 0.75, 1.0]))
def test_hamiltonian_is_self_adjoint(a, b, s):
    op = OperatorHandle(s, Potential.power(G64, 2.0), 0.7)
    f, g = Field(G64, a), Field(G64, b)
    lhs, rhs = inner(apply_H(op, f), g), inner(f, apply_H(op, g))
    assert lhs == pytest.approx(rhs, rel=1e-11, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(arrays(float, 64, elements=st.floats(-3, 3)), st.sampled_from([0.3, 0.5, 1.0]))
def test_hamiltonian_is_bounded_below_by_potential_floor(a, s):
    op = OperatorHandle(s, Potential.power(G64, 2.0), 0.5)
    f = Field(G64, a)
    assert inner(apply_H(op, f), f) >= op.quadratic_lower_bound() * l2_norm(f) ** 2 - 1e-9


def test_dense_matrix_matches_matrix_free(grid, rng):
    op = OperatorHandle(0.6, Potential.power(grid, 2.0), 1.0)
    v = rng.standard_normal(grid.N)
    assert np.allclose(dense_matrix(op) @ v, apply_H(op, Field(grid, v)).values, atol=1e-10)
    K = kinetic_matrix(grid, 0.6)
    assert np.allclose(K, K.T)


def test_fractional_laplacian_annihilates_constants(grid):
    f = Field(grid, np.ones(grid.N))
    assert np.max(np.abs(apply_fractional_laplacian(f, 0.4).values)) < 1e-12


@pytest.mark.parametrize("s,alpha", [(0.5, 2.0), (0.75, 4.0), (1.0, 2.0), (1.0, 4.0)])
def test_resolvent_inverts(grid, rng, s, alpha):
    op = OperatorHandle(s, Potential.power(grid, alpha), 0.8)
    g = Field(grid, rng.standard_normal(grid.N))
    f, iters = apply_resolvent(op, g, tol=1e-12, return_info=True)
    assert l2_norm(apply_H(op, f) - g) <= 1e-12 * l2_norm(g) * 1.0001
    assert iters < 300


def test_resolvent_complex_rhs(grid, rng):
    op = OperatorHandle(1.0, Potential.power(grid, 2.0), 1.0)
    g = Field(grid, rng.standard_normal(grid.N) + 1j * rng.standard_normal(grid.N))
    f = apply_resolvent(op, g)
    assert l2_norm(apply_H(op, f) - g) <= 1e-11 * l2_norm(g)


def test_resolvent_refuses_uncertified_operator(grid):
    op = OperatorHandle(1.0, Potential.power(grid, 2.0), -0.5)
    with pytest.raises(ResolventError):
        apply_resolvent(op, Field(grid, np.ones(grid.N)))


def test_resolvent_zero_rhs(grid):
    op = OperatorHandle(1.0, Potential.power(grid, 2.0), 1.0)
    assert not np.any(apply_resolvent(op, Field.zeros(grid)).values)


def test_greens_function_classical_case():
    g = Grid(1, 20.0, 1024)
    G = greens_function_profile(1.0, 1.0, g)
    x = g.axis
    exact = 0.5 * np.exp(-np.abs(x))
    away = (np.abs(x) > 0.5) & (np.abs(x) < 10)
    assert np.max(np.abs(G.values[away] - exact[away])) < 1e-3
    # the cusp at the origin is resolved only up to the truncated tail sum of 1/k^2
    assert abs(G.values[g.N // 2] - 0.5) < 2 * g.spacing / np.pi**2


def test_greens_function_fractional_is_decreasing(grid):
    G = greens_function_profile(0.5, 1.0, grid)
    x = grid.axis
    half = G.values[(x > 0) & (x < grid.L / 2)]
    assert np.all(np.diff(half) < 0)
    assert np.all(half > 0)


def test_greens_function_rejects_bad_lambda(grid):
    with pytest.raises(ValueError):
        greens_function_profile(0.5, 0.0, grid)
