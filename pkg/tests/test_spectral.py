import numpy as np
import pytest

from fnls.domain import Field, Grid, inner, l2_norm
from fnls.operators import OperatorHandle, Potential, apply_H
from fnls.spectral import (
    certify_indices,
    check_sector_relation,
    count_sign_changes,
    eigen_lowest,
    radial_profile,
    sector_basis,
    sturm_second_radial,
    truncated_potential_convergence,
)


def oscillator(grid):
    return OperatorHandle(1.0, Potential.power(grid, 2.0))


def test_oscillator_ladder(grid):
    rep = eigen_lowest(oscillator(grid), m=6)
    assert np.allclose(rep.eigenvalues, [1, 3, 5, 7, 9, 11], atol=1e-10)
    # counted along the ray x >= 0, so odd modes lose their node at the origin
    assert rep.sign_changes[:4] == [0, 0, 1, 1]


def test_oscillator_sectors(grid):
    even = eigen_lowest(oscillator(grid), m=3, sector="even")
    odd = eigen_lowest(oscillator(grid), m=3, sector="odd")
    assert np.allclose(even.eigenvalues, [1, 5, 9], atol=1e-10)
    assert np.allclose(odd.eigenvalues, [3, 7, 11], atol=1e-10)
    for f in odd.eigenfields:
        assert np.allclose(grid.reflect(f.values), -f.values, atol=1e-12)


def test_dense_and_lanczos_agree(grid):
    op = OperatorHandle(0.75, Potential.power(grid, 4.0), 0.3)
    for sector in ("full", "even", "odd"):
        d = eigen_lowest(op, m=4, sector=sector, method="dense")
        z = eigen_lowest(op, m=4, sector=sector, method="lanczos")
        assert np.allclose(d.eigenvalues, z.eigenvalues, atol=1e-8)


def test_residuals_and_orthonormality(grid):
    op = OperatorHandle(0.5, Potential.power(grid, 2.0))
    rep = eigen_lowest(op, m=6)
    assert np.all(rep.residuals <= 1e-8 * (1 + np.abs(rep.eigenvalues)))
    assert rep.orthonormality_error() <= 1e-8
    for mu, f in zip(rep.eigenvalues, rep.eigenfields):
        assert l2_norm(apply_H(op, f) - mu * f) <= 1e-8 * (1 + abs(mu))


def test_sector_basis_is_orthonormal(small_grid):
    for sector in ("even", "odd"):
        Q = sector_basis(small_grid, sector)
        assert np.allclose(Q.T @ Q, np.eye(Q.shape[1]), atol=1e-13)
    assert sector_basis(small_grid, "even").shape[1] + sector_basis(small_grid, "odd").shape[1] == small_grid.N


def test_two_dimensional_lanczos():
    g = Grid(2, 8.0, 32)
    rep = eigen_lowest(OperatorHandle(1.0, Potential.power(g, 2.0)), m=3)
    # sigma(-Delta + |x|^2) in 2D: 2, 4, 4
    assert np.allclose(rep.eigenvalues, [2, 4, 4], atol=1e-6)
    with pytest.raises(ValueError):
        eigen_lowest(OperatorHandle(1.0, Potential.power(g, 2.0)), m=3, sector="even")


def test_count_sign_changes_ignores_floor():
    prof = np.array([1.0, 0.5, -0.5, -1.0, 1e-9, -1e-9, 1e-9])
    assert count_sign_changes(prof) == 1
    assert count_sign_changes(prof, amplitude_tol=0.0) == 4


def test_radial_profile(grid):
    f = Field(grid, grid.axis)
    prof = radial_profile(f)
    assert prof[0] == 0.0 and np.all(np.diff(prof) > 0)


def test_certificate_default(default_pair):
    cert = certify_indices(default_pair)
    assert cert["n_plus"] == 1
    assert cert["ker_plus_dim"] == 0
    assert abs(cert["lminus_min"]) <= 1e-6
    assert cert["lminus_phi_cosine"] >= 1 - 1e-10
    assert cert["lminus_gap"] > 0


def test_linearized_form_identity(default_pair, default_gs, rng):
    # <L+ h, h> = <L- h, h> - (p - 1) int phi^{p-1} h^2
    grid = default_gs.phi.grid
    w = np.real(default_gs.phi.values) ** (default_gs.spec.p - 1)
    for _ in range(5):
        h = Field(grid, rng.standard_normal(grid.N) * np.exp(-grid.axis**2 / 8))
        lp = inner(apply_H(default_pair.lplus, h), h)
        lm = inner(apply_H(default_pair.lminus, h), h)
        corr = (default_gs.spec.p - 1) * np.sum(w * h.values**2) * grid.cell_volume
        assert lp == pytest.approx(lm - corr, rel=1e-10)


def test_lminus_annihilates_groundstate(default_pair, default_gs):
    phi = default_gs.phi
    assert l2_norm(apply_H(default_pair.lminus, phi)) <= 1e-7 * l2_norm(phi)


def test_sturm_default(default_gs, default_pair):
    st = sturm_second_radial(default_gs, default_pair)
    assert st["passed"]
    assert st["sign_changes_E0"] == 0


def test_sector_relation_default(default_gs, default_pair):
    assert check_sector_relation(default_gs, default_pair) <= 1e-7
    odd = eigen_lowest(default_pair.lplus, m=1, sector="odd")
    assert odd.eigenvalues[0] > 0


def test_truncation_noop_at_box_edge(default_spec):
    out = truncated_potential_convergence(default_spec, [default_spec.grid.L])
    assert out["rows"][0]["E0_R"] == out["untruncated"][0]


def test_truncation_monotone(default_spec):
    out = truncated_potential_convergence(default_spec, [2, 4, 6, 8])
    assert out["nondecreasing"] and out["bounded"]
    assert abs(out["gap_at_largest"]) <= 1e-4


def test_truncation_rejects_bad_radii(default_spec):
    with pytest.raises(ValueError):
        truncated_potential_convergence(default_spec, [4, 2])
    with pytest.raises(ValueError):
        truncated_potential_convergence(default_spec, [2, 100])
