import numpy as np
import pytest
from scipy import optimize

from fnls.domain import Field, hs_inner, hs_norm, inner, l2_norm
from fnls.dynamics import (
    ConservationError,
    EvolutionState,
    ModulationError,
    coercivity_check,
    conservation_monitor,
    decompose_modulated,
    evolve,
    orbital_distance,
    perturbation_direction,
    run_stability_experiment,
    step_strang,
)


def smooth_data(gs):
    """Perturbed soliton: shifted and boosted, so every term of the flow is active."""
    phi = gs.phi
    x = phi.grid.axis
    shifted = np.interp(x - 0.3, x, np.real(phi.values))
    return Field(phi.grid, shifted * np.exp(0.2j * x))


def run_to(state, T):
    n = int(round(abs(T / state.dt)))
    for _ in range(n):
        state = step_strang(state)
    return state


def test_standing_wave_rotates_backwards(default_gs):
    spec, phi = default_gs.spec, default_gs.phi
    st = evolve(EvolutionState(0.0, phi, spec, 1e-3), 1.0)[-1]
    expect = np.exp(-1j * default_gs.omega * 1.0) * phi.values
    assert l2_norm(st.u - expect) <= 1e-6


def test_reversibility(default_gs):
    u0 = smooth_data(default_gs)
    st = EvolutionState(0.0, u0, default_gs.spec, 1e-2)
    fwd = run_to(st, 0.5)
    back = run_to(EvolutionState(fwd.t, fwd.u, fwd.spec, -1e-2), 0.5)
    assert l2_norm(back.u - u0) <= 1e-10 * l2_norm(u0)


def test_zero_step_rejected(default_gs):
    with pytest.raises(ValueError):
        step_strang(EvolutionState(0.0, default_gs.phi, default_gs.spec, 0.0))


def test_second_order_self_convergence(default_gs):
    u0 = smooth_data(default_gs)
    spec = default_gs.spec
    T = 0.5
    ref = evolve(EvolutionState(0.0, u0, spec, 1.25e-4), T)[-1].u
    errs = [l2_norm(evolve(EvolutionState(0.0, u0, spec, dt), T)[-1].u - ref) for dt in (4e-3, 2e-3, 1e-3)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(3.5 < r < 4.5 for r in ratios), ratios


def test_power_conserved_and_energy_drift_order(default_gs):
    u0 = Field(default_gs.phi.grid, 1.05 * default_gs.phi.values)
    spec = default_gs.spec
    drifts = []
    for dt in (2e-3, 1e-3):
        states = evolve(EvolutionState(0.0, u0, spec, dt), 1.0, sample_every=0.1)
        mon = conservation_monitor(states, default_gs.omega)
        assert mon["max_P_drift"] <= 1e-12
        drifts.append(mon["max_E_drift"])
    assert drifts[0] / drifts[1] == pytest.approx(4.0, rel=0.2)


def test_sampling_must_divide(default_gs):
    with pytest.raises(ValueError):
        evolve(EvolutionState(0.0, default_gs.phi, default_gs.spec, 1e-3), 1.0, sample_every=0.00015)


def _brute_distance(u, phi, s):
    """Grid search over 10^4 angles, then bounded refinement on the direct norm."""
    def dist(t):
        return hs_norm(u - np.exp(1j * t) * phi, s)

    thetas = np.linspace(-np.pi, np.pi, 10_001)
    z = hs_inner(u, phi, s)
    a = hs_norm(u, s) ** 2 + hs_norm(phi, s) ** 2
    coarse = a - 2 * np.real(np.exp(-1j * thetas) * z)
    j = int(np.argmin(coarse))
    step = thetas[1] - thetas[0]
    res = optimize.minimize_scalar(dist, bounds=(thetas[j] - step, thetas[j] + step),
                                   method="bounded", options={"xatol": 1e-12})
    return res.fun, res.x


def test_orbital_distance_matches_grid_search(default_gs, rng):
    phi = default_gs.phi
    s = default_gs.spec.s
    grid = phi.grid
    for _ in range(3):
        w = perturbation_direction(phi, s, int(rng.integers(1000)))
        u = Field(grid, np.exp(1j * rng.uniform(-3, 3)) * (phi.values + 0.05 * w.values))
        d, theta = orbital_distance(u, phi, s)
        brute, t_brute = _brute_distance(u, phi, s)
        assert d == pytest.approx(brute, abs=1e-8)
        assert np.angle(np.exp(1j * (theta - t_brute))) == pytest.approx(0.0, abs=1e-5)


def test_perturbation_direction_properties(default_gs):
    phi = default_gs.phi
    s = default_gs.spec.s
    w = perturbation_direction(phi, s, 7)
    assert hs_norm(w, s) == pytest.approx(1.0, rel=1e-12)
    assert np.array_equal(w.values, perturbation_direction(phi, s, 7).values)
    assert not np.array_equal(w.values, perturbation_direction(phi, s, 8).values)
    u = Field(phi.grid, phi.values + 1e-3 * w.values)
    assert orbital_distance(u, phi, s)[0] == pytest.approx(1e-3, rel=1e-9)


def test_modulation_decomposition(default_gs):
    phi = default_gs.phi
    mod = decompose_modulated(Field(phi.grid, np.exp(0.4j) * phi.values), phi)
    assert mod.theta == pytest.approx(0.4, abs=1e-12)
    assert abs(mod.mu) < 1e-12
    u = Field(phi.grid, np.exp(0.4j) * phi.values * 1.01 + 0.01 * np.sin(phi.grid.axis) * phi.values)
    mod = decompose_modulated(u, phi)
    assert l2_norm(mod.reconstruct(phi) - u) <= 1e-12 * l2_norm(u)
    assert abs(inner(mod.eta, phi)) < 1e-12 and abs(inner(mod.zeta, phi)) < 1e-12


def test_modulation_breakdown_detected(default_gs):
    phi = default_gs.phi
    # <Im u, phi> = 2 ||phi||^2 has no angle solution
    with pytest.raises(ModulationError):
        decompose_modulated(Field(phi.grid, 2j * phi.values), phi)


def test_stability_short_run(default_gs):
    tr = run_stability_experiment(default_gs, 1e-3, T=2.0, dt=1e-3, seed=0)
    assert tr.distance[0] == pytest.approx(1e-3, rel=1e-9)
    assert tr.sup_distance <= 10e-3
    assert set(tr.columns()) == {"t", "d", "theta", "mu", "eta_norm", "zeta_norm", "E_drift", "P_drift"}
    assert tr.modulation_breakdown is None
    assert tr.reconstruction_error <= 1e-12


def test_stability_rejects_large_delta(default_gs):
    with pytest.raises(ValueError):
        run_stability_experiment(default_gs, 1.0, T=0.1)


def test_conservation_abort(default_gs):
    with pytest.raises(ConservationError):
        run_stability_experiment(default_gs, 1e-3, T=5.0, dt=1.0, sample_every=1.0)


def test_coercivity(default_pair):
    out = coercivity_check(default_pair, trials=50, seed=1)
    assert out["kappa"] > 0
    assert out["sample_min_ratio"] >= 1 - 1e-6
