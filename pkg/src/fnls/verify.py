"""One-command verification suite.

Every row carries a claim id (what property is being checked), the case it
was checked on, a pass flag and the measured quantities.  Rows are computed
in isolated tasks: an exception inside one task fails that task's rows and
leaves the rest of the table untouched.
"""

from __future__ import annotations

import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .domain import (
    Field,
    Grid,
    functionals,
    hs_norm,
    inner,
    kinetic_energy,
    l2_norm,
    rearrange_decreasing,
)
from .dynamics import (
    EvolutionState,
    coercivity_check,
    conservation_monitor,
    evolve,
    orbital_distance,
    run_stability_experiment,
)
from .groundstate import (
    GroundState,
    ProblemSpec,
    check_omega_lower_bound,
    el_residual,
    energy_gradient,
    extract_omega,
    groundstate_invariants,
    solve_fixed_point,
    solve_gradient_flow,
)
from .operators import Potential
from .spectral import (
    certify_indices,
    check_sector_relation,
    default_zero_tol,
    eigen_lowest,
    linearize,
    sturm_second_radial,
    truncated_potential_convergence,
)

log = logging.getLogger(__name__)

# claim ids, in table order
CLAIMS = {
    "oscillator-anchor": "lowest harmonic-oscillator eigenvalue and eigenfield",
    "groundstate-certificate": "both solvers converge to the same bell-shaped constrained minimizer",
    "multiplier-bound": "omega + sigma0 > 0 and equals <Psi0, phi^p>/<Psi0, phi>",
    "morse-index": "L+ has one negative eigenvalue and trivial kernel; L- kernel spanned by phi",
    "sturm-oscillation": "second even L+ eigenfield has one radial sign change",
    "sector-identity": "L+(d phi) = -V' phi and the odd L+ sector is positive",
    "truncation-monotonicity": "eigenvalues under a capped potential increase with the cap radius",
    "rearrangement-hardy-littlewood": "int f g <= int f* g*",
    "rearrangement-potential": "int V (f*)^2 <= int V f^2",
    "rearrangement-polya-szego": "fractional Dirichlet energy does not grow under rearrangement",
    "energy-gradient": "<E'[f], h> matches central differences",
    "conservation": "power and total energy conserved; second-order energy drift",
    "soliton-persistence": "unperturbed ground state stays on its orbit",
    "orbital-stability": "perturbed ground state stays within the envelope, linearly in delta",
    "coercivity": "L+ and L- coercive on the complement of phi",
    "smoke-2d": "two-dimensional ground state and short evolution",
    "groundstate-snapshot": "supplied ground-state snapshot satisfies the invariants",
}


@dataclass
class Row:
    claim: str
    case: str
    passed: bool
    measured: dict = field(default_factory=dict)
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "claim": self.claim,
            "case": self.case,
            "passed": bool(self.passed),
            "measured": self.measured,
            "error": self.error,
        }


# ---------------------------------------------------------------- helpers


def cell_grid(cfg: RunConfig, s: float) -> Grid:
    """Box used for sweep cell with exponent s.

    Fractional ground states decay only algebraically, so the periodic
    seam pollutes derivative-based checks unless the box is large.
    """
    if s < 1:
        return Grid(1, cfg.fractional_L, cfg.fractional_N)
    return Grid(1, cfg.L, cfg.N)


def cell_name(s, alpha, lam) -> str:
    return f"s={s:g},V=|x|^{alpha:g},lambda={lam:g}"


def _solve(cfg: RunConfig, spec: ProblemSpec) -> GroundState:
    return solve_gradient_flow(spec, tau=cfg.tau, tol=cfg.tol, max_iter=cfg.max_iter)


def default_problem(cfg: RunConfig) -> ProblemSpec:
    return cfg.problem()


# ---------------------------------------------------------------- tasks


def task_oscillator(cfg: RunConfig) -> list[Row]:
    g = Grid(1, 12.0, 512)
    op = ProblemSpec(1.0, 3.0, 1.0, Potential.power(g, 2.0)).hamiltonian()
    rep = eigen_lowest(op, m=1)
    psi = rep.eigenfields[0]
    gauss = Field.from_function(g, lambda x: np.exp(-0.5 * x**2))
    cos = abs(inner(psi, gauss)) / (l2_norm(psi) * l2_norm(gauss))
    sigma0 = float(rep.eigenvalues[0])
    ok = abs(sigma0 - 1.0) <= 1e-6 and cos >= 1 - 1e-8
    return [Row("oscillator-anchor", "n=1,s=1,V=|x|^2,L=12,N=512", ok,
                {"sigma0": sigma0, "sigma0_error": abs(sigma0 - 1.0), "cosine": cos})]


def task_cell(cfg: RunConfig, s: float, alpha: float, lam: float) -> list[Row]:
    grid = cell_grid(cfg, s)
    spec = ProblemSpec(s, 1.0 + 2.0 * s, lam, Potential.power(grid, alpha))
    case = cell_name(s, alpha, lam)
    rows = []

    gf = _solve(cfg, spec)
    fp = solve_fixed_point(spec, shift=cfg.fp_shift, tol=cfg.tol, max_iter=cfg.fp_max_iter)
    flags = groundstate_invariants(gf, cfg.tol)
    flags_fp = groundstate_invariants(fp, cfg.tol)
    diff = l2_norm(gf.phi - fp.phi)
    rows.append(Row(
        "groundstate-certificate", case,
        all(flags.values()) and all(flags_fp.values()) and diff <= 1e-6,
        {
            "omega": gf.omega,
            "energy": gf.energy,
            "el_residual": gf.el_residual,
            "el_residual_fixed_point": fp.el_residual,
            "iterations_gradient_flow": gf.iterations,
            "iterations_fixed_point": fp.iterations,
            "cross_solver_l2": diff,
            "power_error": abs(l2_norm(gf.phi) ** 2 - lam),
            "failed": sorted(k for k, v in {**flags, **{f"fp_{k}": v for k, v in flags_fp.items()}}.items() if not v),
        },
    ))

    zero_tol = cfg.zero_tol or default_zero_tol(gf.omega)
    H = eigen_lowest(spec.hamiltonian(), m=1, zero_tol=zero_tol)
    mb = check_omega_lower_bound(gf, H)
    rows.append(Row("multiplier-bound", case, mb["passed"], mb))

    pair = linearize(gf)
    cert = certify_indices(pair, zero_tol=zero_tol, m=cfg.m)
    ok = (cert["n_plus"] == 1 and cert["ker_plus_dim"] == 0
          and abs(cert["lminus_min"]) <= 1e-6 and cert["lminus_phi_cosine"] >= 1 - 1e-6
          and cert["lminus_gap"] > 0)
    rows.append(Row("morse-index", case, ok, cert))

    st = sturm_second_radial(gf, pair)
    rows.append(Row("sturm-oscillation", case, st["passed"], st))

    rel = check_sector_relation(gf, pair)
    odd = float(eigen_lowest(pair.lplus, m=1, sector="odd", zero_tol=zero_tol).eigenvalues[0])
    rows.append(Row("sector-identity", case, rel <= 1e-5 and odd > 0,
                    {"relation_residual": rel, "odd_lplus_min": odd, "L": grid.L, "N": grid.N}))
    return rows


def task_truncation(cfg: RunConfig) -> list[Row]:
    spec = default_problem(cfg)
    gs = _solve(cfg, spec)
    pair = linearize(gs)
    out = truncated_potential_convergence(
        spec, cfg.truncation_radii, shift=gs.omega, extra=pair.lplus.extra, m=2
    )
    ok = out["nondecreasing"] and out["bounded"] and abs(out["gap_at_largest"]) <= 1e-4
    return [Row("truncation-monotonicity", "default problem, operator L+", ok, out)]


def _random_nonnegative(rng, grid):
    kind = rng.integers(3)
    if kind == 0:
        return rng.random(grid.shape)
    if kind == 1:
        return rng.exponential(size=grid.shape) * (rng.random(grid.shape) < 0.3)
    return rng.random(grid.shape) ** 4


def _smooth_nonnegative(rng, grid):
    x = grid.coords[0]
    out = np.zeros(grid.shape)
    for _ in range(rng.integers(1, 5)):
        c = rng.uniform(-0.5, 0.5) * grid.L
        w = rng.uniform(0.3, 2.0)
        out += rng.uniform(0.2, 1.0) * np.exp(-((x - c) / w) ** 2)
    return out


def task_rearrangement(cfg: RunConfig) -> list[Row]:
    grid = Grid(1, cfg.L, 256)
    rng = np.random.default_rng(cfg.seed + 101)
    V = Potential.power(grid, 2.0).samples
    ulp = 64 * np.finfo(float).eps
    worst_hl = np.inf
    worst_v = np.inf
    for _ in range(100):
        f = Field(grid, _random_nonnegative(rng, grid))
        g = Field(grid, _random_nonnegative(rng, grid))
        fs, gs = rearrange_decreasing(f), rearrange_decreasing(g)
        lhs, rhs = inner(f, g), inner(fs, gs)
        worst_hl = min(worst_hl, (rhs - lhs) / max(rhs, 1e-300))
        a = float(np.sum(V * f.values**2)) * grid.cell_volume
        b = float(np.sum(V * fs.values**2)) * grid.cell_volume
        worst_v = min(worst_v, (a - b) / max(a, 1e-300))
    ps = {}
    for s in sorted(set(cfg.sweep_s) | {1.0}):
        worst = np.inf
        r2 = np.random.default_rng(cfg.seed + 202)
        for _ in range(20):
            f = Field(grid, _smooth_nonnegative(r2, grid))
            ratio = kinetic_energy(rearrange_decreasing(f), s) / kinetic_energy(f, s)
            worst = min(worst, 1.01 - ratio)
        ps[f"s={s:g}"] = 1.01 - worst
    return [
        Row("rearrangement-hardy-littlewood", "100 random nonnegative fields", worst_hl >= -ulp,
            {"min_relative_margin": worst_hl}),
        Row("rearrangement-potential", "100 random nonnegative fields, V=|x|^2", worst_v >= -ulp,
            {"min_relative_margin": worst_v}),
        Row("rearrangement-polya-szego", "20 smooth nonnegative fields",
            all(v <= 1.01 for v in ps.values()), {"max_energy_ratio": ps}),
    ]


def task_gradient(cfg: RunConfig) -> list[Row]:
    spec = default_problem(cfg)
    grid = spec.grid
    rng = np.random.default_rng(cfg.seed + 303)
    eps = 1e-5
    worst = 0.0
    x = grid.coords[0]
    for _ in range(10):
        f = Field(grid, rng.uniform(0.2, 1.5) * np.exp(-((x - rng.uniform(-1, 1)) / rng.uniform(0.7, 2.0)) ** 2))
        h = Field(grid, np.exp(-(x / rng.uniform(0.7, 2.0)) ** 2) * np.cos(rng.uniform(0, 3) * x + rng.uniform(0, 6)))
        exact = inner(energy_gradient(spec, f), h)

        def E(u):
            return functionals(u, spec.potential, spec.s, spec.p).energy

        fd = (E(f + eps * h) - E(f - eps * h)) / (2 * eps)
        worst = max(worst, abs(fd - exact) / max(abs(exact), 1e-12))
    return [Row("energy-gradient", "10 random (f, h) pairs, default problem", worst <= 1e-6,
                {"max_relative_error": worst, "epsilon": eps})]


def _energy_drift(spec, u0, dt, T, omega):
    states = evolve(EvolutionState(0.0, u0, spec, dt), T, sample_every=T / 10)
    return conservation_monitor(states, omega)


def task_conservation(cfg: RunConfig) -> list[Row]:
    spec = default_problem(cfg)
    gs = _solve(cfg, spec)
    phi = gs.phi
    T = 10.0
    states = evolve(EvolutionState(0.0, phi, spec, cfg.dt), T, sample_every=0.5)
    mon = conservation_monitor(states, gs.omega)
    # refinement on a smooth nonstationary solution: the soliton itself is
    # integrated to roundoff and masks the leading error term
    u0 = Field(phi.grid, 1.05 * phi.values)
    coarse = _energy_drift(spec, u0, 2 * cfg.dt, 1.0, gs.omega)["max_E_drift"]
    fine = _energy_drift(spec, u0, cfg.dt, 1.0, gs.omega)["max_E_drift"]
    ratio = coarse / fine
    orbit = max(
        l2_norm(st.u - np.exp(-1j * gs.omega * st.t) * phi.values) for st in states
    )
    ok = mon["max_P_drift"] <= 1e-10 and mon["max_E_drift"] <= 1e-6 and abs(ratio - 4) <= 0.8
    rows = [Row("conservation", f"default problem, T=10, dt={cfg.dt:g}", ok, {
        "max_P_drift": mon["max_P_drift"],
        "max_E_drift": mon["max_E_drift"],
        "refinement_ratio": ratio,
        "drift_dt": fine,
        "drift_2dt": coarse,
    })]
    d = max(orbital_distance(st.u, phi, spec.s)[0] for st in states)
    rows.append(Row("soliton-persistence", "default problem, delta=0, T=10", d <= 1e-5,
                    {"sup_distance": d, "standing_wave_error": orbit}))
    return rows


def task_stability(cfg: RunConfig, delta: float) -> dict:
    spec = default_problem(cfg)
    gs = _solve(cfg, spec)
    tr = run_stability_experiment(gs, delta, T=cfg.T, dt=cfg.dt, seed=cfg.seed,
                                  sample_every=cfg.sample_every)
    return {
        "delta": delta,
        "sup_distance": tr.sup_distance,
        "initial_distance": float(tr.distance[0]),
        "max_E_drift": float(np.max(tr.energy_drift)),
        "max_P_drift": float(np.max(tr.power_drift)),
        "modulation_breakdown": tr.modulation_breakdown,
        "reconstruction_error": tr.reconstruction_error,
    }


def task_coercivity(cfg: RunConfig) -> list[Row]:
    spec = default_problem(cfg)
    gs = _solve(cfg, spec)
    pair = linearize(gs)
    out = coercivity_check(pair, trials=100, seed=cfg.seed)
    sm = eigen_lowest(pair.lminus, m=2)
    v2 = sm.eigenfields[1]
    rayleigh_v2 = float(sm.eigenvalues[1]) / hs_norm(v2, spec.s) ** 2
    out["lminus_second_rayleigh"] = rayleigh_v2
    ok = (out["kappa"] > 0 and out["sample_min_ratio"] >= 1 - 1e-6
          and out["kappa_minus"] <= rayleigh_v2 * (1 + 1e-6))
    return [Row("coercivity", "default problem", ok, out)]


def task_smoke_2d(cfg: RunConfig) -> list[Row]:
    grid = Grid(2, cfg.L, 128)
    spec = ProblemSpec(1.0, 2.0, 1.0, Potential.power(grid, 2.0))
    gs = solve_gradient_flow(spec, tau=cfg.tau)
    flags = groundstate_invariants(gs)
    states = evolve(EvolutionState(0.0, gs.phi, spec, cfg.dt), 1.0, sample_every=0.25)
    mon = conservation_monitor(states, gs.omega)
    ok = all(flags.values()) and mon["max_P_drift"] <= 1e-10 and mon["max_E_drift"] <= 1e-6
    return [Row("smoke-2d", "n=2,s=1,p=2,V=|x|^2,lambda=1,N=128", ok, {
        "omega": gs.omega,
        "el_residual": gs.el_residual,
        "iterations": gs.iterations,
        "max_E_drift": mon["max_E_drift"],
        "max_P_drift": mon["max_P_drift"],
        "failed": sorted(k for k, v in flags.items() if not v),
    })]


def task_snapshot(cfg: RunConfig, phi: Field) -> list[Row]:
    spec = cfg.problem(phi.grid)
    gs = groundstate_from_field(spec, phi)
    flags = groundstate_invariants(gs, cfg.tol)
    return [Row("groundstate-snapshot", "supplied snapshot", all(flags.values()), {
        "omega": gs.omega,
        "el_residual": gs.el_residual,
        "power": l2_norm(phi) ** 2,
        "failed": sorted(k for k, v in flags.items() if not v),
    })]


def groundstate_from_field(spec: ProblemSpec, phi: Field) -> GroundState:
    """Rebuild a GroundState record around a stored field (no solve)."""
    if phi.grid != spec.grid:
        raise ValueError("snapshot grid does not match the configured grid")
    phi = phi.as_real()
    omega = extract_omega(spec, phi, check=False)
    energy = functionals(phi, spec.potential, spec.s, spec.p).energy
    return GroundState(spec, phi, omega, energy, el_residual(spec, phi, omega), 0, "snapshot")


# ---------------------------------------------------------------- driver


_TASK_CLAIMS = {
    "task_oscillator": ["oscillator-anchor"],
    "task_cell": ["groundstate-certificate", "multiplier-bound", "morse-index",
                  "sturm-oscillation", "sector-identity"],
    "task_truncation": ["truncation-monotonicity"],
    "task_rearrangement": ["rearrangement-hardy-littlewood", "rearrangement-potential",
                           "rearrangement-polya-szego"],
    "task_gradient": ["energy-gradient"],
    "task_conservation": ["conservation", "soliton-persistence"],
    "task_stability": ["orbital-stability"],
    "task_coercivity": ["coercivity"],
    "task_smoke_2d": ["smoke-2d"],
    "task_snapshot": ["groundstate-snapshot"],
}


def _run_task(job):
    fn, args, case = job
    start = time.perf_counter()
    try:
        out = fn(*args)
    except Exception as exc:  # isolate the failure to this task's rows
        log.debug("task %s failed:\n%s", fn.__name__, traceback.format_exc())
        msg = f"{type(exc).__name__}: {exc}"
        out = [Row(c, case, False, {}, msg) for c in _TASK_CLAIMS[fn.__name__]]
    return out, time.perf_counter() - start


def build_jobs(cfg: RunConfig, snapshot: Field | None = None) -> list:
    jobs = [(task_oscillator, (cfg,), "oscillator")]
    for s in cfg.sweep_s:
        for a in cfg.sweep_alpha:
            for lam in cfg.sweep_lambda:
                jobs.append((task_cell, (cfg, s, a, lam), cell_name(s, a, lam)))
    jobs += [
        (task_truncation, (cfg,), "default problem"),
        (task_rearrangement, (cfg,), "rearrangement"),
        (task_gradient, (cfg,), "default problem"),
        (task_conservation, (cfg,), "default problem"),
    ]
    for d in cfg.sweep_deltas:
        jobs.append((task_stability, (cfg, d), f"delta={d:g}"))
    jobs.append((task_coercivity, (cfg,), "default problem"))
    if cfg.smoke_2d:
        jobs.append((task_smoke_2d, (cfg,), "2d"))
    if snapshot is not None:
        jobs.append((task_snapshot, (cfg, snapshot), "supplied snapshot"))
    return jobs


def _stability_row(cfg: RunConfig, results: list) -> Row:
    bad = [r for r in results if isinstance(r, Row)]
    case = "default problem, deltas " + ",".join(f"{d:g}" for d in cfg.sweep_deltas) + f", T={cfg.T:g}"
    if bad:
        return Row("orbital-stability", case, False, {}, "; ".join(r.error or "" for r in bad))
    per = {f"delta={r['delta']:g}": r for r in results}
    ratios = [r["sup_distance"] / r["delta"] for r in results if r["delta"] > 0]
    envelope_ok = all(r["sup_distance"] <= cfg.envelope * r["delta"] for r in results)
    linear_ok = bool(ratios) and max(ratios) <= 2 * min(ratios)
    return Row("orbital-stability", case, envelope_ok and linear_ok, {
        "runs": per,
        "sup_distance_over_delta": ratios,
        "envelope": cfg.envelope,
        "linear_spread": max(ratios) / min(ratios) if ratios else None,
    })


def run_verification(cfg: RunConfig, snapshot: Field | None = None) -> dict:
    jobs = build_jobs(cfg, snapshot)
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(_run_task, jobs))
    else:
        results = [_run_task(j) for j in jobs]
    rows: list[Row] = []
    stab = []
    timings = {}
    for (fn, _, case), (out, dt) in zip(jobs, results):
        timings[f"{fn.__name__}[{case}]"] = dt
        if fn is task_stability:
            stab.extend(out if isinstance(out, list) else [out])
        else:
            rows.extend(out)
    if stab:
        rows.append(_stability_row(cfg, stab))
    order = {c: i for i, c in enumerate(CLAIMS)}
    rows.sort(key=lambda r: order[r.claim])  # stable: cells keep sweep order
    failed = [r for r in rows if not r.passed]
    return {
        # output location and worker count do not influence any result
        "config": {k: v for k, v in cfg.to_dict().items() if k not in ("out", "threads")},
        "claims": CLAIMS,
        "rows": [r.to_dict() for r in rows],
        "summary": {"total": len(rows), "passed": len(rows) - len(failed), "failed": len(failed)},
        "all_passed": not failed,
        "_timings": timings,
    }


def format_table(report: dict) -> str:
    lines = [f"{'claim':32s} {'case':40s} result"]
    for r in report["rows"]:
        tag = "PASS" if r["passed"] else "FAIL"
        extra = f"  ({r['error']})" if r["error"] else ""
        lines.append(f"{r['claim']:32s} {r['case'][:40]:40s} {tag}{extra}")
    s = report["summary"]
    lines.append(f"{s['passed']}/{s['total']} rows passed")
    return "\n".join(lines)
