"""Command-line entry point: ``fnls {groundstate,spectrum,evolve,stability,verify}``.

Exit codes: 0 pass, 1 invariant failure, 2 config or snapshot error,
3 solver failure, 4 conservation abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import plotting
from .config import ConfigError, RunConfig
from .domain import Field, l2_norm
from .dynamics import (
    ConservationError,
    EvolutionState,
    conservation_monitor,
    evolve,
    orbital_distance,
    perturbation_direction,
    run_stability_experiment,
)
from .groundstate import (
    GroundState,
    SolverError,
    groundstate_invariants,
    solve_fixed_point,
    solve_gradient_flow,
)
from .operators import ResolventError
from .spectral import (
    SpectralError,
    certify_indices,
    check_sector_relation,
    default_zero_tol,
    eigen_lowest,
    linearize,
    sturm_second_radial,
    truncated_potential_convergence,
)
from .storage import SnapshotError, read_snapshot, write_csv, write_json, write_rows, write_snapshot
from .verify import format_table, groundstate_from_field, run_verification

log = logging.getLogger("fnls")

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_SOLVER, EXIT_CONSERVATION = 0, 1, 2, 3, 4

SNAPSHOT_NAME = "groundstate.fnls"


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fail(failures: list[str]) -> int:
    for f in failures:
        print(f"FAILED: {f}", file=sys.stderr)
    return EXIT_INVARIANT if failures else EXIT_OK


def _meta(path: Path, extra: dict | None = None):
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    write_json(path, {"timestamp": stamp, **(extra or {})})


# ---------------------------------------------------------------- ground state


def _solve(cfg: RunConfig, solver: str = "gradient_flow") -> GroundState:
    spec = cfg.problem()
    try:
        if solver == "fixed_point":
            return solve_fixed_point(spec, shift=cfg.fp_shift, tol=cfg.tol, max_iter=cfg.fp_max_iter)
        return solve_gradient_flow(spec, tau=cfg.tau, tol=cfg.tol, max_iter=cfg.max_iter)
    except (SolverError, ResolventError) as exc:
        raise CommandError(EXIT_SOLVER, f"ground-state solver failed: {exc}") from exc


def _load_groundstate(cfg: RunConfig, path) -> GroundState:
    """Ground state from a snapshot, or a fresh solve when no path is given."""
    if path is None:
        default = Path(cfg.out) / SNAPSHOT_NAME
        if not default.exists():
            return _solve(cfg)
        path = default
    try:
        phi = read_snapshot(path)
    except (OSError, SnapshotError) as exc:
        raise CommandError(EXIT_CONFIG, f"cannot load snapshot {path}: {exc}") from exc
    spec = cfg.problem()
    if phi.grid != spec.grid:
        raise CommandError(
            EXIT_CONFIG,
            f"snapshot grid (n={phi.grid.dim}, L={phi.grid.L:g}, N={phi.grid.N}) does not match "
            f"config grid (n={spec.grid.dim}, L={spec.grid.L:g}, N={spec.grid.N})",
        )
    return groundstate_from_field(spec, phi)


def cmd_groundstate(cfg: RunConfig, args) -> int:
    gs = _solve(cfg, args.solver)
    out = Path(cfg.out)
    flags = groundstate_invariants(gs, cfg.tol)
    write_snapshot(out / SNAPSHOT_NAME, gs.phi)
    write_json(out / "groundstate.json", {
        "config": cfg.to_dict(),
        "groundstate": gs.report(),
        "invariants": flags,
    })
    x = gs.phi.grid.axis
    vals = np.real(gs.phi.values)
    profile = vals if gs.spec.dim == 1 else vals[:, gs.phi.grid.N // 2]
    write_csv(out / "groundstate.csv", {"x": x, "phi": profile})
    plotting.plot_groundstate(gs, out / "groundstate.png")
    print(f"omega = {gs.omega:.12g}  energy = {gs.energy:.12g}  "
          f"residual = {gs.el_residual:.3e}  ({gs.solver}, {gs.iterations} iterations)")
    return _fail([f"invariant {k}" for k, v in flags.items() if not v])


# ---------------------------------------------------------------- spectra


def cmd_spectrum(cfg: RunConfig, args) -> int:
    gs = _load_groundstate(cfg, args.groundstate)
    grid = gs.phi.grid
    sectors = list(cfg.sectors)
    if grid.dim != 1 and sectors != ["full"]:
        raise CommandError(EXIT_CONFIG, "parity sectors are only available in 1D; use --sectors full")
    try:
        pair = linearize(gs)
    except SpectralError as exc:
        raise CommandError(EXIT_SOLVER, str(exc)) from exc
    zero_tol = cfg.zero_tol or default_zero_tol(gs.omega)
    ops = {"H": gs.spec.hamiltonian(), "Lplus": pair.lplus, "Lminus": pair.lminus}
    reports = {}
    for sec in sectors:
        for tag, op in ops.items():
            reports[(tag, sec)] = eigen_lowest(op, m=cfg.m, sector=sec, zero_tol=zero_tol, tag=tag)

    failures = []
    cert = {}
    if "full" in sectors:
        full = {k: reports[(k, "full")] for k in ("Lplus", "Lminus")}
        idx = certify_indices(pair, zero_tol=zero_tol, spectra=full)
        cert["indices"] = idx
        if idx["n_plus"] != 1:
            failures.append(f"Morse index n_plus = {idx['n_plus']} (expected 1)")
        if idx["ker_plus_dim"] != 0:
            failures.append(f"L+ kernel dimension {idx['ker_plus_dim']} (expected 0)")
        if abs(idx["lminus_min"]) > 1e-6 or idx["lminus_phi_cosine"] < 1 - 1e-6:
            failures.append("L- lowest eigenpair is not (0, phi)")
        if not idx["lminus_gap"] > 0:
            failures.append("L- gap is not positive")
    if grid.dim == 1 and "even" in sectors:
        st = sturm_second_radial(gs, pair)
        cert["sturm"] = st
        if not st["passed"]:
            failures.append("second even L+ eigenfield sign-change count")
        cert["truncation"] = truncated_potential_convergence(
            gs.spec, [r for r in cfg.truncation_radii if r <= grid.L],
            shift=gs.omega, extra=pair.lplus.extra,
        )
        if not cert["truncation"]["nondecreasing"]:
            failures.append("truncated eigenvalues not nondecreasing")
    if grid.dim == 1 and "odd" in sectors:
        rel = check_sector_relation(gs, pair)
        odd_min = float(reports[("Lplus", "odd")].eigenvalues[0])
        cert["sector_relation"] = {"residual": rel, "odd_lplus_min": odd_min}
        if rel > 1e-5:
            failures.append(f"sector relation residual {rel:.3e} > 1e-5")
        if not odd_min > 0:
            failures.append("odd-sector L+ not positive")

    out = Path(cfg.out)
    write_json(out / "spectrum.json", {
        "config": cfg.to_dict(),
        "groundstate": gs.report(),
        "spectra": [r.to_dict() for r in reports.values()],
        "certificates": cert,
        "passed": not failures,
    })
    rows = []
    for r in reports.values():
        for j, mu in enumerate(r.eigenvalues):
            rows.append((r.operator, r.sector, j, float(mu), float(r.residuals[j]), int(r.sign_changes[j])))
    write_rows(out / "spectrum.csv",
               ("operator", "sector", "index", "eigenvalue", "residual", "sign_changes"), rows)
    plotting.plot_spectrum(list(reports.values()), out / "spectrum.png")
    first = reports[("Lplus", sectors[0])]
    plotting.plot_eigenfields(first, out / f"eigenfields_Lplus_{sectors[0]}.png")
    if "indices" in cert:
        print(f"n_plus = {cert['indices']['n_plus']}  ker_plus_dim = {cert['indices']['ker_plus_dim']}  "
              f"lminus_gap = {cert['indices']['lminus_gap']:.6g}")
    return _fail(failures)


# ---------------------------------------------------------------- dynamics


def _sampling(cfg: RunConfig) -> float:
    per = max(1, int(round(cfg.sample_every / cfg.dt)))
    return per * cfg.dt


def cmd_evolve(cfg: RunConfig, args) -> int:
    gs = _load_groundstate(cfg, args.groundstate)
    phi = gs.phi.real
    u0 = phi
    if cfg.delta > 0:
        w = perturbation_direction(phi, gs.spec.s, cfg.seed)
        u0 = Field(phi.grid, phi.values + cfg.delta * w.values)
    states = evolve(EvolutionState(0.0, u0, gs.spec, cfg.dt), cfg.T, sample_every=_sampling(cfg))
    mon = conservation_monitor(states, gs.omega)
    out = Path(cfg.out)
    times = np.array([st.t for st in states])
    dist = np.array([orbital_distance(st.u, phi, gs.spec.s)[0] for st in states])
    write_csv(out / "evolution.csv", {
        "t": times, "d": dist, "E_drift": mon["E_drift"], "P_drift": mon["P_drift"],
        "power": np.array([l2_norm(st.u) ** 2 for st in states]),
    })
    write_snapshot(out / "final.fnls", states[-1].u)
    meta = {"dt": cfg.dt, "T": cfg.T, "delta": cfg.delta, "seed": cfg.seed, "scheme": "strang",
            "omega": gs.omega, **gs.spec.describe()}
    write_json(out / "evolution.json", {**meta, "max_E_drift": mon["max_E_drift"],
                                        "max_P_drift": mon["max_P_drift"],
                                        "sup_distance": float(dist.max())})
    _meta(out / "evolution.meta.json", meta)
    plotting.plot_conservation(times, mon["E_drift"], mon["P_drift"], out / "evolution.png")
    print(f"max E drift {mon['max_E_drift']:.3e}  max P drift {mon['max_P_drift']:.3e}  "
          f"sup d {dist.max():.3e}")
    if mon["max_E_drift"] > 1e-6 or mon["max_P_drift"] > 1e-10 * max(cfg.T, 1.0):
        print("conservation bound exceeded", file=sys.stderr)
        return EXIT_CONSERVATION
    return EXIT_OK


def cmd_stability(cfg: RunConfig, args) -> int:
    gs = _load_groundstate(cfg, args.groundstate)
    try:
        tr = run_stability_experiment(gs, cfg.delta, T=cfg.T, dt=cfg.dt, seed=cfg.seed,
                                      sample_every=_sampling(cfg))
    except ConservationError as exc:
        print(f"conservation abort: {exc}", file=sys.stderr)
        return EXIT_CONSERVATION
    except ValueError as exc:
        raise CommandError(EXIT_CONFIG, str(exc)) from exc
    out = Path(cfg.out)
    write_csv(out / "stability.csv", tr.columns())
    meta = {**tr.meta, "delta": tr.delta, "dt": tr.dt, "T": tr.T, "seed": tr.seed,
            "envelope": cfg.envelope, "sup_distance": tr.sup_distance,
            "modulation_breakdown": tr.modulation_breakdown,
            "reconstruction_error": tr.reconstruction_error}
    write_json(out / "stability.json", meta)
    _meta(out / "stability.meta.json", meta)
    plotting.plot_distance([tr], out / "stability.png")
    bound = cfg.envelope * cfg.delta if cfg.delta > 0 else 1e-5
    print(f"sup d = {tr.sup_distance:.6e}  bound = {bound:.3e}")
    failures = []
    if tr.sup_distance > bound:
        failures.append(f"sup d(t) = {tr.sup_distance:.3e} exceeds {bound:.3e}")
    if np.max(tr.power_drift) > 1e-10 * max(cfg.T, 1.0):
        failures.append("power drift above bound")
    if np.max(tr.energy_drift) > 1e-6 * max(1.0, cfg.T / 10):
        failures.append("energy drift above bound")
    return _fail(failures)


# ---------------------------------------------------------------- verify


def cmd_verify(cfg: RunConfig, args) -> int:
    snapshot = None
    if args.groundstate is not None:
        try:
            snapshot = read_snapshot(args.groundstate)
        except (OSError, SnapshotError) as exc:
            raise CommandError(EXIT_CONFIG, f"cannot load snapshot: {exc}") from exc
    report = run_verification(cfg, snapshot)
    timings = report.pop("_timings")
    out = Path(cfg.out)
    write_json(out / "verify.json", report)
    write_rows(out / "verify.csv", ("claim", "case", "passed", "error", "measured"), [
        (r["claim"], r["case"], r["passed"], r["error"] or "",
         json.dumps(r["measured"], sort_keys=True, default=float))
        for r in report["rows"]
    ])
    _meta(out / "verify.meta.json", {"timings_seconds": timings})
    print(format_table(report))
    return _fail([f"{r['claim']} [{r['case']}]: {r['error'] or 'check failed'}"
                  for r in report["rows"] if not r["passed"]])


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand's unset flag from clobbering the same flag
    # given before the subcommand name
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker processes for verify")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="fnls", description="Normalized ground states of the trapped "
                                     "fractional NLS and their orbital stability.",
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("groundstate", parents=[common], help="solve for the normalized ground state")
    p.add_argument("--solver", choices=("gradient_flow", "fixed_point"), default="gradient_flow")

    p = sub.add_parser("spectrum", parents=[common], help="spectra and index certificates")
    p.add_argument("--groundstate", type=Path, help="ground-state snapshot (.fnls)")
    p.add_argument("--sectors", help="comma-separated subset of even,odd,full")

    for name, helptext in (("evolve", "time-evolve the ground state"),
                           ("stability", "orbital stability experiment")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--groundstate", type=Path, help="ground-state snapshot (.fnls)")
        p.add_argument("--delta", type=float, help="perturbation size in H^s")
        p.add_argument("--dt", type=float, help="time step")
        p.add_argument("--T", type=float, help="final time")

    p = sub.add_parser("verify", parents=[common], help="run the full verification table")
    p.add_argument("--groundstate", type=Path, help="also check a stored ground state")
    return parser


def _config(args) -> RunConfig:
    data = {}
    path = getattr(args, "config", None)
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    for key in ("out", "threads", "seed", "delta", "dt", "T"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    if getattr(args, "sectors", None):
        data["sectors"] = [s.strip() for s in args.sectors.split(",") if s.strip()]
    cfg = RunConfig.from_dict(data)
    cfg.problem()  # surface potential errors at parse time
    return cfg


COMMANDS = {
    "groundstate": cmd_groundstate,
    "spectrum": cmd_spectrum,
    "evolve": cmd_evolve,
    "stability": cmd_stability,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CommandError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except (SolverError, ResolventError, SpectralError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
