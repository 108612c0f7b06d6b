"""Time integration of i u_t + (-Delta)^s u + V u - |u|^{p-1} u = 0.

With this sign convention u_t = i[(-Delta)^s u + V u - |u|^{p-1} u] and a
standing wave is u(t) = exp(-i omega t) phi (note: opposite to the more
common i u_t - Delta u convention).  Strang splitting alternates the exact
pointwise phase rotation exp(i dt (V - |u|^{p-1})) with the exact kinetic
flow exp(i dt |k|^{2s}) in Fourier space; both are L^2 isometries.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import eigh, null_space
from scipy.sparse.linalg import lobpcg

from .domain import Field, functionals, hs_inner, hs_norm, hs_weight, inner, l2_norm
from .groundstate import GroundState, ProblemSpec
from .operators import apply_H, dense_matrix

__all__ = [
    "EvolutionState",
    "StabilityTrace",
    "ModulationError",
    "ConservationError",
    "step_strang",
    "evolve",
    "conservation_monitor",
    "modulation_theta",
    "decompose_modulated",
    "orbital_distance",
    "perturbation_direction",
    "run_stability_experiment",
    "coercivity_check",
]


class ModulationError(ValueError):
    """The imaginary part is too large for the modulation ansatz."""


class ConservationError(RuntimeError):
    """Conservation drift exceeded the abort threshold."""


@dataclass(frozen=True, eq=False)
class EvolutionState:
    t: float
    u: Field
    spec: ProblemSpec
    dt: float
    scheme: str = "strang"
    nonlinear_coeff: float = 1.0

    def __post_init__(self):
        if self.scheme != "strang":
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.u.grid != self.spec.grid:
            raise ValueError("grid mismatch between state and problem")
        if np.isrealobj(self.u.values):
            object.__setattr__(self, "u", Field(self.u.grid, self.u.values.astype(complex)))


class _Stepper:
    """Precomputed propagators for repeated Strang steps on raw arrays."""

    def __init__(self, spec: ProblemSpec, dt: float, coeff: float = 1.0):
        grid = spec.grid
        self.half_v = 0.5 * dt * spec.potential.samples
        self.half_c = 0.5 * dt * coeff
        self.pm1 = spec.p - 1
        self.kinetic = np.exp(1j * dt * grid.k_abs ** (2 * spec.s))

    def _spatial(self, u, factor=1.0):
        return u * np.exp(1j * factor * (self.half_v - self.half_c * np.abs(u) ** self.pm1))

    def __call__(self, u: np.ndarray, steps: int = 1) -> np.ndarray:
        u = self._spatial(u)
        for i in range(steps):
            u = np.fft.ifftn(self.kinetic * np.fft.fftn(u))
            # adjacent half steps of consecutive steps merge into one full step
            u = self._spatial(u, 2.0 if i < steps - 1 else 1.0)
        return u


def step_strang(state: EvolutionState) -> EvolutionState:
    """One Strang step: half spatial, full kinetic, half spatial.

    A negative ``dt`` runs the step backwards; it inverts a forward step exactly.
    """
    if state.dt == 0:
        raise ValueError("time step must be nonzero")
    stepper = _Stepper(state.spec, state.dt, state.nonlinear_coeff)
    u = stepper(np.asarray(state.u.values))
    return replace(state, t=state.t + state.dt, u=Field(state.u.grid, u))


def evolve(state: EvolutionState, T: float, sample_every: float | None = None) -> list:
    """Integrate to time T and return the states at every sample instant.

    Samples include t = 0; ``sample_every`` must be a multiple of dt.
    """
    dt = state.dt
    sample_every = T if sample_every is None else sample_every
    per = int(round(sample_every / dt))
    if per < 1 or abs(per * dt - sample_every) > 1e-9 * sample_every:
        raise ValueError("sampling interval must be a positive multiple of dt")
    total = int(round(T / dt))
    stepper = _Stepper(state.spec, dt, state.nonlinear_coeff)
    u = np.asarray(state.u.values)
    out = [state]
    done = 0
    while done < total:
        n = min(per, total - done)
        u = stepper(u, n)
        done += n
        out.append(replace(state, t=state.t + done * dt, u=Field(state.u.grid, u)))
    return out


def _total_energy(spec: ProblemSpec, u: Field, omega: float) -> tuple[float, float]:
    parts = functionals(u, spec.potential, spec.s, spec.p)
    return parts.total_energy(omega), parts.power


def conservation_monitor(states, omega: float = 0.0) -> dict:
    """Largest relative drifts of the total energy E + omega P / 2 and of P."""
    if len(states) < 2:
        raise ValueError("need at least two samples")
    vals = np.array([_total_energy(st.spec, st.u, omega) for st in states])
    e0, p0 = vals[0]
    e_drift = np.abs(vals[:, 0] - e0) / max(abs(e0), 1e-300)
    p_drift = np.abs(vals[:, 1] - p0) / max(abs(p0), 1e-300)
    return {
        "max_E_drift": float(e_drift.max()),
        "max_P_drift": float(p_drift.max()),
        "E_drift": e_drift,
        "P_drift": p_drift,
    }


def modulation_theta(u: Field, phi: Field) -> float:
    """Small solution of sin(theta) ||phi||^2 = <Im u, phi>."""
    sine = inner(u.imag, phi.real) / l2_norm(phi) ** 2
    if abs(sine) > 1:
        raise ModulationError(f"sin(theta) = {sine:.4g} is out of range")
    return float(np.arcsin(sine))


@dataclass(frozen=True, eq=False)
class Modulated:
    theta: float
    mu: float
    eta: Field
    zeta: Field

    def reconstruct(self, phi: Field) -> Field:
        re = (np.cos(self.theta) + self.mu) * phi.real + self.eta
        im = np.sin(self.theta) * phi.real + self.zeta
        return Field(phi.grid, re.values + 1j * im.values)


def decompose_modulated(u: Field, phi: Field) -> Modulated:
    """Re u - cos(theta) phi = mu phi + eta and Im u - sin(theta) phi = zeta, eta, zeta orthogonal to phi."""
    theta = modulation_theta(u, phi)
    phi = phi.real
    nrm2 = l2_norm(phi) ** 2
    rest = u.real - np.cos(theta) * phi
    mu = inner(rest, phi) / nrm2
    eta = rest - mu * phi
    zeta = u.imag - np.sin(theta) * phi
    return Modulated(theta, float(mu), eta, zeta)


def orbital_distance(u: Field, phi: Field, s: float) -> tuple[float, float]:
    """inf over theta of ||u - exp(i theta) phi||_{H^s} and the minimizing angle."""
    z = hs_inner(u, phi, s)
    theta = float(np.angle(z)) if abs(z) > 0 else 0.0
    d = hs_norm(u - np.exp(1j * theta) * phi, s)
    return d, theta


def perturbation_direction(phi: Field, s: float, seed: int) -> Field:
    """Seeded complex Gaussian field, tapered near the box edge, unit H^s norm.

    The imaginary part is made H^s-orthogonal to phi so that the orbit
    distance of phi + delta w is exactly delta.
    """
    grid = phi.grid
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    taper = np.exp(-((grid.radius / (0.8 * grid.L)) ** 8))
    w = Field(grid, raw * taper)
    phi = phi.real
    im = w.imag
    im = im - (hs_inner(im, phi, s).real / hs_norm(phi, s) ** 2) * phi
    w = Field(grid, w.real.values + 1j * im.values)
    return w / hs_norm(w, s)


@dataclass(eq=False)
class StabilityTrace:
    times: np.ndarray
    distance: np.ndarray
    theta: np.ndarray
    mu: np.ndarray
    eta_norm: np.ndarray
    zeta_norm: np.ndarray
    energy_drift: np.ndarray
    power_drift: np.ndarray
    delta: float
    dt: float
    T: float
    seed: int
    modulation_breakdown: float | None = None
    reconstruction_error: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def sup_distance(self) -> float:
        return float(np.max(self.distance))

    def columns(self) -> dict:
        return {
            "t": self.times,
            "d": self.distance,
            "theta": self.theta,
            "mu": self.mu,
            "eta_norm": self.eta_norm,
            "zeta_norm": self.zeta_norm,
            "E_drift": self.energy_drift,
            "P_drift": self.power_drift,
        }


def run_stability_experiment(
    gs: GroundState,
    delta: float,
    T: float = 50.0,
    dt: float = 1e-3,
    seed: int = 0,
    sample_every: float = 0.1,
    abort_drift: float = 1e-4,
) -> StabilityTrace:
    """Evolve phi + delta w and track the orbit distance and modulation data."""
    if delta < 0:
        raise ValueError("perturbation size must be nonnegative")
    spec, phi = gs.spec, gs.phi.real
    s = spec.s
    if delta > 0.1 * hs_norm(phi, s):
        raise ValueError("perturbation too large for an orbital stability run")
    w = perturbation_direction(phi, s, seed)
    u0 = Field(phi.grid, phi.values + delta * w.values)
    state = EvolutionState(0.0, u0, spec, dt)

    per = int(round(sample_every / dt))
    total = int(round(T / dt))
    stepper = _Stepper(spec, dt)
    e0, p0 = _total_energy(spec, u0, gs.omega)
    cols = {k: [] for k in ("t", "d", "theta", "mu", "eta", "zeta", "E", "P")}
    breakdown = None
    recon = 0.0
    u = np.asarray(u0.values)
    done = 0
    while True:
        uf = Field(phi.grid, u)
        t = done * dt
        d, _ = orbital_distance(uf, phi, s)
        e, p = _total_energy(spec, uf, gs.omega)
        e_dr = abs(e - e0) / max(abs(e0), 1e-300)
        p_dr = abs(p - p0) / max(abs(p0), 1e-300)
        if breakdown is None:
            try:
                mod = decompose_modulated(uf, phi)
                recon = max(recon, l2_norm(mod.reconstruct(phi) - uf) / l2_norm(uf))
                vals = (mod.theta, mod.mu, hs_norm(mod.eta, s), hs_norm(mod.zeta, s))
            except ModulationError:
                breakdown = t
                vals = (np.nan,) * 4
        else:
            vals = (np.nan,) * 4
        for key, v in zip(("t", "d", "theta", "mu", "eta", "zeta", "E", "P"),
                          (t, d, *vals, e_dr, p_dr)):
            cols[key].append(v)
        if max(e_dr, p_dr) > abort_drift:
            raise ConservationError(
                f"conservation drift {max(e_dr, p_dr):.3e} exceeds {abort_drift:g} at t={t:.3g}"
            )
        if done >= total:
            break
        n = min(per, total - done)
        u = stepper(u, n)
        done += n
    arr = {k: np.array(v, dtype=float) for k, v in cols.items()}
    return StabilityTrace(
        arr["t"], arr["d"], arr["theta"], arr["mu"], arr["eta"], arr["zeta"], arr["E"], arr["P"],
        delta=delta, dt=dt, T=T, seed=seed, modulation_breakdown=breakdown,
        reconstruction_error=recon,
        meta={"scheme": state.scheme, "omega": gs.omega, **spec.describe()},
    )


def _hs_matrix(grid, s):
    col = np.fft.ifft(hs_weight(grid, s)).real
    idx = np.arange(grid.N)
    mat = col[(idx[:, None] - idx[None, :]) % grid.N]
    return 0.5 * (mat + mat.T)


def _constrained_min(op, phi: Field, s: float) -> tuple[float, Field]:
    """min <L h, h> / ||h||_{H^s}^2 over h orthogonal to phi in L^2."""
    grid = phi.grid
    if grid.dim == 1 and grid.N <= 1024:
        A = dense_matrix(op)
        G = _hs_matrix(grid, s)
        Q = null_space(phi.values.reshape(1, -1))
        w, Y = eigh(Q.T @ A @ Q, Q.T @ G @ Q, subset_by_index=(0, 0))
        vec = Q @ Y[:, 0]
        return float(w[0]), Field(grid, vec)
    n = grid.size
    shape = grid.shape
    weight = hs_weight(grid, s)

    def amul(X):
        X = np.atleast_2d(X.T).T
        return np.column_stack([apply_H(op, Field(grid, x)).values.ravel() for x in X.T])

    def bmul(X):
        X = np.atleast_2d(X.T).T
        return np.column_stack(
            [np.fft.ifftn(weight * np.fft.fftn(x.reshape(shape))).real.ravel() for x in X.T]
        )

    from scipy.sparse.linalg import LinearOperator

    A = LinearOperator((n, n), matmat=amul, matvec=lambda x: amul(x[:, None])[:, 0])
    B = LinearOperator((n, n), matmat=bmul, matvec=lambda x: bmul(x[:, None])[:, 0])
    rng = np.random.default_rng(7)
    X = rng.standard_normal((n, 4))
    w, V = lobpcg(A, X, B=B, Y=phi.values.reshape(-1, 1), largest=False, tol=1e-10, maxiter=2000)
    j = int(np.argmin(w))
    return float(w[j]), Field(grid, V[:, j])


def coercivity_check(pair, trials: int = 100, seed: int = 0) -> dict:
    """Coercivity constants of L+ and L- on the L^2-complement of phi, H^s-normalized.

    Also samples random directions orthogonal to phi and records the smallest
    observed Rayleigh quotient ratio to the estimate.
    """
    gs = pair.source
    phi = gs.phi.real
    s = gs.spec.s
    kp, _ = _constrained_min(pair.lplus, phi, s)
    km, _ = _constrained_min(pair.lminus, phi, s)
    kappa = min(kp, km)
    if kappa <= 0:
        raise ValueError(f"negative coercivity estimate {kappa:.3e}: index certification fails")
    rng = np.random.default_rng(seed)
    grid = phi.grid
    nphi2 = l2_norm(phi) ** 2
    worst = np.inf
    for _ in range(trials):
        h = Field(grid, rng.standard_normal(grid.shape))
        h = h - (inner(h, phi) / nphi2) * phi
        hn = hs_norm(h, s) ** 2
        for op, k in ((pair.lplus, kp), (pair.lminus, km)):
            worst = min(worst, inner(apply_H(op, h), h) / (k * hn))
    return {"kappa": kappa, "kappa_plus": kp, "kappa_minus": km, "sample_min_ratio": float(worst)}
