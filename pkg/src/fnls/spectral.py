"""Eigen-analysis of H and of the linearized operators L+ and L-.

In 1D the grid reflection x -> -x splits every radial operator into an even
and an odd block; these stand in for the radial and first angular sectors.
Dense diagonalization is used in 1D; shift-invert Lanczos (with the CG
resolvent as the inner solver) handles 2D and serves as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .domain import Field, Grid, inner, l2_norm, nonlinear_power, spectral_apply
from .groundstate import GroundState, ProblemSpec
from .operators import OperatorHandle, apply_H, apply_resolvent, dense_matrix

__all__ = [
    "SpectrumReport",
    "LinearizedPair",
    "SpectralError",
    "sector_basis",
    "eigen_lowest",
    "linearize",
    "certify_indices",
    "count_sign_changes",
    "radial_profile",
    "sturm_second_radial",
    "check_sector_relation",
    "truncated_potential_convergence",
]

SECTORS = ("full", "even", "odd")


class SpectralError(RuntimeError):
    pass


def default_zero_tol(omega: float) -> float:
    return 1e-6 * (1.0 + abs(omega))


@dataclass(eq=False)
class SpectrumReport:
    operator: str
    sector: str
    eigenvalues: np.ndarray
    eigenfields: list
    zero_tol: float
    sign_changes: list
    residuals: np.ndarray = field(repr=False)
    method: str = "dense"

    @property
    def grid(self) -> Grid:
        return self.eigenfields[0].grid

    @property
    def negative_count(self) -> int:
        return int(np.sum(self.eigenvalues < -self.zero_tol))

    @property
    def near_zero_count(self) -> int:
        return int(np.sum(np.abs(self.eigenvalues) <= self.zero_tol))

    def orthonormality_error(self) -> float:
        m = len(self.eigenfields)
        gram = np.array([[inner(a, b) for b in self.eigenfields] for a in self.eigenfields])
        return float(np.max(np.abs(gram - np.eye(m))))

    def to_dict(self) -> dict:
        return {
            "operator": self.operator,
            "sector": self.sector,
            "method": self.method,
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "negative_count": self.negative_count,
            "near_zero_count": self.near_zero_count,
            "zero_tol": self.zero_tol,
            "sign_changes": [int(c) for c in self.sign_changes],
            "residuals": [float(x) for x in self.residuals],
        }


def sector_basis(grid: Grid, sector: str) -> np.ndarray:
    """Orthonormal (Euclidean) basis of the even or odd subspace of a 1D grid."""
    if grid.dim != 1:
        raise ValueError("parity sectors are only available in 1D")
    n = grid.N
    half = n // 2
    cols = []
    if sector == "even":
        for j in (0, half):
            e = np.zeros(n)
            e[j] = 1.0
            cols.append(e)
        for j in range(1, half):
            e = np.zeros(n)
            e[j] = e[n - j] = np.sqrt(0.5)
            cols.append(e)
    elif sector == "odd":
        for j in range(1, half):
            e = np.zeros(n)
            e[j] = np.sqrt(0.5)
            e[n - j] = -np.sqrt(0.5)
            cols.append(e)
    else:
        raise ValueError(f"unknown sector {sector!r}")
    return np.array(cols).T


def _sector_project(grid: Grid, values: np.ndarray, sector: str) -> np.ndarray:
    if sector == "full":
        return values
    refl = grid.reflect(values)
    return 0.5 * (values + refl) if sector == "even" else 0.5 * (values - refl)


def radial_profile(f: Field) -> np.ndarray:
    """Samples of f along the ray from the origin in the +x_1 direction."""
    grid = f.grid
    half = grid.N // 2
    vals = np.real(f.values)
    if grid.dim == 1:
        return vals[half:]
    return vals[half:, half]


def count_sign_changes(profile, amplitude_tol: float = 1e-6) -> int:
    """Strict sign alternations among entries above amplitude_tol * max|profile|."""
    prof = np.asarray(profile, dtype=float)
    top = np.max(np.abs(prof), initial=0.0)
    kept = prof[np.abs(prof) > amplitude_tol * top]
    if kept.size == 0:
        raise ValueError("profile vanishes below the amplitude threshold")
    signs = np.sign(kept)
    return int(np.sum(signs[1:] != signs[:-1]))


def _normalize_sign(v: np.ndarray, grid: Grid) -> np.ndarray:
    # deterministic orientation: the first entry of largest modulus is positive
    prof = v.ravel()
    idx = int(np.argmax(np.abs(prof) > 0.5 * np.abs(prof).max()))
    return v if prof[idx] >= 0 else -v


def _finish(op, tag, sector, evals, vecs, zero_tol, method, amplitude_tol):
    grid = op.grid
    fields, residuals, changes = [], [], []
    for mu, vec in zip(evals, vecs):
        vec = _normalize_sign(vec / np.sqrt(np.sum(vec**2) * grid.cell_volume), grid)
        f = Field(grid, vec)
        fields.append(f)
        residuals.append(l2_norm(apply_H(op, f) - mu * f))
        changes.append(count_sign_changes(radial_profile(f), amplitude_tol))
    return SpectrumReport(
        tag, sector, np.asarray(evals, dtype=float), fields, zero_tol, changes,
        np.array(residuals), method,
    )


def eigen_lowest(
    op: OperatorHandle,
    m: int = 6,
    sector: str = "full",
    zero_tol: float = 1e-6,
    method: str | None = None,
    tag: str = "H",
    amplitude_tol: float = 1e-6,
    lanczos_tol: float = 1e-13,
) -> SpectrumReport:
    """Lowest ``m`` eigenpairs of a self-adjoint grid operator.

    ``method`` is "dense" (1D only; the default for N <= 1024) or "lanczos"
    (the default otherwise).  The dense route loses accuracy roughly as
    eps * max|V|, which is why large boxes go through Lanczos.
    Eigenfields are L^2-normalized with the grid measure.
    """
    grid = op.grid
    if not 1 <= m <= 12:
        raise ValueError("m must lie in 1..12")
    if sector not in SECTORS:
        raise ValueError(f"unknown sector {sector!r}")
    if grid.dim != 1 and sector != "full":
        raise ValueError("sector-resolved spectra are only supported in 1D")
    method = method or ("dense" if grid.dim == 1 and grid.N <= 1024 else "lanczos")

    if method == "dense":
        if grid.dim != 1:
            raise ValueError("dense diagonalization is only assembled in 1D")
        mat = dense_matrix(op)
        # radial operators commute with the reflection, so the full spectrum
        # is the merge of the two parity blocks (each a quarter of the cost)
        parts = []
        for sec in (("even", "odd") if sector == "full" else (sector,)):
            Q = sector_basis(grid, sec)
            k = min(m, Q.shape[1])
            w, Y = eigh(Q.T @ mat @ Q, subset_by_index=(0, k - 1), driver="evr")
            parts.append((w, Q @ Y))
        w = np.concatenate([p[0] for p in parts])
        U = np.concatenate([p[1] for p in parts], axis=1)
        order = np.argsort(w, kind="stable")[:m]
        w, U = w[order], U[:, order]
        return _finish(op, tag, sector, w, list(U.T), zero_tol, "dense", amplitude_tol)

    if method != "lanczos":
        raise ValueError(f"unknown method {method!r}")
    n = grid.size
    shape = grid.shape
    # shift strictly below the spectrum so that op - sigma is positive definite
    sigma = float(op.diagonal.min()) - 1.0
    shifted = op.with_shift(op.shift - sigma)

    def proj(v):
        return _sector_project(grid, v.reshape(shape), sector).ravel()

    def matvec(v):
        return proj(apply_H(op, Field(grid, proj(np.real(v)))).values.ravel())

    def solve(v):
        rhs = Field(grid, proj(np.real(v)))
        if not np.any(rhs.values):
            return np.zeros(n)
        return proj(apply_resolvent(shifted, rhs, tol=1e-13).values.ravel())

    A = LinearOperator((n, n), matvec=matvec, dtype=float)
    Ainv = LinearOperator((n, n), matvec=solve, dtype=float)
    rng = np.random.default_rng(12345)
    v0 = proj(rng.standard_normal(n))
    try:
        w, U = eigsh(A, k=m, sigma=sigma, which="LM", OPinv=Ainv, v0=v0, tol=lanczos_tol,
                     maxiter=5000)
    except ArpackNoConvergence as exc:
        raise SpectralError(f"Lanczos did not converge: {exc}") from exc
    order = np.argsort(w)
    w, U = w[order], U[:, order]
    vecs = [U[:, j].reshape(shape) for j in range(m)]
    return _finish(op, tag, sector, w, vecs, zero_tol, "lanczos", amplitude_tol)


@dataclass(eq=False)
class LinearizedPair:
    """L+ = H + omega - p phi^{p-1} and L- = H + omega - phi^{p-1}."""

    lplus: OperatorHandle
    lminus: OperatorHandle
    source: GroundState

    @property
    def spec(self) -> ProblemSpec:
        return self.source.spec

    def invariant_residuals(self) -> dict:
        phi = self.source.phi
        nrm = l2_norm(phi)
        phip = phi.with_values(nonlinear_power(phi.values, self.spec.p))
        return {
            "lminus_phi": l2_norm(apply_H(self.lminus, phi)) / nrm,
            "lplus_phi": l2_norm(apply_H(self.lplus, phi) + (self.spec.p - 1) * phip) / nrm,
            "lplus_form": inner(apply_H(self.lplus, phi), phi),
            "lplus_form_expected": -(self.spec.p - 1) * float(
                np.sum(np.abs(phi.values) ** (self.spec.p + 1)) * phi.grid.cell_volume
            ),
        }


def linearize(gs: GroundState, max_residual: float | None = None) -> LinearizedPair:
    spec = gs.spec
    limit = 1e-6 * np.sqrt(spec.lam) if max_residual is None else max_residual
    if not gs.el_residual <= limit:
        raise SpectralError(
            f"ground state not converged (residual {gs.el_residual:.3e} > {limit:.3e})"
        )
    base = np.abs(np.real(gs.phi.values)) ** (spec.p - 1)
    lplus = OperatorHandle(spec.s, spec.potential, gs.omega, -spec.p * base)
    lminus = OperatorHandle(spec.s, spec.potential, gs.omega, -base)
    return LinearizedPair(lplus, lminus, gs)


def certify_indices(
    pair: LinearizedPair,
    zero_tol: float | None = None,
    spectra: dict | None = None,
    m: int = 6,
) -> dict:
    """Morse index and kernel of L+, kernel and gap of L-.

    ``spectra`` may carry precomputed full-grid reports under the keys
    "Lplus" and "Lminus" (each with at least 4 eigenvalues).
    """
    omega = pair.source.omega
    zero_tol = default_zero_tol(omega) if zero_tol is None else zero_tol
    spectra = dict(spectra or {})
    for key, op in (("Lplus", pair.lplus), ("Lminus", pair.lminus)):
        if key not in spectra:
            spectra[key] = eigen_lowest(op, m=m, zero_tol=zero_tol, tag=key)
        if len(spectra[key].eigenvalues) < 4:
            raise SpectralError(f"{key} spectrum has fewer than 4 eigenvalues")
    sp, sm = spectra["Lplus"], spectra["Lminus"]
    phi = pair.source.phi
    nphi = l2_norm(phi)
    ev_p = sp.eigenvalues
    n_plus = int(np.sum(ev_p < -zero_tol))
    kernel = np.abs(ev_p) <= zero_tol
    kernel_overlap = max(
        (abs(inner(v, phi)) / nphi for v, k in zip(sp.eigenfields, kernel) if k), default=0.0
    )
    cos_phi = abs(inner(sm.eigenfields[0], phi)) / nphi
    return {
        "n_plus": n_plus,
        "ker_plus_dim": int(np.sum(kernel)),
        "lplus_eigenvalues": [float(x) for x in ev_p],
        "lminus_min": float(sm.eigenvalues[0]),
        "lminus_gap": float(sm.eigenvalues[1]),
        "lminus_phi_cosine": float(cos_phi),
        "kernel_phi_overlap": float(kernel_overlap),
        "zero_tol": zero_tol,
    }


def sturm_second_radial(
    gs: GroundState, pair: LinearizedPair | None = None, amplitude_tol: float = 1e-6
) -> dict:
    """Two lowest even-sector L+ eigenvalues and the sign changes of the second."""
    if gs.phi.grid.dim != 1:
        raise ValueError("radial Sturm check is only implemented in 1D")
    pair = pair or linearize(gs)
    rep = eigen_lowest(pair.lplus, m=2, sector="even", tag="Lplus",
                       zero_tol=default_zero_tol(gs.omega), amplitude_tol=amplitude_tol)
    e0, e1 = (float(x) for x in rep.eigenvalues[:2])
    changes = int(rep.sign_changes[1])
    return {
        "E0": e0,
        "E1": e1,
        "sign_changes_E0": int(rep.sign_changes[0]),
        "sign_changes_E1": changes,
        "passed": bool(e0 < 0 < e1 and changes == 1),
    }


def spectral_derivative(f: Field, axis: int = 0) -> Field:
    grid = f.grid
    k = grid.wavenumbers.copy()
    k[grid.N // 2] = 0.0  # drop the unpaired Nyquist mode so real fields stay real
    shape = [1] * grid.dim
    shape[axis] = grid.N
    return spectral_apply(f, 1j * k.reshape(shape))


def check_sector_relation(gs: GroundState, pair: LinearizedPair | None = None) -> float:
    """||L+(d phi/dx_1) + (dV/dx_1) phi|| / ||phi||."""
    pair = pair or linearize(gs)
    phi = gs.phi.real
    dphi = spectral_derivative(phi, 0)
    dv = gs.spec.potential.gradient(0)
    return l2_norm(apply_H(pair.lplus, dphi) + dv * phi) / l2_norm(phi)


def truncated_potential_convergence(
    spec: ProblemSpec,
    radii,
    shift: float = 0.0,
    extra=None,
    m: int = 2,
) -> dict:
    """Even-sector eigenvalues of (-Delta)^s + min(V, V(R)) for each radius R.

    Returns the table together with the untruncated reference values and
    monotonicity flags.
    """
    grid = spec.grid
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size == 0 or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be strictly ascending")
    if radii[0] <= 0 or radii[-1] > grid.L:
        raise ValueError(f"radii must lie in (0, L={grid.L}]")
    sector = "even" if grid.dim == 1 else "full"
    full = eigen_lowest(OperatorHandle(spec.s, spec.potential, shift, extra), m=m, sector=sector)
    rows = []
    for R in radii:
        op = OperatorHandle(spec.s, spec.potential.capped(R), shift, extra)
        ev = eigen_lowest(op, m=m, sector=sector).eigenvalues
        rows.append({"R": float(R), **{f"E{j}_R": float(ev[j]) for j in range(m)}})
    table = np.array([[r[f"E{j}_R"] for j in range(m)] for r in rows])
    ref = full.eigenvalues
    slack = 1e-10 * (1 + np.abs(ref))
    return {
        "rows": rows,
        "untruncated": [float(x) for x in ref],
        "nondecreasing": bool(np.all(np.diff(table, axis=0) >= -slack)),
        "bounded": bool(np.all(table <= ref + slack)),
        "gap_at_largest": float(ref[0] - table[-1, 0]),
    }
