"""Trapping potentials, the fractional Laplacian and H = (-Delta)^s + V.

The resolvent ((-Delta)^s + V + mu)^{-1} is applied matrix-free with
preconditioned conjugate gradients.  The preconditioner is the V = 0 Green's
multiplier 1/(|k|^{2s} + c), diagonal in Fourier space, wrapped in the
pointwise scaling sqrt(c/(V + mu + c)).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .domain import Field, Grid, check_same_grid, spectral_apply

__all__ = [
    "Potential",
    "OperatorHandle",
    "ResolventError",
    "apply_fractional_laplacian",
    "apply_H",
    "apply_resolvent",
    "greens_function_profile",
    "kinetic_matrix",
    "dense_matrix",
]

CG_MAX_ITER = 10_000


class ResolventError(RuntimeError):
    """Raised when the CG resolvent cannot be applied."""


def _check_s(s):
    if not (0.0 < s <= 1.0):
        raise ValueError(f"fractional order s must lie in (0, 1], got {s}")


@dataclass(frozen=True, eq=False)
class Potential:
    """Radial, nondecreasing trapping potential sampled on a grid.

    Build with :meth:`power`, :meth:`harmonic_plus_quartic`,
    :meth:`tabulated` or :meth:`from_config`.
    """

    kind: str
    params: dict
    grid: Grid
    profile: object = field(repr=False)  # callable r -> V(r)
    derivative: object = field(repr=False, default=None)  # callable r -> V'(r)
    samples: np.ndarray = field(init=False, repr=False)
    lower_bound: float = 0.0

    def __post_init__(self):
        r = self.grid.radius
        samples = np.asarray(self.profile(r), dtype=float)
        if not np.all(np.isfinite(samples)):
            raise ValueError(f"potential {self.kind} is not finite on the grid")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        self._check_monotone()
        object.__setattr__(self, "lower_bound", float(samples.min()))

    def _check_monotone(self):
        r = self.grid.radius.ravel()
        v = self.samples.ravel()
        order = np.lexsort((v, r))
        rs, vs = r[order], v[order]
        drop = vs[:-1] - vs[1:]
        bad = (drop > 1e-12 * (1.0 + np.abs(vs[:-1]))) & (rs[1:] > rs[:-1])
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ValueError(
                f"potential {self.kind} decreases between r={rs[i]:.6g} and r={rs[i+1]:.6g}"
            )
        shells = np.round(rs / self.grid.spacing, 8)
        same = shells[1:] == shells[:-1]
        if np.any(same & (np.abs(vs[1:] - vs[:-1]) > 1e-12 * (1.0 + np.abs(vs[1:])))):
            raise ValueError(f"potential {self.kind} is not radial on the grid")

    @classmethod
    def power(cls, grid: Grid, alpha: float = 2.0) -> "Potential":
        """V(r) = r^alpha, alpha >= 1."""
        if alpha < 1:
            raise ValueError(f"power potential needs alpha >= 1, got {alpha}")
        return cls(
            "power",
            {"alpha": float(alpha)},
            grid,
            profile=lambda r: r**alpha,
            derivative=lambda r: alpha * r ** (alpha - 1),
        )

    @classmethod
    def harmonic_plus_quartic(cls, grid: Grid, a: float = 0.5) -> "Potential":
        """V(r) = r^2 + a r^4, a >= 0."""
        if a < 0:
            raise ValueError(f"quartic coefficient must be nonnegative, got {a}")
        return cls(
            "harmquart",
            {"a": float(a)},
            grid,
            profile=lambda r: r**2 + a * r**4,
            derivative=lambda r: 2 * r + 4 * a * r**3,
        )

    @classmethod
    def tabulated(cls, grid: Grid, r, values, dvalues=None, path=None) -> "Potential":
        """Monotone (PCHIP) interpolation of radial samples.

        The table must cover every grid radius.  ``dvalues`` are optional
        derivative samples; without them the potential has no derivative.
        """
        r = np.asarray(r, dtype=float)
        values = np.asarray(values, dtype=float)
        if r.ndim != 1 or r.size < 2 or np.any(np.diff(r) <= 0):
            raise ValueError("tabulated radii must be strictly ascending")
        if np.any(np.diff(values) < 0):
            raise ValueError("tabulated potential must be nondecreasing in r")
        rmax = float(grid.radius.max())
        if r[0] > 0 or r[-1] < rmax * (1 - 1e-12):
            raise ValueError(f"table must cover r in [0, {rmax:.6g}]")
        interp = PchipInterpolator(r, values, extrapolate=True)
        deriv = None
        if dvalues is not None:
            deriv = PchipInterpolator(r, np.asarray(dvalues, dtype=float), extrapolate=True)
        params = {"path": str(path)} if path is not None else {}
        return cls("tabulated", params, grid, profile=interp, derivative=deriv)

    @classmethod
    def zero(cls, grid: Grid) -> "Potential":
        rmax = float(grid.radius.max())
        return cls.tabulated(grid, [0.0, rmax], [0.0, 0.0], dvalues=[0.0, 0.0])

    @classmethod
    def from_csv(cls, grid: Grid, path) -> "Potential":
        """Read ``r,V(r)[,dV(r)]`` rows; a header line is skipped if present."""
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    rows.append([float(x) for x in row])
                except ValueError:
                    if rows:
                        raise
        table = np.array(rows)
        dv = table[:, 2] if table.shape[1] > 2 else None
        return cls.tabulated(grid, table[:, 0], table[:, 1], dvalues=dv, path=Path(path))

    @classmethod
    def from_config(cls, grid: Grid, spec: dict) -> "Potential":
        spec = dict(spec)
        kind = spec.pop("kind", None)
        allowed = {"power": {"alpha"}, "harmquart": {"a"}, "tabulated": {"path"}}
        if kind not in allowed:
            raise ValueError(f"unknown potential kind {kind!r}")
        extra = set(spec) - allowed[kind]
        if extra:
            raise ValueError(f"unknown keys for {kind} potential: {sorted(extra)}")
        if kind == "power":
            return cls.power(grid, float(spec.get("alpha", 2.0)))
        if kind == "harmquart":
            return cls.harmonic_plus_quartic(grid, float(spec.get("a", 0.5)))
        if "path" not in spec:
            raise ValueError("tabulated potential needs a path")
        return cls.from_csv(grid, spec["path"])

    def to_config(self) -> dict:
        return {"kind": self.kind, **self.params}

    def on(self, grid: Grid) -> "Potential":
        """Same radial profile sampled on another grid."""
        return Potential(self.kind, self.params, grid, self.profile, self.derivative)

    def gradient(self, axis: int = 0) -> np.ndarray:
        """Samples of dV/dx_axis = V'(r) x_axis / r (zero at the origin)."""
        if self.derivative is None:
            raise ValueError(f"{self.kind} potential carries no derivative data")
        r = self.grid.radius
        x = self.grid.coords[axis]
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(r > 0, self.derivative(r) * x / r, 0.0)
        return out

    def capped(self, radius: float) -> "Potential":
        """Truncation W_R(r) = min(V(r), V(R))."""
        cap = float(self.profile(radius))
        prof = self.profile
        deriv = self.derivative
        return Potential(
            f"{self.kind}-capped",
            {**self.params, "cap_radius": float(radius)},
            self.grid,
            profile=lambda r: np.minimum(prof(r), cap),
            derivative=None if deriv is None else (lambda r: np.where(r < radius, deriv(r), 0.0)),
        )


@dataclass(frozen=True, eq=False)
class OperatorHandle:
    """(-Delta)^s + V + extra + shift on one grid.

    ``extra`` is an optional real array added to the potential (used for the
    linearized operators, whose potential is V + omega - c phi^{p-1}).
    """

    s: float
    potential: Potential
    shift: float = 0.0
    extra: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        _check_s(self.s)
        if self.extra is not None:
            extra = np.array(self.extra, dtype=float).reshape(self.grid.shape)
            extra.flags.writeable = False
            object.__setattr__(self, "extra", extra)

    @property
    def grid(self) -> Grid:
        return self.potential.grid

    @property
    def diagonal(self) -> np.ndarray:
        """Pointwise part V + extra + shift."""
        d = self.potential.samples + self.shift
        if self.extra is not None:
            d = d + self.extra
        return d

    @property
    def symbol(self) -> np.ndarray:
        return self.grid.k_abs ** (2 * self.s)

    def with_shift(self, shift: float) -> "OperatorHandle":
        return OperatorHandle(self.s, self.potential, shift, self.extra)

    def __call__(self, f: Field) -> Field:
        return apply_H(self, f)

    def quadratic_lower_bound(self) -> float:
        """min of the pointwise part; the form is bounded below by it."""
        return float(self.diagonal.min())


def apply_fractional_laplacian(f: Field, s: float) -> Field:
    """(-Delta)^s f through the multiplier |k|^{2s}."""
    _check_s(s)
    return spectral_apply(f, f.grid.k_abs ** (2 * s))


def apply_H(h: OperatorHandle, f: Field) -> Field:
    if f.grid != h.grid:
        raise ValueError("grid mismatch between operator and field")
    kin = np.fft.ifftn(h.symbol * np.fft.fftn(f.values))
    if np.isrealobj(f.values):
        kin = kin.real
    return Field(f.grid, kin + h.diagonal * f.values)


def _apply_raw(h: OperatorHandle, v: np.ndarray, diag: np.ndarray, symbol: np.ndarray):
    out = np.fft.ifftn(symbol * np.fft.fftn(v))
    if np.isrealobj(v):
        out = out.real
    return out + diag * v


def apply_resolvent(
    h: OperatorHandle,
    g: Field,
    tol: float = 1e-12,
    x0: Field | None = None,
    max_iter: int = CG_MAX_ITER,
    return_info: bool = False,
):
    """Solve (-Delta)^s + V + extra + shift applied to f equal to g by PCG.

    Stops once ||H f - g|| <= tol ||g||.  Positive definiteness is checked
    through the sufficient condition min(V + extra) + shift > 0.
    """
    check_same_grid(g, h.potential)
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    diag = h.diagonal
    floor = float(diag.min())
    if floor <= 0:
        raise ResolventError(
            f"shifted operator not certified positive definite (min potential + shift = {floor:.3g})"
        )
    symbol = h.symbol
    gv = np.asarray(g.values)
    gnorm = np.linalg.norm(gv)
    if gnorm == 0:
        out = Field.zeros(g.grid, dtype=gv.dtype)
        return (out, 0) if return_info else out
    # V = 0 Green's multiplier 1/(|k|^{2s} + c), sandwiched by the diagonal
    # scaling (c/(V + c))^{1/2} so that large trapping values stay conditioned
    c = max(floor, (float(diag.max()) * float(symbol.max())) ** 0.25)
    pre = 1.0 / (symbol + c)
    scale = np.sqrt(c / (diag + c))

    def precond(r):
        z = np.fft.ifftn(pre * np.fft.fftn(scale * r))
        return scale * (z.real if np.isrealobj(r) else z)

    x = np.zeros_like(gv) if x0 is None else np.array(x0.values, dtype=gv.dtype)
    r = gv - _apply_raw(h, x, diag, symbol) if x0 is not None else gv.copy()
    z = precond(r)
    pdir = z.copy()
    rz = np.vdot(r, z).real
    target = tol * gnorm
    best, stalled = np.inf, 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(r) <= target:
            # confirm with the true residual; on a mismatch restart from it,
            # and give up once restarts stop making progress (roundoff floor)
            r = gv - _apply_raw(h, x, diag, symbol)
            rn = np.linalg.norm(r)
            if rn <= target:
                out = Field(g.grid, x)
                return (out, it - 1) if return_info else out
            if rn < 0.5 * best:
                best, stalled = rn, 0
            else:
                stalled += 1
                if stalled >= 3:
                    # tol is below what double precision can deliver for this
                    # operator: accept if the residual sits at the roundoff floor
                    floor_norm = 1e3 * np.finfo(float).eps * (
                        (float(np.abs(diag).max()) + float(symbol.max())) * np.linalg.norm(x) + gnorm
                    )
                    if rn <= floor_norm:
                        out = Field(g.grid, x)
                        return (out, it - 1) if return_info else out
                    raise ResolventError(
                        f"CG stagnated at relative residual {rn / gnorm:.2e} above tol={tol:g}"
                    )
            z = precond(r)
            pdir = z.copy()
            rz = np.vdot(r, z).real
        ap = _apply_raw(h, pdir, diag, symbol)
        curv = np.vdot(pdir, ap).real
        if curv <= 0:
            raise ResolventError("operator is not positive definite along a CG direction")
        alpha = rz / curv
        x = x + alpha * pdir
        r = r - alpha * ap
        z = precond(r)
        rz_new = np.vdot(r, z).real
        pdir = z + (rz_new / rz) * pdir
        rz = rz_new
    raise ResolventError(f"CG did not reach tol={tol:g} within {max_iter} iterations")


def greens_function_profile(s: float, lam: float, grid: Grid) -> Field:
    """Kernel G_lam with transform 1/(|k|^{2s} + lam), sampled on the grid."""
    _check_s(s)
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    ghat = 1.0 / (grid.k_abs ** (2 * s) + lam)
    # origin sits at index N/2 of each axis; the inverse transform puts it at 0
    vals = np.fft.ifftn(ghat).real / grid.cell_volume
    return Field(grid, np.fft.fftshift(vals))


def kinetic_matrix(grid: Grid, s: float) -> np.ndarray:
    """Dense matrix of (-Delta)^s on a 1D grid (exact for the spectral operator)."""
    if grid.dim != 1:
        raise ValueError("dense kinetic matrix is only assembled in 1D")
    _check_s(s)
    n = grid.N
    col = np.fft.ifft(grid.k_abs ** (2 * s)).real
    idx = np.arange(n)
    mat = col[(idx[:, None] - idx[None, :]) % n]
    return 0.5 * (mat + mat.T)


def dense_matrix(h: OperatorHandle) -> np.ndarray:
    mat = kinetic_matrix(h.grid, h.s)
    mat[np.diag_indices_from(mat)] += h.diagonal
    return mat
