"""Periodic grids, sampled fields, spectral transforms and the energy functionals.

Fields live on the truncated box [-L, L)^n with N points per axis.  The
transform convention is

    u_hat(k) = h^n * sum_j u(x_j) exp(-i k . x_j),

i.e. a Riemann sum for the continuum transform, so that Parseval reads

    ||u||^2 = h^n sum_j |u(x_j)|^2 = (2L)^{-n} sum_k |u_hat(k)|^2

with the physical measure on both sides.  Coefficients are stored in the
standard discrete Fourier ordering (``numpy.fft.fftfreq``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "Grid",
    "Field",
    "FunctionalValues",
    "fft_forward",
    "fft_inverse",
    "inner",
    "l2_norm",
    "lq_norm",
    "hs_inner",
    "hs_norm",
    "kinetic_energy",
    "functionals",
    "nonlinear_power",
    "rearrange_decreasing",
    "radial_order",
    "is_radially_nonincreasing",
]


@dataclass(frozen=True)
class Grid:
    """Tensor grid on [-L, L)^dim with ``points_per_axis`` points per axis."""

    dim: int
    half_width: float
    points_per_axis: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"grid dimension must be 1 or 2, got {self.dim}")
        n = self.points_per_axis
        if int(n) != n or n < 16 or n % 2:
            raise ValueError(f"points per axis must be an even integer >= 16, got {n}")
        if not self.half_width > 0:
            raise ValueError(f"half width must be positive, got {self.half_width}")
        object.__setattr__(self, "points_per_axis", int(n))
        object.__setattr__(self, "half_width", float(self.half_width))

    @property
    def L(self) -> float:
        return self.half_width

    @property
    def N(self) -> int:
        return self.points_per_axis

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.points_per_axis

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.dim

    @property
    def size(self) -> int:
        return self.N**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + self.spacing * np.arange(self.N)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Per-axis wavenumbers pi*j/L in fftfreq order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.spacing)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.axis] * self.dim), indexing="ij"))

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(sum(c**2 for c in self.coords))

    @cached_property
    def k_squared(self) -> np.ndarray:
        ks = np.meshgrid(*([self.wavenumbers] * self.dim), indexing="ij")
        return sum(k**2 for k in ks)

    @cached_property
    def k_abs(self) -> np.ndarray:
        return np.sqrt(self.k_squared)

    @cached_property
    def _phase(self) -> np.ndarray:
        # exp(-i k x_0) with x_0 = -L and k = pi m / L is (-1)^m per axis
        m = np.rint(self.wavenumbers * self.L / np.pi).astype(int)
        sign = np.where(m % 2 == 0, 1.0, -1.0)
        out = sign
        for _ in range(self.dim - 1):
            out = np.multiply.outer(out, sign)
        return out

    def multiplier(self, symbol) -> np.ndarray:
        """Evaluate a radial Fourier symbol ``symbol(|k|)`` on the wavenumber grid."""
        return symbol(self.k_abs)

    def reflect(self, values: np.ndarray, axis: int = 0) -> np.ndarray:
        """Sample of f(-x) along ``axis``: index j maps to (N - j) mod N."""
        return np.roll(np.flip(values, axis=axis), 1, axis=axis)


@dataclass(frozen=True, eq=False)
class Field:
    """Complex or real samples of a function on a :class:`Grid`.

    ``values`` is stored read-only; arithmetic returns new fields.
    """

    grid: Grid
    values: np.ndarray

    # let ndarray * Field dispatch to Field.__rmul__
    __array_ufunc__ = None

    def __post_init__(self):
        vals = np.array(self.values, copy=True)
        if vals.size != self.grid.size:
            raise ValueError(
                f"field has {vals.size} values, grid expects {self.grid.size}"
            )
        vals = vals.reshape(self.grid.shape)
        if not (np.isrealobj(vals) or np.iscomplexobj(vals)):
            raise TypeError("field values must be numeric")
        if np.isrealobj(vals):
            vals = vals.astype(float)
        else:
            vals = vals.astype(complex)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid, func) -> "Field":
        return cls(grid, func(*grid.coords))

    @classmethod
    def zeros(cls, grid: Grid, dtype=float) -> "Field":
        return cls(grid, np.zeros(grid.shape, dtype=dtype))

    @property
    def is_real(self) -> bool:
        if np.isrealobj(self.values):
            return True
        scale = np.max(np.abs(self.values), initial=0.0)
        return bool(np.max(np.abs(self.values.imag), initial=0.0) <= 1e-12 * scale)

    @property
    def real(self) -> "Field":
        return Field(self.grid, self.values.real)

    @property
    def imag(self) -> "Field":
        return Field(self.grid, np.imag(self.values))

    def as_real(self) -> "Field":
        if not self.is_real:
            raise ValueError("field has a nontrivial imaginary part")
        return self.real

    def conj(self) -> "Field":
        return Field(self.grid, np.conj(self.values))

    def abs(self) -> "Field":
        return Field(self.grid, np.abs(self.values))

    def with_values(self, values) -> "Field":
        return Field(self.grid, values)

    def _other(self, other):
        if isinstance(other, Field):
            check_same_grid(self, other)
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return Field(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field(self.grid, self.values / self._other(other))

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __repr__(self):
        kind = "real" if np.isrealobj(self.values) else "complex"
        return f"Field({kind}, dim={self.grid.dim}, N={self.grid.N}, L={self.grid.L})"


def check_same_grid(*items) -> Grid:
    grids = [it.grid for it in items if it is not None]
    first = grids[0]
    for g in grids[1:]:
        if g != first:
            raise ValueError(f"grid mismatch: {first} vs {g}")
    return first


def fft_forward(f: Field) -> Field:
    """Spectral coefficients approximating the continuum Fourier transform."""
    g = f.grid
    coeffs = np.fft.fftn(f.values) * (g.cell_volume * g._phase)
    return Field(g, coeffs)


def fft_inverse(c: Field) -> Field:
    g = c.grid
    vals = np.fft.ifftn(c.values / (g.cell_volume * g._phase))
    return Field(g, vals)


def spectral_apply(f: Field, mult: np.ndarray) -> Field:
    """Apply a Fourier multiplier; real input stays real when ``mult`` is even."""
    out = np.fft.ifftn(mult * np.fft.fftn(f.values))
    if np.isrealobj(f.values):
        out = out.real
    return Field(f.grid, out)


def inner(f: Field, g: Field) -> complex | float:
    """L^2 inner product <f, g> = int f conj(g) dx (real for real fields)."""
    check_same_grid(f, g)
    val = np.vdot(g.values, f.values) * f.grid.cell_volume
    if np.isrealobj(f.values) and np.isrealobj(g.values):
        return float(val.real)
    return complex(val)


def l2_norm(f: Field) -> float:
    return float(np.sqrt(np.sum(np.abs(f.values) ** 2) * f.grid.cell_volume))


def lq_norm(f: Field, q: float) -> float:
    return float((np.sum(np.abs(f.values) ** q) * f.grid.cell_volume) ** (1.0 / q))


def _check_s(s: float, low: float = 0.0) -> None:
    if not (low <= s <= 1.0):
        raise ValueError(f"smoothness index s must lie in [{low}, 1], got {s}")


def hs_weight(grid: Grid, s: float) -> np.ndarray:
    return (1.0 + grid.k_squared) ** s


def hs_inner(f: Field, g: Field, s: float) -> complex:
    """H^s inner product with multiplier (1 + |k|^2)^s."""
    _check_s(s)
    check_same_grid(f, g)
    grid = f.grid
    fh = np.fft.fftn(f.values)
    gh = np.fft.fftn(g.values)
    return complex(np.vdot(gh, hs_weight(grid, s) * fh) * grid.cell_volume / grid.size)


def hs_norm(f: Field, s: float) -> float:
    """Sobolev norm ||f||_{H^s}; ``s = 0`` is the L^2 norm."""
    _check_s(s)
    grid = f.grid
    fh = np.fft.fftn(f.values)
    total = np.sum(hs_weight(grid, s) * np.abs(fh) ** 2) * grid.cell_volume / grid.size
    return float(np.sqrt(total))


def kinetic_energy(f: Field, s: float) -> float:
    """||(-Delta)^{s/2} f||^2 via the |k|^{2s} multiplier."""
    grid = f.grid
    fh = np.fft.fftn(f.values)
    return float(np.sum(grid.k_abs ** (2 * s) * np.abs(fh) ** 2) * grid.cell_volume / grid.size)


def nonlinear_power(values: np.ndarray, p: float) -> np.ndarray:
    """|f|^{p-1} f, with the value 0 at f = 0 for any p > 1."""
    mod = np.abs(values)
    if np.isrealobj(values):
        return np.sign(values) * mod**p
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(mod > 0, values * mod ** (p - 1), 0.0)
    return out


@dataclass(frozen=True)
class FunctionalValues:
    kinetic: float
    potential_term: float
    nonlinear_term: float
    power: float
    p: float
    energy: float = field(init=False)

    def __post_init__(self):
        e = 0.5 * (self.kinetic + self.potential_term) - self.nonlinear_term / (self.p + 1)
        object.__setattr__(self, "energy", e)

    def total_energy(self, omega: float) -> float:
        """Energy with the conserved mass term omega*P/2 added."""
        return self.energy + 0.5 * omega * self.power


def functionals(f: Field, V, s: float, p: float) -> FunctionalValues:
    """Kinetic, potential and nonlinear parts of E[f] together with P[f].

    ``V`` is a :class:`fnls.operators.Potential` (or anything with ``grid``
    and ``samples``).
    """
    if not p > 1:
        raise ValueError(f"nonlinearity exponent must exceed 1, got {p}")
    if V.grid != f.grid:
        raise ValueError("grid mismatch between field and potential")
    dv = f.grid.cell_volume
    mod2 = np.abs(f.values) ** 2
    return FunctionalValues(
        kinetic=kinetic_energy(f, s),
        potential_term=float(np.sum(V.samples * mod2) * dv),
        nonlinear_term=float(np.sum(mod2 ** ((p + 1) / 2)) * dv),
        p=p,
        power=float(np.sum(mod2) * dv),
    )


def radial_order(grid: Grid) -> np.ndarray:
    """Flat indices sorted by distance from the origin, ties by index."""
    r = grid.radius.ravel()
    return np.lexsort((np.arange(r.size), r))


def rearrange_decreasing(f: Field) -> Field:
    """Discrete symmetric-decreasing rearrangement of |f| about the origin.

    The sorted moduli are laid out on grid points ordered by distance from
    the origin, so the multiset of values is preserved exactly.
    """
    if not f.is_real:
        raise ValueError("rearrangement needs a real-valued field")
    vals = np.abs(np.real(f.values)).ravel()
    out = np.empty_like(vals)
    out[radial_order(f.grid)] = np.sort(vals)[::-1]
    return Field(f.grid, out.reshape(f.grid.shape))


def is_radially_nonincreasing(f: Field, tol: float) -> bool:
    """True if values never increase by more than ``tol`` moving outward.

    Points at equal distance from the origin form one shell; every value in
    an outer shell must not exceed every value in an inner shell plus tol.
    """
    grid = f.grid
    r = grid.radius.ravel()
    vals = np.real(f.values).ravel()
    shells = np.round(r / grid.spacing, 8)
    uniq, inv = np.unique(shells, return_inverse=True)
    shell_max = np.full(uniq.size, -np.inf)
    shell_min = np.full(uniq.size, np.inf)
    np.maximum.at(shell_max, inv, vals)
    np.minimum.at(shell_min, inv, vals)
    running_min = np.minimum.accumulate(shell_min)
    return bool(np.all(shell_max[1:] <= running_min[:-1] + tol))
