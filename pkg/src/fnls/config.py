"""Run configuration: one flat JSON document, unknown keys rejected."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .domain import Grid
from .groundstate import ProblemSpec
from .operators import Potential


class ConfigError(ValueError):
    pass


SECTOR_NAMES = ("even", "odd", "full")


@dataclass
class RunConfig:
    # problem
    s: float = 1.0
    p: float | None = None  # default 1 + 2s/n
    n: int = 1
    lam: float = 1.0
    potential: dict = field(default_factory=lambda: {"kind": "power", "alpha": 2.0})
    L: float = 12.0
    N: int | None = None  # default 512 in 1D, 128 in 2D
    # solvers
    tau: float = 1.0
    tol: float | None = None  # default 1e-8 sqrt(lambda)
    max_iter: int = 5000
    fp_shift: float = 50.0
    fp_max_iter: int = 20000
    # spectra
    m: int = 6
    zero_tol: float | None = None  # default 1e-6 (1 + |omega|)
    sectors: list = field(default_factory=lambda: ["even", "odd", "full"])
    truncation_radii: list = field(default_factory=lambda: [2.0, 4.0, 6.0, 8.0])
    # dynamics
    dt: float = 1e-3
    T: float = 50.0
    delta: float = 1e-3
    seed: int = 0
    envelope: float = 10.0
    sample_every: float = 0.1
    # verification sweep
    sweep_s: list = field(default_factory=lambda: [0.5, 0.75, 1.0])
    sweep_alpha: list = field(default_factory=lambda: [2.0, 4.0])
    sweep_lambda: list = field(default_factory=lambda: [0.25, 1.0, 4.0])
    sweep_deltas: list = field(default_factory=lambda: [1e-3, 3e-3, 1e-2])
    fractional_L: float = 64.0
    fractional_N: int = 2048
    smoke_2d: bool = True
    # output
    out: str = "out"
    threads: int = 1

    def __post_init__(self):
        if self.N is None:
            self.N = 512 if self.n == 1 else 128
        if self.p is None:
            self.p = 1.0 + 2.0 * self.s / self.n
        self.validate()

    def validate(self):
        if self.n not in (1, 2):
            raise ConfigError(f"n must be 1 or 2, got {self.n}")
        if not (0 < self.s <= 1):
            raise ConfigError(f"s must lie in (0, 1], got {self.s}")
        crit = 1 + 4 * self.s / self.n
        if not (1 < self.p < crit):
            raise ConfigError(
                f"p = {self.p:g} is outside the mass-subcritical range 1 < p < 1 + 4s/n = {crit:g}; "
                "existence of normalized ground states needs this hypothesis"
            )
        if int(self.N) != self.N or self.N % 2 or self.N < 16:
            raise ConfigError(f"N must be an even integer >= 16, got {self.N}")
        if int(self.fractional_N) != self.fractional_N or self.fractional_N % 2:
            raise ConfigError("fractional_N must be an even integer")
        positive = {
            "lambda": self.lam, "L": self.L, "tau": self.tau, "dt": self.dt, "T": self.T,
            "fp_shift": self.fp_shift, "envelope": self.envelope,
            "sample_every": self.sample_every, "fractional_L": self.fractional_L,
        }
        if self.tol is not None:
            positive["tol"] = self.tol
        if self.zero_tol is not None:
            positive["zero_tol"] = self.zero_tol
        for name, val in positive.items():
            if not val > 0:
                raise ConfigError(f"{name} must be positive, got {val}")
        if self.delta < 0:
            raise ConfigError("delta must be nonnegative")
        if not 1 <= self.m <= 12:
            raise ConfigError("m must lie in 1..12")
        bad = [x for x in self.sectors if x not in SECTOR_NAMES]
        if bad or not self.sectors:
            raise ConfigError(f"sectors must be a nonempty subset of {SECTOR_NAMES}, got {self.sectors}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if not isinstance(self.potential, dict) or "kind" not in self.potential:
            raise ConfigError("potential must be an object with a 'kind' key")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    def grid(self) -> Grid:
        return Grid(self.n, self.L, self.N)

    def problem(self, grid: Grid | None = None) -> ProblemSpec:
        grid = grid or self.grid()
        try:
            pot = Potential.from_config(grid, self.potential)
            return ProblemSpec(self.s, self.p, self.lam, pot)
        except (ValueError, OSError) as exc:
            raise ConfigError(str(exc)) from exc
