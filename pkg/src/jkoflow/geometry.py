"""Uniform cell-centred grids on an interval and piecewise-constant densities.

Densities are cell averages; the mass is ``sum(values) * dx``.  Gradients of
``log rho`` live on the ``n - 1`` interior interfaces (no-flux boundary), and
interface quantities are weighted by the arithmetic mean of the two
neighbouring cells.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import NonPositiveDensity


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Grid:
    """Uniform partition of ``[a, b]`` into ``n`` cells."""

    a: float
    b: float
    n: int

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or self.b <= self.a:
            raise ValueError(f"grid needs a < b, got a={self.a}, b={self.b}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"grid.n must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def length(self) -> float:
        return self.b - self.a

    @property
    def dx(self) -> float:
        return (self.b - self.a) / self.n

    @property
    def centers(self) -> np.ndarray:
        return self.a + (np.arange(self.n) + 0.5) * self.dx

    @property
    def edges(self) -> np.ndarray:
        """The ``n + 1`` cell boundaries, endpoints included."""
        e = self.a + np.arange(self.n + 1) * self.dx
        e[-1] = self.b
        return e

    @property
    def interfaces(self) -> np.ndarray:
        """Interior cell boundaries ``x_{i+1/2}``, ``i = 0..n-2``."""
        return self.edges[1:-1]


@dataclass(frozen=True)
class Density:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.shape != (self.grid.n,):
            raise ValueError(f"expected {self.grid.n} cell values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("density values must be finite")
        if np.any(vals < 0):
            raise ValueError("density values must be nonnegative")
        object.__setattr__(self, "values", vals)

    @property
    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.dx)

    @property
    def n(self) -> int:
        return self.grid.n

    def with_values(self, values) -> "Density":
        return Density(self.grid, values)

    def scaled(self, factor: float) -> "Density":
        return Density(self.grid, self.values * factor)

    def normalized(self, mass: float = 1.0) -> "Density":
        return self.scaled(mass / self.mass)

    def require_positive(self, what: str = "density") -> None:
        if np.any(self.values <= 0):
            i = int(np.argmin(self.values))
            raise NonPositiveDensity(f"{what} has a non-positive cell (index {i}, value {self.values[i]:g})")

    def l1_distance(self, other: "Density") -> float:
        return float(np.sum(np.abs(self.values - other.values)) * self.grid.dx)

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[[np.ndarray], np.ndarray]) -> "Density":
        """Sample ``fn`` at the cell centres."""
        return cls(grid, np.asarray(fn(grid.centers), dtype=float))

    @classmethod
    def uniform(cls, grid: Grid, mass: float = 1.0) -> "Density":
        return cls(grid, np.full(grid.n, mass / grid.length))

    def to_csv(self, path=None) -> str:
        """Write ``x,rho`` rows at full double precision; returns the text."""
        buf = io.StringIO()
        buf.write("x,rho\n")
        for x, r in zip(self.grid.centers, self.values):
            buf.write(f"{x:.17g},{r:.17g}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "Density":
        """Read an ``x,rho`` file written by :meth:`to_csv`; the grid is inferred from the centres."""
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        x, rho = data[:, 0], data[:, 1]
        n = len(x)
        if n == 1:
            raise ValueError("cannot infer a grid from a single cell")
        dx = (x[-1] - x[0]) / (n - 1)
        if not np.allclose(np.diff(x), dx, rtol=1e-9, atol=0.0):
            raise ValueError("csv cell centres are not uniformly spaced")
        grid = Grid(x[0] - dx / 2, x[-1] + dx / 2, n)
        return cls(grid, rho)


@dataclass(frozen=True)
class InterfaceField:
    """Values attached to the ``n - 1`` interior interfaces of a grid."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.shape != (self.grid.n - 1,):
            raise ValueError(f"interface field needs {self.grid.n - 1} values, got shape {vals.shape}")
        object.__setattr__(self, "values", vals)


def grad_log(rho: Density) -> InterfaceField:
    """Finite difference ``(log rho_{i+1} - log rho_i) / dx`` on interior interfaces."""
    rho.require_positive()
    logs = np.log(rho.values)
    return InterfaceField(rho.grid, np.diff(logs) / rho.grid.dx)


def interface_average(rho: Density) -> np.ndarray:
    v = rho.values
    return 0.5 * (v[:-1] + v[1:])


def integrate_interface(rho: Density, f: InterfaceField, evaluator: Callable[[np.ndarray], np.ndarray]) -> float:
    """Discrete ``int evaluator(f) d rho`` over the interior interfaces."""
    if f.grid != rho.grid:
        raise ValueError("density and interface field live on different grids")
    if rho.n == 1:
        return 0.0
    weights = interface_average(rho)
    vals = np.asarray(evaluator(f.values), dtype=float)
    # zero weight kills the integrand even when the evaluator is infinite
    terms = np.where(weights > 0, vals * weights, 0.0)
    return float(np.sum(terms) * rho.grid.dx)


def log_shift(rho: Density, lam: float) -> Density:
    """Add ``lam`` to ``log rho``, i.e. multiply the density by ``exp(lam)``."""
    return rho.scaled(float(np.exp(lam)))
