"""Explicit finite-volume solver for ``d_t rho = d_x(rho (c*)'(d_x log rho))`` with no-flux walls.

The solver shares nothing with the transport code beyond the cost's
``grad_conj``; it is the independent oracle the scheme is compared with.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .cost import CostModel
from .errors import NonPositiveDensity, StabilityViolation
from .geometry import Density, Grid, interface_average


@dataclass(frozen=True)
class PdeConfig:
    t_end: float
    cfl_safety: float = 0.9
    #: fixed time step; ``None`` recomputes ``cfl_safety * dx^2 / (2 s_max)`` every step
    dt: Optional[float] = None

    def __post_init__(self):
        if not (self.t_end >= 0 and math.isfinite(self.t_end)):
            raise ValueError(f"t_end must be finite and nonnegative, got {self.t_end}")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError(f"cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")


def interface_flux(rho: Density, c: CostModel) -> np.ndarray:
    """``F_{i+1/2} = mean(rho_i, rho_{i+1}) (c*)'((log rho_{i+1} - log rho_i) / dx)``."""
    rho.require_positive()
    w = np.diff(np.log(rho.values)) / rho.grid.dx
    return interface_average(rho) * c.grad_conj(w)


def max_slope(rho: Density, c: CostModel) -> float:
    """Largest slope of ``(c*)'`` over the current interfaces, clamped below by 1."""
    if rho.n == 1:
        return 1.0
    w = np.diff(np.log(rho.values)) / rho.grid.dx
    s = float(np.max(c.grad_conj_slope(w)))
    return max(1.0, s) if math.isfinite(s) else math.inf


def stable_dt(rho: Density, c: CostModel, cfl_safety: float = 1.0) -> float:
    """``cfl_safety * dx^2 / (2 s_max)``.

    Raises :class:`StabilityViolation` when ``(c*)'`` has unbounded slope at
    the current gradients (``Power(p)`` with ``p > 2`` near flat interfaces),
    where no explicit step is stable.
    """
    s = max_slope(rho, c)
    if not math.isfinite(s):
        raise StabilityViolation("(c*)' has unbounded slope at the current log-gradients; no stable explicit step")
    return cfl_safety * rho.grid.dx**2 / (2.0 * s)


def pde_step(rho: Density, c: CostModel, dt: float) -> Density:
    """One explicit conservative step; the boundary fluxes are zero.

    Raises :class:`StabilityViolation` when ``dt`` exceeds ``dx^2 / (2 s_max)``
    and :class:`NonPositiveDensity` if the update leaves a cell non-positive.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    rho.require_positive()
    bound = stable_dt(rho, c)
    if dt > bound * (1 + 1e-12):
        raise StabilityViolation(f"dt={dt:.6g} exceeds the explicit bound {bound:.6g}")
    if rho.n == 1:
        return rho
    F = np.concatenate([[0.0], interface_flux(rho, c), [0.0]])
    new = rho.values + (dt / rho.grid.dx) * np.diff(F)
    if np.any(new <= 0):
        i = int(np.argmin(new))
        raise NonPositiveDensity(f"explicit update produced rho[{i}] = {new[i]:.3e}; reduce dt")
    return Density(rho.grid, new)


@dataclass
class PdeRun:
    states: list
    times: list
    dts: list

    @property
    def final(self) -> Density:
        return self.states[-1]


def run_pde(rho0: Density, c: CostModel, cfg: PdeConfig, keep_every: int = 0, max_steps: Optional[int] = None) -> PdeRun:
    """Integrate to ``cfg.t_end`` (or ``max_steps`` steps), keeping every ``keep_every``-th state.

    The last step is shortened to land exactly on ``t_end``.
    """
    rho, t = rho0, 0.0
    states, times, dts = [rho0], [0.0], []
    k = 0
    while t < cfg.t_end * (1 - 1e-14) and (max_steps is None or k < max_steps):
        dt = cfg.dt if cfg.dt is not None else stable_dt(rho, c, cfg.cfl_safety)
        dt = min(dt, cfg.t_end - t)
        rho = pde_step(rho, c, dt)
        t += dt
        k += 1
        dts.append(dt)
        if keep_every and k % keep_every == 0:
            states.append(rho)
            times.append(t)
    if states[-1] is not rho:
        states.append(rho)
        times.append(t)
    return PdeRun(states, times, dts)


def heat_exact(amplitude: float, t: float, grid: Grid) -> Density:
    """``1 + A exp(-pi^2 t / L^2) cos(pi (x - a) / L)`` at the cell centres (Neumann heat solution)."""
    if not abs(amplitude) < 1:
        raise ValueError(f"amplitude must lie in (-1, 1), got {amplitude}")
    L = grid.length
    decay = amplitude * math.exp(-math.pi**2 * t / L**2)
    return Density.from_function(grid, lambda x: 1.0 + decay * np.cos(np.pi * (x - grid.a) / L))


@dataclass
class Comparison:
    t_end: float
    l1_error: float
    jko_steps: int
    pde_steps: int

    def to_dict(self) -> dict:
        return asdict(self)


def compare_jko_pde(rho0: Density, c: CostModel, h: float, t_end: float, jko_config=None, cfl_safety: float = 0.9) -> Comparison:
    """L1 distance at ``t_end`` between the scheme with step ``h`` and the explicit solver."""
    from .jko import JkoConfig, run_scheme

    steps = int(round(t_end / h))
    if steps < 1 or abs(steps * h - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError(f"t_end={t_end} is not a whole number of steps h={h}")
    cfg = jko_config if jko_config is not None else JkoConfig(h=h)
    if cfg.h != h:
        raise ValueError("jko_config.h differs from h")
    traj = run_scheme(rho0, c, cfg, steps)
    run = run_pde(rho0, c, PdeConfig(t_end=t_end, cfl_safety=cfl_safety))
    return Comparison(t_end, traj.states[-1].l1_distance(run.final), steps, len(run.dts))


__all__ = [
    "PdeConfig",
    "PdeRun",
    "Comparison",
    "interface_flux",
    "max_slope",
    "stable_dt",
    "pde_step",
    "run_pde",
    "heat_exact",
    "compare_jko_pde",
]
