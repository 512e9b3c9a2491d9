"""Named initial densities: ``uniform``, ``cosine:A``, ``exp:slope``, ``random:seed,smoothness``, ``csv:path``."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import Density, Grid


def cosine(grid: Grid, amplitude: float) -> Density:
    """``1 + A cos(pi (x - a) / L)``; needs ``|A| < 1``."""
    if not abs(amplitude) < 1:
        raise ValueError(f"cosine amplitude must lie in (-1, 1), got {amplitude}")
    return Density.from_function(grid, lambda x: 1.0 + amplitude * np.cos(np.pi * (x - grid.a) / grid.length))


def exponential(grid: Grid, slope: float) -> Density:
    """``exp(slope x)`` normalised to unit mass; ``log rho`` is exactly linear."""
    return Density.from_function(grid, lambda x: np.exp(slope * (x - grid.a))).normalized()


def random_trig(grid: Grid, seed: int, smoothness: int = 4, scale: float = 0.5) -> Density:
    """``exp(u)`` for a random trigonometric polynomial ``u`` of degree ``smoothness``, unit mass.

    Mode ``k`` gets a standard normal coefficient times ``scale / k``, so the
    Lipschitz constant of ``log rho`` is controlled by ``scale * smoothness``.
    """
    if smoothness < 1:
        raise ValueError("smoothness must be at least 1")
    rng = np.random.default_rng(seed)
    k = np.arange(1, smoothness + 1)
    a = rng.standard_normal(smoothness) * scale / k
    b = rng.standard_normal(smoothness) * scale / k
    theta = np.pi * (grid.centers - grid.a) / grid.length
    u = np.cos(np.outer(theta, k)) @ a + np.sin(np.outer(theta, k)) @ b
    return Density(grid, np.exp(u)).normalized()


def parse_profile(text: str, grid: Grid, base_dir: Path | None = None) -> Density:
    """Build an initial density from its config-file name."""
    name, _, arg = text.strip().partition(":")
    name = name.lower()
    if name == "uniform" and not arg:
        return Density.uniform(grid)
    if name == "cosine":
        return cosine(grid, float(arg))
    if name == "exp":
        return exponential(grid, float(arg))
    if name == "random":
        parts = [p for p in arg.split(",") if p.strip()]
        if not 1 <= len(parts) <= 2:
            raise ValueError("random profile is random:seed,smoothness")
        seed = int(parts[0])
        smoothness = int(parts[1]) if len(parts) == 2 else 4
        return random_trig(grid, seed, smoothness)
    if name == "csv":
        path = Path(arg)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise FileNotFoundError(f"initial density file {path} does not exist")
        rho = Density.from_csv(path)
        if rho.grid.n != grid.n or not np.isclose(rho.grid.a, grid.a) or not np.isclose(rho.grid.b, grid.b):
            raise ValueError(f"{path} holds a grid of {rho.grid.n} cells on [{rho.grid.a:g}, {rho.grid.b:g}]")
        return Density(grid, rho.values)
    raise ValueError(f"unknown initial profile {text!r}")
