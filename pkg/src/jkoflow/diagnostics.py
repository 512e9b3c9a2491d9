"""Monotone quantities along the scheme: generalized Fisher information, the
Lipschitz constant and modulus of continuity of ``log rho``, ``W^{1,p}``
surrogates and the five-gradients residual.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .cost import CostModel
from .geometry import Density, grad_log, integrate_interface
from .transport import TransportSolution, solve_exact_1d


class HFunctional:
    """Convex even integrand ``H`` of the Fisher information ``int H(grad log rho) d rho``."""

    name = "H"

    def __call__(self, z):
        raise NotImplementedError

    def grad(self, z):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


class PowerH(HFunctional):
    """``H(z) = |z|^p`` with ``grad H(0) = 0``."""

    def __init__(self, p: float):
        if not p >= 1:
            raise ValueError(f"PowerH needs p >= 1, got {p}")
        self.p = float(p)
        self.name = f"p{p:g}"

    def __call__(self, z):
        return np.abs(np.asarray(z, dtype=float)) ** self.p

    def grad(self, z):
        z = np.asarray(z, dtype=float)
        if self.p == 1.0:
            return np.sign(z)
        return self.p * np.abs(z) ** (self.p - 1) * np.sign(z)


class BallIndicator(HFunctional):
    """``0`` on ``[-L, L]``, ``+inf`` outside."""

    def __init__(self, L: float):
        if not L > 0:
            raise ValueError(f"ball radius must be positive, got {L}")
        self.L = float(L)
        self.name = f"ball{L:g}"

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return np.where(np.abs(z) <= self.L, 0.0, np.inf)

    def grad(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))


class TabulatedH(HFunctional):
    """Piecewise-linear interpolation of convex even samples ``(z_k, H_k)``, ``z_k >= 0``.

    Beyond the last sample the last slope is continued.
    """

    def __init__(self, z, values, name: str = "tab"):
        z = np.asarray(z, dtype=float)
        values = np.asarray(values, dtype=float)
        if len(z) < 2 or z[0] != 0.0 or np.any(np.diff(z) <= 0):
            raise ValueError("samples must start at 0 and increase strictly")
        slopes = np.diff(values) / np.diff(z)
        if np.any(np.diff(slopes) < -1e-12 * (1 + np.abs(slopes[1:]))) or slopes[0] < 0:
            raise ValueError("samples are not convex and nondecreasing on [0, inf)")
        self.z, self.values, self.slopes = z, values, slopes
        self.name = name

    def __call__(self, z):
        a = np.abs(np.asarray(z, dtype=float))
        inside = np.interp(a, self.z, self.values)
        beyond = self.values[-1] + self.slopes[-1] * (a - self.z[-1])
        return np.where(a <= self.z[-1], inside, beyond)

    def grad(self, z):
        z = np.asarray(z, dtype=float)
        a = np.abs(z)
        k = np.clip(np.searchsorted(self.z, a, side="right") - 1, 0, len(self.slopes) - 1)
        return np.where(a > 0, np.sign(z) * self.slopes[k], 0.0)


def fisher(rho: Density, H: HFunctional) -> float:
    """``int H(grad log rho) d rho`` on interior interfaces (arithmetic interface weights)."""
    gl = grad_log(rho)
    if isinstance(H, BallIndicator):
        return 0.0 if (rho.n == 1 or np.max(np.abs(gl.values)) <= H.L) else math.inf
    return integrate_interface(rho, gl, H)


def lipschitz_log(rho: Density) -> float:
    """``max |grad log rho|`` over interior interfaces."""
    if rho.n == 1:
        rho.require_positive()
        return 0.0
    return float(np.max(np.abs(grad_log(rho).values)))


@dataclass(frozen=True)
class ModulusReport:
    """``omega[k-1] = max_{|i-j| <= k} |log rho_i - log rho_j|`` at ``radii[k-1] = k dx``."""

    radii: np.ndarray
    omega: np.ndarray

    def to_dict(self) -> dict:
        return {"radii": [float(r) for r in self.radii], "omega": [float(w) for w in self.omega]}


def modulus_log(rho: Density) -> ModulusReport:
    """All-pairs modulus of continuity of ``log rho`` at every grid radius."""
    rho.require_positive()
    n = rho.n
    if n > 4096:
        raise ValueError("modulus_log is an O(n^2) scan, limited to n <= 4096")
    u = np.log(rho.values)
    gaps = np.array([np.max(np.abs(u[d:] - u[:-d])) for d in range(1, n)])
    omega = np.maximum.accumulate(gaps) if n > 1 else np.zeros(0)
    radii = rho.grid.dx * np.arange(1, n)
    return ModulusReport(radii, omega)


def concave_envelope(radii: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Least concave majorant of ``omega`` (with ``omega(0) = 0``), evaluated at ``radii``."""
    radii = np.asarray(radii, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if len(radii) == 0:
        return omega.copy()
    xs = np.concatenate([[0.0], radii])
    ys = np.concatenate([[0.0], omega])
    hull = []
    for k in range(len(xs)):
        # pop while the last hull point lies on or below the chord to the new point
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            cross = (xs[j] - xs[i]) * (ys[k] - ys[i]) - (ys[j] - ys[i]) * (xs[k] - xs[i])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(k)
    return np.interp(radii, xs[hull], ys[hull])


def w1p_surrogate(rho: Density, p: float) -> float:
    """``||rho^{1/p}||_p^p + ||(rho^{1/p})'||_p^p`` with interface differences."""
    if not p >= 1:
        raise ValueError(f"p must be >= 1, got {p}")
    root = rho.values ** (1.0 / p)
    dx = rho.grid.dx
    grad_part = float(np.sum(np.abs(np.diff(root) / dx) ** p) * dx)
    return rho.mass + grad_part


def _interface_gradients(sol: TransportSolution, dx: float):
    phi_g = sol.phi_grad if sol.phi_grad is not None else np.diff(sol.phi) / dx
    psi_g = sol.psi_grad if sol.psi_grad is not None else np.diff(sol.psi) / dx
    return phi_g, psi_g


def five_gradients_residual(rho: Density, g: Density, sol: TransportSolution, H: HFunctional) -> float:
    """``int grad rho . grad H(grad phi) + grad g . grad H(grad psi) dx`` on interior interfaces.

    Density gradients are interface differences; potential gradients are the
    solver's interface derivatives when it provides them (exact 1D solver)
    and differences of the centre values otherwise.
    """
    rho.require_positive()
    g.require_positive("target density")
    if rho.n == 1:
        return 0.0
    phi_g, psi_g = _interface_gradients(sol, rho.grid.dx)
    # (d rho / dx) * H'(phi') * dx summed over interfaces
    return float(np.sum(np.diff(rho.values) * H.grad(phi_g)) + np.sum(np.diff(g.values) * H.grad(psi_g)))


# --------------------------------------------------------------------------- trajectory report


@dataclass(frozen=True)
class Tolerances:
    fisher: float = 1e-6
    lipschitz: float = 1e-6
    modulus: float = 1e-3
    five_gradients: float = 1e-6


REPORT_COLUMNS = ("k", "t", "fisher_p1", "fisher_p2", "fisher_p4", "lip", "omega_viol", "fg_residual")


@dataclass
class MonotonicityReport:
    rows: list
    fisher_columns: dict
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks)

    def worst(self) -> dict:
        """Check with the largest excess over its tolerance."""
        if not self.checks:
            return {"check": None, "excess": 0.0, "k": None}
        return max(self.checks, key=lambda c: c["excess"] - c["tol"])

    def summary(self) -> dict:
        w = self.worst()
        return {
            "pass": self.passed,
            "worst_violation": float(w["excess"]),
            "location": {"check": w["check"], "k": w["k"]},
            "checks": self.checks,
        }

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in self.rows:
            writer.writerow([row["k"]] + [f"{row[c]:.17g}" for c in REPORT_COLUMNS[1:]])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def _record(checks: list, name: str, excess: float, k, tol: float) -> None:
    # keep only the worst instance per check name
    for c in checks:
        if c["check"] == name:
            if excess > c["excess"]:
                c.update(excess=float(excess), k=k, **{"pass": bool(excess <= tol)})
            return
    checks.append({"check": name, "excess": float(excess), "k": k, "tol": tol, "pass": bool(excess <= tol)})


def monotonicity_report(
    states: Sequence[Density],
    Hs: Sequence[HFunctional] = (PowerH(1), PowerH(2), PowerH(4)),
    h: float = 1.0,
    cost: Optional[CostModel] = None,
    tol: Tolerances = Tolerances(),
    fg_H: HFunctional = PowerH(2),
) -> MonotonicityReport:
    """Fisher columns, Lipschitz constant, modulus excess and five-gradients residual per state.

    Flags: ``fisher(H)`` growing by more than ``tol.fisher * (1 + fisher)``
    between consecutive states; ``lip`` exceeding its initial value by more
    than ``tol.lipschitz``; ``omega_viol``, the largest excess of the modulus
    over the concave envelope of the initial modulus, above ``tol.modulus``;
    and (when ``cost`` is given) a five-gradients residual for the pair
    ``(states[k], states[k-1])`` under ``c_h`` below ``-tol.five_gradients``.
    """
    states = list(states)
    if not states:
        raise ValueError("empty trajectory")
    for k, s in enumerate(states):
        s.require_positive(f"state {k}")
    ch = cost.scaled(h) if cost is not None else None
    m0 = modulus_log(states[0])
    env0 = concave_envelope(m0.radii, m0.omega)
    lip0 = lipschitz_log(states[0])
    fisher_columns = {H.name: [] for H in Hs}
    rows, checks = [], []
    for k, rho in enumerate(states):
        row = {"k": k, "t": k * h}
        for H in Hs:
            val = fisher(rho, H)
            col = fisher_columns[H.name]
            if col:
                prev = col[-1]
                excess = (val - prev) / (1.0 + prev) if math.isfinite(prev) else 0.0
                _record(checks, f"fisher_{H.name}", excess if math.isfinite(val) else math.inf, k, tol.fisher)
            col.append(val)
        lip = lipschitz_log(rho)
        row["lip"] = lip
        _record(checks, "lipschitz", lip - lip0, k, tol.lipschitz)
        mk = modulus_log(rho)
        viol = float(np.max(mk.omega - env0)) if len(env0) else 0.0
        row["omega_viol"] = viol
        _record(checks, "modulus", viol, k, tol.modulus)
        fg = math.nan
        if ch is not None and k > 0:
            sol = solve_exact_1d(rho, states[k - 1].normalized(rho.mass), ch)
            fg = five_gradients_residual(rho, states[k - 1].normalized(rho.mass), sol, fg_H)
            _record(checks, "five_gradients", -fg, k, tol.five_gradients)
        row["fg_residual"] = fg
        for p, name in ((1, "fisher_p1"), (2, "fisher_p2"), (4, "fisher_p4")):
            key = PowerH(p).name
            row[name] = fisher_columns[key][-1] if key in fisher_columns else fisher(rho, PowerH(p))
        rows.append(row)
    return MonotonicityReport(rows, fisher_columns, checks)


__all__ = [
    "HFunctional",
    "PowerH",
    "BallIndicator",
    "TabulatedH",
    "ModulusReport",
    "Tolerances",
    "MonotonicityReport",
    "REPORT_COLUMNS",
    "fisher",
    "lipschitz_log",
    "modulus_log",
    "concave_envelope",
    "w1p_surrogate",
    "five_gradients_residual",
    "monotonicity_report",
]
