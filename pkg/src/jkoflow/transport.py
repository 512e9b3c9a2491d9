"""One-dimensional optimal transport between piecewise-constant densities.

Two solvers share the :class:`TransportSolution` result type:

* :func:`solve_exact_1d` -- the monotone rearrangement.  Both quantile
  functions are piecewise linear in the mass variable ``s``; on the merged
  breakpoint partition the displacement ``Q_rho(s) - Q_g(s)`` is linear, so
  the cost and the Kantorovich potentials are integrals of ``c`` and ``c'``
  along straight lines, computed with an 8-point Gauss-Legendre rule (exact
  for polynomial costs of degree <= 15 once segments are split where the
  displacement changes sign).
* :func:`solve_entropic` -- log-domain Sinkhorn with a geometric schedule on
  the regularisation, on sub-cell atoms.

The potential ``phi`` is recovered from ``phi'(x) = c'(x - T(x))`` and
``psi`` from ``phi(x) + psi(T(x)) = c(x - T(x))``; the gauge is
``phi(x_0) = 0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .cost import CostModel
from .errors import InfeasibleCost, MassMismatch, NoConvergence, NumericalUnderflow
from .geometry import Density, Grid

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
GL_T = 0.5 * (_GL_X + 1.0)
GL_W = 0.5 * _GL_W

MASS_RTOL = 1e-12


@dataclass
class TransportSolution:
    """Result of a 1D transport solve on a shared grid.

    ``phi``/``psi`` are point values at cell centres, ``phi_avg``/``psi_avg``
    cell averages (the duality gap is exact with these), and
    ``phi_grad``/``psi_grad`` the derivatives of the potentials at interior
    interfaces when the solver knows them exactly.
    """

    cost: float
    map: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    phi_avg: Optional[np.ndarray] = None
    psi_avg: Optional[np.ndarray] = None
    phi_grad: Optional[np.ndarray] = None
    psi_grad: Optional[np.ndarray] = None
    plan: Optional[np.ndarray] = None
    iterations: int = 0
    marginal_error: float = 0.0

    def to_dict(self, include_plan: bool = False) -> dict:
        out = {
            "cost": float(self.cost),
            "map": [float(v) for v in self.map],
            "phi": [float(v) for v in self.phi],
            "psi": [float(v) for v in self.psi],
        }
        if include_plan and self.plan is not None:
            out["plan"] = [[float(v) for v in row] for row in self.plan]
        return out

    def to_json(self, include_plan: bool = False) -> str:
        return json.dumps(self.to_dict(include_plan))

    @classmethod
    def from_dict(cls, data: dict) -> "TransportSolution":
        plan = data.get("plan")
        return cls(
            cost=float(data["cost"]),
            map=np.asarray(data["map"], dtype=float),
            phi=np.asarray(data["phi"], dtype=float),
            psi=np.asarray(data["psi"], dtype=float),
            plan=None if plan is None else np.asarray(plan, dtype=float),
        )


def matched_masses(rho: Density, g: Density) -> tuple[np.ndarray, np.ndarray]:
    """Return the two value arrays with ``g`` rescaled onto the mass of ``rho``.

    Raises :class:`MassMismatch` beyond a relative gap of 1e-12.
    """
    if rho.grid != g.grid:
        raise ValueError("marginals must share a grid")
    mr, mg = rho.mass, g.mass
    if mr <= 0 or mg <= 0:
        raise MassMismatch("marginals must have positive mass")
    if abs(mr - mg) > MASS_RTOL * max(mr, mg):
        raise MassMismatch(f"mass(rho)={mr:.17g} differs from mass(g)={mg:.17g}")
    return rho.values, g.values * (mr / mg)


def _cumulative(vals: np.ndarray, dx: float, total: float) -> np.ndarray:
    F = np.empty(len(vals) + 1)
    F[0] = 0.0
    np.cumsum(vals * dx, out=F[1:])
    # trailing zero cells must end exactly at the total mass
    tail = F == F[-1]
    F *= total / F[-1]
    np.minimum(F, total, out=F)
    F[tail] = total
    return F


def _cell_of(F_pos: np.ndarray, pos: np.ndarray, s: np.ndarray) -> np.ndarray:
    # last positive cell whose lower cumulative mass is <= s
    k = np.searchsorted(F_pos, s, side="right") - 1
    np.clip(k, 0, len(pos) - 1, out=k)
    return pos[k]


class _Merged:
    """Merged breakpoint partition of ``[0, M]`` for a pair of densities."""

    def __init__(self, rv: np.ndarray, gv: np.ndarray, grid: Grid, extra_points: bool = True):
        dx = grid.dx
        edges = grid.edges
        M = float(np.sum(rv) * dx)
        self.M = M
        self.Fr = _cumulative(rv, dx, M)
        self.Fg = _cumulative(gv, dx, M)
        self.rv, self.gv, self.grid = rv, gv, grid
        self._pos_r = np.flatnonzero(rv > 0)
        self._pos_g = np.flatnonzero(gv > 0)
        self._Fr_pos = self.Fr[self._pos_r]
        self._Fg_pos = self.Fg[self._pos_g]
        pts = [self.Fr, self.Fg]
        if extra_points:
            self.mid_r = self.Fr[:-1] + 0.5 * rv * dx
            self.mid_g = self.Fg[:-1] + 0.5 * gv * dx
            pts += [self.mid_r[self._pos_r], self.mid_g[self._pos_g]]
        s = np.unique(np.concatenate(pts))
        s = s[(s >= 0) & (s <= M)]
        geom = self._geometry(s, edges)
        s0, s1, _, _, d0, d1 = geom
        cross = (d0 * d1) < 0
        if np.any(cross):
            # split where the displacement changes sign so the quadrature sees smooth integrands
            star = s0[cross] + (s1[cross] - s0[cross]) * d0[cross] / (d0[cross] - d1[cross])
            s = np.unique(np.concatenate([s, star]))
            geom = self._geometry(s, edges)
        self.s = s
        self.s0, self.s1, self.i, self.j, self.d0, self.d1 = geom
        self.delta = self.s1 - self.s0

    def _geometry(self, s: np.ndarray, edges: np.ndarray):
        s0, s1 = s[:-1], s[1:]
        keep = s1 > s0
        if not keep.all():
            s0, s1 = s0[keep], s1[keep]
        sm = 0.5 * (s0 + s1)
        i = _cell_of(self._Fr_pos, self._pos_r, sm)
        j = _cell_of(self._Fg_pos, self._pos_g, sm)
        ri = self.rv[i]
        gj = self.gv[j]
        ei, ej, Fi, Fj = edges[i], edges[j], self.Fr[i], self.Fg[j]
        # Q_rho(s) - Q_g(s) at both ends of each segment
        d0 = (ei + (s0 - Fi) / ri) - (ej + (s0 - Fj) / gj)
        d1 = (ei + (s1 - Fi) / ri) - (ej + (s1 - Fj) / gj)
        return s0, s1, i, j, d0, d1

    def displacement_nodes(self) -> np.ndarray:
        return self.d0[:, None] + (self.d1 - self.d0)[:, None] * GL_T[None, :]


def _integrals(seg: _Merged, c: CostModel, potentials: bool):
    D = seg.displacement_nodes()
    cv = c(D)
    if not np.all(np.isfinite(cv)):
        bad = float(np.max(np.abs(D[~np.isfinite(cv)])))
        raise InfeasibleCost(f"required displacement {bad:.6g} exceeds the finite range {c.support:.6g} of the cost")
    C = seg.delta * (cv @ GL_W)
    if not potentials:
        return C, None, None
    gv = c.grad(D)
    A = seg.delta * (gv @ GL_W)
    B = seg.delta**2 * (gv @ (GL_W * (1.0 - GL_T)))
    return C, A, B


def transport_cost(rho: Density, g: Density, c: CostModel) -> float:
    """Exact transport cost between two piecewise-constant densities (no potentials)."""
    rv, gv = matched_masses(rho, g)
    return exact_cost_values(rv, gv, rho.grid, c)


def exact_cost_values(rv: np.ndarray, gv: np.ndarray, grid: Grid, c: CostModel) -> float:
    seg = _Merged(rv, gv, grid, extra_points=False)
    C, _, _ = _integrals(seg, c, potentials=False)
    return float(np.sum(C))


def _zero_runs(vals: np.ndarray):
    """Maximal runs ``(start, stop)`` (stop exclusive) of zero cells."""
    zero = vals <= 0
    if not np.any(zero):
        return []
    runs = []
    n = len(vals)
    k = 0
    while k < n:
        if zero[k]:
            start = k
            while k < n and zero[k]:
                k += 1
            runs.append((start, k))
        else:
            k += 1
    return runs


def _quantile(F: np.ndarray, vals: np.ndarray, edges: np.ndarray, s: float, side: str) -> float:
    """Quantile at mass level ``s`` taken from the left or right positive cell."""
    pos = np.flatnonzero(vals > 0)
    if side == "right":
        cand = pos[F[pos + 1] > s]
        k = cand[0] if len(cand) else pos[-1]
    else:
        cand = pos[F[pos] < s]
        k = cand[-1] if len(cand) else pos[0]
    return float(edges[k] + (min(max(s, F[k]), F[k + 1]) - F[k]) / vals[k])


@dataclass
class ExactCore:
    """Everything :func:`solve_exact_1d` computes, before gauge fixing and packaging."""

    cost: float
    phi_avg: np.ndarray
    seg: _Merged
    Phi: Optional[np.ndarray] = None
    A: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None
    C: Optional[np.ndarray] = None


def exact_potential_core(rv: np.ndarray, gv: np.ndarray, grid: Grid, c: CostModel) -> ExactCore:
    """Cost and cell-averaged potential ``phi`` for strictly positive ``rv``.

    Used by the JKO solvers: ``phi_avg[i] - phi_avg[i+1]`` is the exact
    derivative of the cost with respect to the cumulative mass at interface
    ``i + 1/2``.
    """
    seg = _Merged(rv, gv, grid, extra_points=False)
    C, A, B = _integrals(seg, c, potentials=True)
    ri = rv[seg.i]
    inc = A / ri
    Phi = np.concatenate([[0.0], np.cumsum(inc)[:-1]])
    contrib = (Phi * seg.delta + B / ri) / ri
    phi_int = np.bincount(seg.i, weights=contrib, minlength=grid.n)
    phi_avg = phi_int / grid.dx
    return ExactCore(float(np.sum(C)), phi_avg, seg, Phi, A, B, C)


def solve_exact_1d(rho: Density, g: Density, c: CostModel) -> TransportSolution:
    """Monotone optimal transport from ``rho`` to ``g`` for an even convex cost ``c``.

    Raises :class:`MassMismatch` for unequal masses and :class:`InfeasibleCost`
    when the monotone plan needs a displacement where ``c`` is infinite (in 1D
    the monotone plan is optimal, so no finite plan exists then).
    """
    rv, gv = matched_masses(rho, g)
    grid = rho.grid
    n, dx, edges = grid.n, grid.dx, grid.edges
    centers = grid.centers
    seg = _Merged(rv, gv, grid, extra_points=True)
    C, A, B = _integrals(seg, c, potentials=True)
    ri = rv[seg.i]
    gj = gv[seg.j]
    pos_r, pos_g = rv > 0, gv > 0
    phi = np.zeros(n)
    psi = np.zeros(n)
    tmap = np.zeros(n)

    # potential of rho along the mass variable; across an interior gap of rho the
    # map is constant (y0), so phi grows by c(x_R - y0) - c(x_L - y0) over the gap
    Phi = np.concatenate([[0.0], np.cumsum(A / ri)])
    s_bp = np.concatenate([seg.s0, seg.s1[-1:]])
    for start, stop in _zero_runs(rv):
        s_run = seg.Fr[start]
        y0 = _quantile(seg.Fg, gv, edges, s_run, "right" if s_run < seg.M else "left")
        tmap[start:stop] = y0
        if 0 < s_run < seg.M:
            Phi[s_bp >= s_run] += float(c(edges[stop] - y0) - c(edges[start] - y0))
    Phi_start = Phi[:-1]

    phi_int = np.bincount(seg.i, weights=(Phi_start * seg.delta + B / ri) / ri, minlength=n)
    psi_int = np.bincount(seg.j, weights=(C - Phi_start * seg.delta - B / ri) / gj, minlength=n)
    phi_avg = np.zeros(n)
    psi_avg = np.zeros(n)
    phi_avg[pos_r] = phi_int[pos_r] / dx
    psi_avg[pos_g] = psi_int[pos_g] / dx

    k_mid_r = np.searchsorted(seg.s0, seg.mid_r[pos_r], side="left")
    phi[pos_r] = Phi_start[k_mid_r]
    tmap[pos_r] = centers[pos_r] - seg.d0[k_mid_r]
    k_mid_g = np.searchsorted(seg.s0, seg.mid_g[pos_g], side="left")
    psi[pos_g] = c(seg.d0[k_mid_g]) - Phi_start[k_mid_g]

    phi_grad = np.zeros(n - 1)
    psi_grad = np.zeros(n - 1)
    if n > 1:
        both_r = pos_r[:-1] & pos_r[1:]
        k_if = np.clip(np.searchsorted(seg.s0, seg.Fr[1:-1], side="left"), 0, len(seg.s0) - 1)
        phi_grad[both_r] = c.grad(seg.d0[k_if[both_r]])
        both_g = pos_g[:-1] & pos_g[1:]
        k_ig = np.clip(np.searchsorted(seg.s0, seg.Fg[1:-1], side="left"), 0, len(seg.s0) - 1)
        psi_grad[both_g] = -c.grad(seg.d0[k_ig[both_g]])

    # zero cells: discrete c-transforms keep every grid constraint phi_i + psi_j <= c(x_i - y_j)
    zr, zg = ~pos_r, ~pos_g
    if zr.any() or zg.any():
        cm = c(np.subtract.outer(centers, centers))
        if zr.any():
            phi[zr] = np.min(cm[np.ix_(zr, pos_g)] - psi[pos_g][None, :], axis=1)
            phi_avg[zr] = phi[zr]
        if zg.any():
            psi[zg] = np.min(cm[:, zg] - phi[:, None], axis=0)
            psi_avg[zg] = psi[zg]
        if n > 1:
            touch_r = ~(pos_r[:-1] & pos_r[1:])
            phi_grad[touch_r] = (np.diff(phi) / dx)[touch_r]
            touch_g = ~(pos_g[:-1] & pos_g[1:])
            psi_grad[touch_g] = (np.diff(psi) / dx)[touch_g]

    shift = phi[0]
    phi -= shift
    phi_avg -= shift
    psi += shift
    psi_avg += shift
    return TransportSolution(
        cost=float(np.sum(C)),
        map=tmap,
        phi=phi,
        psi=psi,
        phi_avg=phi_avg,
        psi_avg=psi_avg,
        phi_grad=phi_grad,
        psi_grad=psi_grad,
    )


def check_duality(sol: TransportSolution, rho: Density, g: Density, c: CostModel) -> float:
    """Worst violation of ``phi(x_i) + psi(y_j) <= c(x_i - y_j)`` over all grid pairs (0 if none)."""
    x = rho.grid.centers
    y = g.grid.centers
    cm = c(np.subtract.outer(x, y))
    with np.errstate(invalid="ignore"):
        slack = np.add.outer(sol.phi, sol.psi) - cm
    slack = np.where(np.isfinite(cm), slack, -np.inf)
    return float(max(0.0, np.max(slack)))


def duality_gap(sol: TransportSolution, rho: Density, g: Density) -> float:
    """``|int phi d rho + int psi d g - cost|`` using cell-averaged potentials when available."""
    phi = sol.phi_avg if sol.phi_avg is not None else sol.phi
    psi = sol.psi_avg if sol.psi_avg is not None else sol.psi
    dx = rho.grid.dx
    return float(abs(np.sum(phi * rho.values) * dx + np.sum(psi * g.values) * dx - sol.cost))


def w1_distance(rho: Density, g: Density) -> float:
    """``int |F_rho - F_g| dx`` for piecewise-constant densities of equal mass (exact)."""
    rv, gv = matched_masses(rho, g)
    dx = rho.grid.dx
    diff = np.concatenate([[0.0], np.cumsum((rv - gv) * dx)])
    diff[-1] = 0.0
    d0, d1 = diff[:-1], diff[1:]
    same = d0 * d1 >= 0
    area = np.where(same, 0.5 * (np.abs(d0) + np.abs(d1)) * dx, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(same, 0.0, np.abs(d0) / (np.abs(d0) + np.abs(d1)))
    area = np.where(same, area, 0.5 * dx * (np.abs(d0) * frac + np.abs(d1) * (1 - frac)))
    return float(np.sum(area))


# --------------------------------------------------------------------------- entropic


def atom_positions(grid: Grid, refine: int) -> np.ndarray:
    """Centres of ``refine`` equal sub-cells in every grid cell, in order."""
    sub = grid.dx / refine
    return grid.a + (np.arange(grid.n * refine) + 0.5) * sub


def default_refine(grid: Grid, c: CostModel, eta: float, max_atoms: int = 512) -> int:
    """Sub-cells per cell so that atom spacing is about half the entropic blur ``sqrt(eta h)``."""
    blur = np.sqrt(eta * c.h)
    r = int(np.ceil(2.0 * grid.dx / blur))
    return int(max(1, min(r, max_atoms // grid.n)))


def eta_ladder(eta: float, eta_start: float = 1.0) -> list[float]:
    """Geometric schedule ``eta_start, eta_start/2, ...`` ending exactly at ``eta``."""
    levels = []
    e = max(eta_start, eta)
    while e > eta * (1 + 1e-12):
        levels.append(e)
        e *= 0.5
    levels.append(eta)
    return levels


def _lse(x: np.ndarray, axis: int) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return logsumexp(x, axis=axis)


def solve_entropic(
    rho: Density,
    g: Density,
    c: CostModel,
    eta: float,
    tol: float = 1e-9,
    max_iter: int = 20000,
    refine: int = 1,
    eta_start: float = 1.0,
    return_plan: bool = True,
) -> TransportSolution:
    """Entropic transport by log-domain Sinkhorn with ``eta``-scaling.

    Each cell is split into ``refine`` equal atoms.  Potentials are
    ``eta * log`` of the scaling vectors, reported at cell centres with the
    gauge ``phi(x_0) = 0``.  The stopping rule is an L1 marginal violation of
    at most ``tol`` relative to the mass.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    rv, gv = matched_masses(rho, g)
    if np.any(rv <= 0) or np.any(gv <= 0):
        raise ValueError("entropic transport needs strictly positive marginals")
    grid = rho.grid
    M = rho.mass
    x = atom_positions(grid, refine)
    mu = np.repeat(rv * grid.dx / refine, refine)
    nu = np.repeat(gv * grid.dx / refine, refine)
    Cm = c(np.subtract.outer(x, x))
    log_mu, log_nu = np.log(mu), np.log(nu)
    f = np.zeros_like(mu)
    u = np.zeros_like(nu)
    iters = 0
    err = np.inf
    levels = eta_ladder(eta, eta_start)
    for level, e in enumerate(levels):
        last = level == len(levels) - 1
        level_tol = tol if last else max(tol, 1e-4)
        while True:
            lf = _lse((u[None, :] - Cm) / e, axis=1)
            if not np.all(np.isfinite(lf)):
                raise NumericalUnderflow(f"kernel rows underflowed at eta={e:g}")
            f = e * (log_mu - lf)
            lu = _lse((f[:, None] - Cm) / e, axis=0)
            if not np.all(np.isfinite(lu)):
                raise NumericalUnderflow(f"kernel columns underflowed at eta={e:g}")
            u = e * (log_nu - lu)
            iters += 1
            if iters % 5 == 0 or iters >= max_iter:
                rows = np.exp(_lse((f[:, None] + u[None, :] - Cm) / e, axis=1))
                err = float(np.sum(np.abs(rows - mu)) / M)
                if err <= level_tol:
                    break
            if iters >= max_iter:
                raise NoConvergence(
                    f"Sinkhorn stopped after {iters} iterations at eta={e:g} with marginal error {err:.3e}",
                    residual=err,
                    iterations=iters,
                )
    logP = (f[:, None] + u[None, :] - Cm) / eta
    P = np.exp(logP)
    finite = np.isfinite(Cm)
    cost = float(np.sum(np.where(finite, P * np.where(finite, Cm, 0.0), 0.0)))
    bary = (P @ x) / P.sum(axis=1)
    n = grid.n
    tmap = bary.reshape(n, refine).mean(axis=1)
    centers = grid.centers
    phi = np.interp(centers, x, f)
    psi = np.interp(centers, x, u)
    shift = phi[0]
    phi -= shift
    psi += shift
    phi_avg = f.reshape(n, refine).mean(axis=1) - shift
    psi_avg = u.reshape(n, refine).mean(axis=1) + shift
    plan = None
    if return_plan:
        plan = P.reshape(n, refine, n, refine).sum(axis=(1, 3))
    return TransportSolution(
        cost=cost,
        map=tmap,
        phi=phi,
        psi=psi,
        phi_avg=phi_avg,
        psi_avg=psi_avg,
        plan=plan,
        iterations=iters,
        marginal_error=err,
    )
