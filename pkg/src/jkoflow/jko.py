"""The minimizing-movement step ``Pi(g) = argmin W_{c_h}(rho, g) + E(rho)`` and its driver.

``E(rho) = sum rho_i log rho_i dx`` and the minimum is taken over densities
with the mass of ``g``.  Three inner solvers are available:

``DirectMirror``
    works in the cumulative-mass coordinates ``m_k = sum_{i<k} rho_i dx``,
    where the gradient of the objective is exact
    (``(phi_avg + log rho)[k-1] - (phi_avg + log rho)[k]``).  Steps are
    damped Newton steps on a tridiagonal Hessian; a multiplicative mirror
    step ``rho <- rho exp(-tau (phi + log rho + 1))`` is the fallback when
    the Newton direction is unusable.
``EntropicScaling``
    the KL-proximal scaling algorithm on sub-cell atoms: Sinkhorn projection
    onto the ``g`` marginal alternated with a closed-form proximal update of
    the entropy on the free marginal, which is kept constant inside each
    grid cell.
``BruteForce``
    exhaustive search over a simplex lattice followed by pattern search
    over all mass-preserving ``{-1, 0, 1}`` moves (``n <= 6``; test oracle).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_banded

from .cost import CostModel, ScaledCost, parse_cost
from .errors import InfeasibleCost, JkoFlowError, MassMismatch, NoConvergence
from .geometry import Density, Grid
from .transport import atom_positions, default_refine, eta_ladder, exact_cost_values, exact_potential_core

SOLVERS = ("EntropicScaling", "DirectMirror", "BruteForce")
BRUTE_FORCE_MAX_N = 6


@dataclass(frozen=True)
class JkoConfig:
    h: float
    #: final entropic regularisation; ``None`` means ``max(1e-4, dx^2)``
    eta: Optional[float] = None
    tol_inner: float = 1e-8
    max_iter: int = 500
    solver: str = "DirectMirror"
    #: atoms per cell for EntropicScaling; ``None`` picks one from the entropic blur
    refine: Optional[int] = None

    def __post_init__(self):
        for name in ("h", "eta", "tol_inner"):
            v = getattr(self, name)
            if v is None and name == "eta":
                continue
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive number, got {v!r}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError(f"max_iter must be a positive integer, got {self.max_iter!r}")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.refine is not None and (int(self.refine) != self.refine or self.refine < 1):
            raise ValueError(f"refine must be a positive integer, got {self.refine!r}")

    def check_grid(self, grid: Grid) -> None:
        if self.solver == "BruteForce" and grid.n > BRUTE_FORCE_MAX_N:
            raise ValueError(f"BruteForce handles n <= {BRUTE_FORCE_MAX_N}, got n = {grid.n}")

    def eta_final(self, grid: Grid) -> float:
        return max(1e-4, grid.dx**2) if self.eta is None else self.eta


@dataclass
class StepInfo:
    iterations: int
    residual: float
    solver: str
    warm: Any = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"iterations": int(self.iterations), "residual": float(self.residual), "solver": self.solver}


def entropy(rho: Density) -> float:
    """``sum rho_i log rho_i dx`` with ``0 log 0 = 0``."""
    v = rho.values
    pos = v > 0
    return float(np.sum(v[pos] * np.log(v[pos])) * rho.grid.dx)


def _scaled(c: CostModel, h: float) -> ScaledCost:
    if isinstance(c, ScaledCost):
        raise TypeError("pass the unscaled cost; the step h is applied internally")
    return c.scaled(h)


def objective(rho: Density, g: Density, c: CostModel, h: float) -> float:
    """``W_{c_h}(rho, g) + E(rho)``, the functional minimised by one step."""
    ch = _scaled(c, h)
    rv = rho.values
    gv = g.values * (rho.mass / g.mass)
    return exact_cost_values(rv, gv, rho.grid, ch) + entropy(rho)


# --------------------------------------------------------------------------- DirectMirror


class _MassProblem:
    """Objective and exact gradient in cumulative-mass coordinates."""

    def __init__(self, gv: np.ndarray, grid: Grid, ch: CostModel):
        self.gv, self.grid, self.ch = gv, grid, ch
        self.dx = grid.dx
        self.M = float(np.sum(gv) * grid.dx)

    def lengths(self, m: np.ndarray) -> np.ndarray:
        return np.diff(np.concatenate([[0.0], m, [self.M]]))

    def cumulative(self, L: np.ndarray) -> np.ndarray:
        return np.cumsum(L)[:-1]

    def evaluate(self, L: np.ndarray):
        """Objective value, gradient in ``m`` and the cell potential ``phi_avg + log rho``."""
        rv = L / self.dx
        core = exact_potential_core(rv, self.gv, self.grid, self.ch)
        logr = np.log(rv)
        J = core.cost + float(np.sum(L * logr))
        pot = core.phi_avg + logr
        return J, pot[:-1] - pot[1:], pot

    def w_gradient(self, L: np.ndarray) -> np.ndarray:
        core = exact_potential_core(L / self.dx, self.gv, self.grid, self.ch)
        return core.phi_avg[:-1] - core.phi_avg[1:]

    def hessian_bands(self, L: np.ndarray, m: np.ndarray) -> np.ndarray:
        """Tridiagonal Hessian in ``solve_banded`` layout.

        The entropy part is analytic; the transport part is a forward
        difference of the exact gradient with a 3-colouring of the unknowns
        (the gradient at ``k`` only depends on ``m_{k-1}, m_k, m_{k+1}``).
        """
        k = len(m)
        ab = np.zeros((3, k))
        ab[1] = 1.0 / L[:-1] + 1.0 / L[1:]
        ab[0, 1:] = -1.0 / L[1:-1]
        ab[2, :-1] = -1.0 / L[1:-1]
        g0 = self.w_gradient(L)
        step = 1e-7 * np.minimum(L[:-1], L[1:])
        for colour in range(min(3, k)):
            e = np.zeros(k)
            e[colour::3] = step[colour::3]
            dg = (self.w_gradient(self.lengths(m + e)) - g0)
            for j in range(colour, k, 3):
                # column j of the Hessian: rows j-1, j, j+1
                ab[1, j] += dg[j] / e[j]
                if j > 0:
                    ab[0, j] += 0.5 * dg[j - 1] / e[j]
                    ab[2, j - 1] += 0.5 * dg[j - 1] / e[j]
                if j < k - 1:
                    ab[2, j] += 0.5 * dg[j + 1] / e[j]
                    ab[0, j + 1] += 0.5 * dg[j + 1] / e[j]
        return ab


def _safe_eval(prob: _MassProblem, L: np.ndarray):
    if np.any(L <= 0):
        return math.inf, None, None
    try:
        return prob.evaluate(L)
    except InfeasibleCost:
        return math.inf, None, None


def _direct_mirror(gv: np.ndarray, grid: Grid, ch: CostModel, cfg: JkoConfig, start: Optional[np.ndarray] = None):
    prob = _MassProblem(gv, grid, ch)
    dx, M = grid.dx, prob.M
    if start is None:
        start = gv if np.all(gv > 0) else 0.5 * (gv + M / grid.length)
    L = start * dx * (M / (np.sum(start) * dx))
    if grid.n == 1:
        return L / dx, 0, 0.0
    J, grad, pot = _safe_eval(prob, L)
    if not math.isfinite(J):
        raise InfeasibleCost("starting point of the step has infinite transport cost")
    res = float(np.max(np.abs(grad))) / dx
    it = 0
    while res > cfg.tol_inner:
        if it >= cfg.max_iter:
            raise NoConvergence(f"DirectMirror stopped after {it} iterations, residual {res:.3e}", res, it)
        it += 1
        m = prob.cumulative(L)
        accepted = False
        bands = prob.hessian_bands(L, m)
        # round-off in the cumulative masses (~eps M) limits the reachable gradient
        floor = 16 * np.finfo(float).eps * M * float(np.max(np.abs(bands[1]))) / dx
        if res <= floor:
            break
        try:
            d = -solve_banded((1, 1), bands, grad)
        except (np.linalg.LinAlgError, ValueError):
            d = None
        if d is not None and np.all(np.isfinite(d)) and float(grad @ d) < 0:
            slope = float(grad @ d)
            t = 1.0
            for _ in range(60):
                Ln = prob.lengths(m + t * d)
                Jn, gn, pn = _safe_eval(prob, Ln)
                if math.isfinite(Jn):
                    rn = float(np.max(np.abs(gn))) / dx
                    # near the optimum the objective decrease is below round-off; the residual still shrinks
                    if Jn <= J + 1e-4 * t * slope or (t == 1.0 and rn < 0.5 * res):
                        accepted = True
                        break
                t *= 0.5
        if not accepted:
            # mirror step on the cell densities
            rv = L / dx
            tau = 1.0
            for _ in range(60):
                rn_ = rv * np.exp(-tau * (pot - np.sum(pot * L) / M))
                Ln = rn_ * dx * (M / (np.sum(rn_) * dx))
                Jn, gn, pn = _safe_eval(prob, Ln)
                if math.isfinite(Jn) and Jn < J:
                    accepted = True
                    rn = float(np.max(np.abs(gn))) / dx
                    break
                tau *= 0.5
        if not accepted:
            raise NoConvergence(f"DirectMirror line search failed at residual {res:.3e}", res, it)
        L, J, grad, pot, res = Ln, Jn, gn, pn, rn
    return L / dx, it, res


# --------------------------------------------------------------------------- EntropicScaling


def _lse_rows(x: np.ndarray) -> np.ndarray:
    mx = np.max(x, axis=1)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.sum(np.exp(x - mx[:, None]), axis=1)) + mx


def _lse_cols(x: np.ndarray) -> np.ndarray:
    return _lse_rows(x.T)


@dataclass
class _EntropicWarm:
    refine: int
    f: np.ndarray


class _EntropicDual:
    """Reduced dual of the entropic step as a function of the ``g``-side potential ``f``.

    For fixed ``f`` the free marginal has the closed form
    ``log mu_c = (eta (log r + mean_{a in c} log p_a) + log dx - 1) / (1 + eta)``
    with ``p_a = sum_b exp((f_b - C_ab) / eta)``, and the dual value is
    ``<f, nu> - (1 + eta) sum_c mu_c``, a smooth concave function of ``f``.
    """

    def __init__(self, C: np.ndarray, nu: np.ndarray, n: int, r: int, dx: float):
        self.C, self.nu, self.n, self.r, self.dx = C, nu, n, r, dx

    def state(self, f: np.ndarray, e: float):
        Z = (f[None, :] - self.C) / e
        lp = _lse_rows(Z)
        if not np.all(np.isfinite(lp)):
            raise InfeasibleCost(f"some atoms have no finite-cost partner at eta={e:g}")
        log_mu = (e * (math.log(self.r) + lp.reshape(self.n, self.r).mean(axis=1)) + math.log(self.dx) - 1.0) / (1.0 + e)
        mu = np.exp(log_mu)
        value = float(f @ self.nu) - (1.0 + e) * float(np.sum(mu))
        return value, Z, lp, log_mu

    def plan_parts(self, Z, lp, log_mu):
        pi = np.exp(Z - lp[:, None])
        w = np.repeat(np.exp(log_mu) / self.r, self.r)
        col = w @ pi
        return pi, w, col

    def newton_direction(self, pi, w, col, log_mu, grad, e: float) -> np.ndarray:
        n, r = self.n, self.r
        sw = np.sqrt(w)[:, None] * pi
        A = (np.diag(col) - sw.T @ sw) / e
        S = pi.reshape(n, r, -1).sum(axis=1)
        A += (S.T * (np.exp(log_mu) / r**2)) @ S / (1.0 + e)
        A[np.diag_indices_from(A)] += 1e-14 * np.max(np.diag(A))
        try:
            return cho_solve(cho_factor(A), grad)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(A, grad, rcond=None)[0]


def _entropic_scaling(gv: np.ndarray, grid: Grid, ch: CostModel, cfg: JkoConfig, warm: Optional[_EntropicWarm] = None):
    """Entropic step on ``r`` atoms per cell.

    Each level of the ``eta`` ladder starts with a few scaling sweeps
    (Sinkhorn projection on ``g``, closed-form prox on the free marginal)
    and finishes with damped Newton steps on the reduced dual, whose
    iteration count does not grow as ``eta`` shrinks.
    """
    n, dx = grid.n, grid.dx
    eta = cfg.eta_final(grid)
    r = cfg.refine or default_refine(grid, ch, eta)
    M = float(np.sum(gv) * dx)
    x = atom_positions(grid, r)
    C = ch(np.subtract.outer(x, x))
    nu = np.repeat(np.maximum(gv, 1e-300) * dx / r, r)
    log_nu = np.log(nu)
    dual = _EntropicDual(C, nu, n, r, dx)
    if warm is not None and warm.refine == r:
        f = warm.f.copy()
        levels = [eta]
    else:
        f = np.zeros(n * r)
        levels = eta_ladder(eta, 1.0)
    it = 0
    err = math.inf
    for level, e in enumerate(levels):
        last = level == len(levels) - 1
        level_tol = cfg.tol_inner if last else max(cfg.tol_inner, 1e-6)
        for _ in range(5):
            _, Z, lp, log_mu = dual.state(f, e)
            u = e * (np.repeat(log_mu - math.log(r), r) - lp)
            f = e * (log_nu - _lse_cols((u[:, None] - C) / e))
        D, Z, lp, log_mu = dual.state(f, e)
        pi, w, col = dual.plan_parts(Z, lp, log_mu)
        grad = nu - col
        err = float(np.sum(np.abs(grad)) / M)
        while err > level_tol:
            if it >= cfg.max_iter:
                raise NoConvergence(
                    f"EntropicScaling stopped after {it} iterations at eta={e:g}, marginal error {err:.3e}", err, it
                )
            it += 1
            d = dual.newton_direction(pi, w, col, log_mu, grad, e)
            slope = float(grad @ d)
            t = 1.0
            for _ in range(50):
                Dn, Zn, lpn, lmn = dual.state(f + t * d, e)
                pin, wn, coln = dual.plan_parts(Zn, lpn, lmn)
                errn = float(np.sum(np.abs(nu - coln)) / M)
                if Dn >= D + 1e-4 * t * slope or errn < 0.5 * err:
                    break
                t *= 0.5
            else:
                raise NoConvergence(f"EntropicScaling line search failed at eta={e:g}, marginal error {err:.3e}", err, it)
            f = f + t * d
            D, Z, lp, log_mu, pi, w, col, err = Dn, Zn, lpn, lmn, pin, wn, coln, errn
            grad = nu - col
    rho = np.exp(log_mu) / dx
    rho = np.where(rho < 1e-250, 0.0, rho)
    return rho, it, err, _EntropicWarm(r, f)


# --------------------------------------------------------------------------- BruteForce


def _brute_force(gv: np.ndarray, grid: Grid, ch: CostModel, max_lattice: int = 300):
    n, dx = grid.n, grid.dx
    M = float(np.sum(gv) * dx)

    def J(L):
        if np.any(L < 0):
            return math.inf
        rv = L / dx
        try:
            w = exact_cost_values(rv, gv, grid, ch)
        except InfeasibleCost:
            return math.inf
        pos = L > 0
        return w + float(np.sum(L[pos] * np.log(rv[pos])))

    K = 1
    while math.comb(K + n, n - 1) <= max_lattice:
        K += 1
    best, best_J = None, math.inf
    evals = 0
    # stars and bars: bar positions split K units among n cells
    for bars in itertools.combinations(range(K + n - 1), n - 1):
        parts = np.diff(np.concatenate([[-1], bars, [K + n - 1]])) - 1
        L = parts * (M / K)
        val = J(L)
        evals += 1
        if val < best_J:
            best, best_J = L, val
    if best is None:
        raise InfeasibleCost("no lattice point has finite transport cost")
    moves = [np.array(v, dtype=float) for v in itertools.product((-1, 0, 1), repeat=n) if sum(v) == 0 and any(v)]
    delta = M / K
    # below ~1e-9 M the objective differences are lost in round-off
    while delta > 1e-9 * M:
        for _ in range(4 * K):
            cands = [best + delta * v for v in moves]
            vals = [J(L) for L in cands]
            evals += len(vals)
            k = int(np.argmin(vals))
            # gains at round-off level only reflect drift of the floating-point mass
            if vals[k] < best_J - 1e-14 * (1.0 + abs(best_J)):
                best, best_J = cands[k], vals[k]
            else:
                break
        delta *= 0.5
    return best / dx, evals


# --------------------------------------------------------------------------- public API


def _check_input(g: Density) -> None:
    if not g.mass > 0:
        raise MassMismatch("the step needs a density of positive mass")


def pi_step_info(g: Density, c: CostModel, cfg: JkoConfig, warm: Any = None) -> tuple[Density, StepInfo]:
    """One step of the scheme, returning the new density and solver metadata."""
    _check_input(g)
    cfg.check_grid(g.grid)
    ch = _scaled(c, cfg.h)
    gv = np.asarray(g.values, dtype=float)
    if cfg.solver == "DirectMirror":
        rho, it, res = _direct_mirror(gv, g.grid, ch, cfg)
        new_warm = None
    elif cfg.solver == "EntropicScaling":
        rho, it, res, new_warm = _entropic_scaling(gv, g.grid, ch, cfg, warm)
    else:
        rho, it = _brute_force(gv, g.grid, ch)
        res, new_warm = float("nan"), None
    out = Density(g.grid, rho).normalized(g.mass)
    return out, StepInfo(it, res, cfg.solver, new_warm)


def pi_step(g: Density, c: CostModel, cfg: JkoConfig) -> Density:
    """``argmin_rho W_{c_h}(rho, g) + E(rho)`` over densities with the mass of ``g``."""
    return pi_step_info(g, c, cfg)[0]


def kkt_residual(rho: Density, g: Density, c: CostModel, h: float) -> float:
    """``max |grad phi + grad log rho|`` over interior interfaces.

    ``grad phi`` is the difference of cell-averaged potentials of the
    transport from ``rho`` to ``g`` under ``c_h``; the maximum equals the
    sup-norm of the gradient of the step objective in cumulative masses,
    divided by ``dx``.
    """
    rho.require_positive()
    if rho.grid != g.grid:
        raise ValueError("densities must share a grid")
    if rho.n == 1:
        return 0.0
    ch = _scaled(c, h)
    gv = g.values * (rho.mass / g.mass)
    core = exact_potential_core(rho.values, gv, rho.grid, ch)
    pot = core.phi_avg + np.log(rho.values)
    return float(np.max(np.abs(np.diff(pot))) / rho.grid.dx)


@dataclass
class Trajectory:
    h: float
    states: list
    cost_code: str = ""
    config: dict = field(default_factory=dict)
    steps: list = field(default_factory=list)

    @property
    def grid(self) -> Grid:
        return self.states[0].grid

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(len(self.states))

    def __len__(self) -> int:
        return len(self.states)

    def save(self, directory) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        g = self.grid
        meta = {
            "h": self.h,
            "cost": self.cost_code,
            "grid": {"a": g.a, "b": g.b, "n": g.n},
            "solver": self.config,
            "steps": self.steps,
        }
        (out / "meta.json").write_text(json.dumps(meta, indent=2))
        for k, state in enumerate(self.states):
            state.to_csv(out / f"state_{k:05d}.csv")
        return out

    @classmethod
    def load(cls, directory) -> "Trajectory":
        src = Path(directory)
        meta = json.loads((src / "meta.json").read_text())
        grid = Grid(**meta["grid"])
        states = []
        for path in sorted(src.glob("state_*.csv")):
            data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
            states.append(Density(grid, data[:, 1]))
        return cls(meta["h"], states, meta.get("cost", ""), meta.get("solver", {}), meta.get("steps", []))


class StepFailure(JkoFlowError):
    """A step of :func:`run_scheme` failed; ``step`` is the index of the state being computed."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step}: {type(cause).__name__}: {cause}")
        self.step = step
        self.cause = cause


def run_scheme(rho0: Density, c: CostModel, cfg: JkoConfig, steps: int) -> Trajectory:
    """``states[k+1] = Pi(states[k])`` for ``k < steps``; mass is held at ``mass(rho0)``."""
    if steps < 1:
        raise ValueError("steps must be at least 1")
    _check_input(rho0)
    cfg.check_grid(rho0.grid)
    mass = rho0.mass
    states = [rho0]
    info = []
    warm = None
    for k in range(1, steps + 1):
        try:
            nxt, si = pi_step_info(states[-1], c, cfg, warm)
        except JkoFlowError as exc:
            raise StepFailure(k, exc) from exc
        warm = si.warm
        states.append(nxt.normalized(mass))
        info.append(si.to_dict())
    return Trajectory(cfg.h, states, getattr(c, "code", ""), asdict(cfg), info)


__all__ = [
    "SOLVERS",
    "JkoConfig",
    "StepInfo",
    "StepFailure",
    "Trajectory",
    "entropy",
    "objective",
    "pi_step",
    "pi_step_info",
    "kkt_residual",
    "run_scheme",
    "parse_cost",
]
