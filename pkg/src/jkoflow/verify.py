"""Fixed-seed acceptance matrix shared by ``jko-flow verify`` and the test suite.

Every row returns a :class:`RowResult`; solver errors inside a row turn into
a failed row rather than an exception, so one broken component cannot hide
the verdicts of the others.
"""

from __future__ import annotations

import functools
import json
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .cost import PowerCost, RelativisticCost, smooth
from .diagnostics import PowerH, Tolerances, five_gradients_residual, monotonicity_report
from .errors import JkoFlowError
from .geometry import Density, Grid, interface_average
from .jko import JkoConfig, kkt_residual, pi_step, run_scheme
from .profiles import cosine, random_trig
from .reference import PdeConfig, compare_jko_pde, heat_exact, interface_flux, pde_step, stable_dt
from .transport import solve_exact_1d, w1_distance


@dataclass
class RowResult:
    name: str
    criterion: int
    passed: bool
    detail: str
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] {self.criterion:>2} {self.name:<22} {self.detail} ({self.seconds:.1f}s)"


@dataclass(frozen=True)
class Row:
    name: str
    criterion: int
    group: str
    fn: Callable[[], tuple]


# --------------------------------------------------------------------------- shared data

GRID64 = Grid(0.0, 1.0, 64)
MIRROR_SEEDS = range(5)
MIRROR_H = 5e-3
MIRROR_STEPS = 50


@functools.lru_cache(maxsize=None)
def mirror_reports():
    """Monotonicity reports for the DirectMirror trajectories of rows 1-3."""
    out = []
    for p in (2, 3):
        for seed in MIRROR_SEEDS:
            rho0 = random_trig(GRID64, seed, 4)
            traj = run_scheme(rho0, PowerCost(p), JkoConfig(h=MIRROR_H, tol_inner=1e-8), MIRROR_STEPS)
            out.append((p, seed, monotonicity_report(traj.states, h=MIRROR_H)))
    return out


def _worst(reports, check_names):
    worst, where = -math.inf, None
    for p, seed, rep in reports:
        for c in rep.checks:
            if c["check"] in check_names and c["excess"] > worst:
                worst, where = c["excess"], (p, seed, c["k"], c["check"])
    return worst, where


def small_random(seed: int, n: int) -> Density:
    rng = np.random.default_rng(seed)
    return Density(Grid(0.0, 1.0, n), rng.uniform(0.2, 2.0, n)).normalized()


@functools.lru_cache(maxsize=None)
def brute_force_n4():
    """BruteForce steps of rows 6 and 9: ``(g, Pi(g))`` for ten seeds."""
    out = []
    for seed in range(10):
        g = small_random(100 + seed, 4)
        out.append((g, pi_step(g, PowerCost(2), JkoConfig(h=0.1, solver="BruteForce"))))
    return out


# --------------------------------------------------------------------------- rows


def row_fisher():
    worst, where = _worst(mirror_reports(), {"fisher_p1", "fisher_p2", "fisher_p4"})
    return worst <= 1e-6, f"max relative increase {worst:.3e} (tol 1e-6) at p,seed,k,H={where}", {"worst": worst}


def row_lipschitz():
    worst, where = _worst(mirror_reports(), {"lipschitz"})
    return worst <= 1e-6, f"max lip_k - lip_0 = {worst:.3e} (tol 1e-6) at {where}", {"worst": worst}


def row_modulus():
    worst, where = _worst(mirror_reports(), {"modulus"})
    return worst <= 1e-3, f"max omega_k - envelope(omega_0) = {worst:.3e} (tol 1e-3) at {where}", {"worst": worst}


def _bump(grid: Grid, rng) -> np.ndarray:
    x0 = rng.uniform(grid.a, grid.b)
    width = rng.uniform(0.1, 0.4) * grid.length
    return rng.uniform(0.1, 1.0) * np.exp(-(((grid.centers - x0) / width) ** 2))


def row_comparison(n_large_pairs: int = 20):
    c = PowerCost(2)
    worst_small = -math.inf
    for seed in range(20):
        g1 = small_random(200 + seed, 5)
        g2 = Density(g1.grid, g1.values + _bump(g1.grid, np.random.default_rng(300 + seed)))
        cfg = JkoConfig(h=0.1, solver="BruteForce")
        worst_small = max(worst_small, float(np.max(pi_step(g1, c, cfg).values - pi_step(g2, c, cfg).values)))
    worst_large = -math.inf
    cfg = JkoConfig(h=2e-2, eta=1e-4, solver="EntropicScaling")
    for seed in range(n_large_pairs):
        g1 = random_trig(GRID64, 400 + seed, 4)
        g2 = Density(GRID64, g1.values + _bump(GRID64, np.random.default_rng(500 + seed)))
        worst_large = max(worst_large, float(np.max(pi_step(g1, c, cfg).values - pi_step(g2, c, cfg).values)))
    ok = worst_small <= 1e-6 and worst_large <= 1e-3
    detail = f"max Pi(g1)-Pi(g2): n=5 BruteForce {worst_small:.3e} (tol 1e-6), n=64 entropic {worst_large:.3e} (tol 1e-3)"
    return ok, detail, {"worst_bruteforce": worst_small, "worst_entropic": worst_large}


def row_homogeneity():
    c = PowerCost(2)
    cfg = JkoConfig(h=MIRROR_H, tol_inner=1e-10)
    worst = 0.0
    for seed in range(3):
        g = random_trig(GRID64, 600 + seed, 4)
        base = pi_step(g, c, cfg)
        for lam in (0.1, 2.5, 10.0):
            err = pi_step(g.scaled(lam), c, cfg).l1_distance(base.scaled(lam)) / (lam * g.mass)
            worst = max(worst, err)
    return worst <= 1e-6, f"max ||Pi(lg) - l Pi(g)||_1 / (l mass) = {worst:.3e} (tol 1e-6)", {"worst": worst}


def row_oracle():
    c = PowerCost(2)
    ent = JkoConfig(h=0.1, eta=1e-4, solver="EntropicScaling", tol_inner=1e-9)
    mir = JkoConfig(h=0.1, tol_inner=1e-10)
    worst_e, worst_m = 0.0, 0.0
    for g, brute in brute_force_n4():
        worst_e = max(worst_e, pi_step(g, c, ent).l1_distance(brute))
        worst_m = max(worst_m, pi_step(g, c, mir).l1_distance(brute))
    ok = worst_e <= 1e-3 and worst_m <= 1e-4
    detail = f"L1 to BruteForce: entropic {worst_e:.3e} (tol 1e-3), DirectMirror {worst_m:.3e} (tol 1e-4)"
    return ok, detail, {"entropic": worst_e, "mirror": worst_m}


def _map_formula_error(rho: Density, g: Density, sol, ch) -> float:
    """``max |T(x) - (x - grad (c_h)*(phi'(x)))|`` at interior interfaces, ``T`` from the CDFs."""
    dx = rho.grid.dx
    Fr = np.concatenate([[0.0], np.cumsum(rho.values) * dx])
    Fg = np.concatenate([[0.0], np.cumsum(g.values) * dx])
    T = np.interp(Fr[1:-1], Fg, rho.grid.edges)
    x = rho.grid.interfaces
    return float(np.max(np.abs(x - ch.grad_conj(sol.phi_grad) - T)))


def row_five_gradients():
    worst, worst_map = math.inf, 0.0
    for seed in range(100):
        rho = random_trig(GRID64, 1000 + seed, 4)
        g = random_trig(GRID64, 5000 + seed, 4)
        for p in (2, 4):
            ch = PowerCost(p).scaled(1.0)
            sol = solve_exact_1d(rho, g, ch)
            worst_map = max(worst_map, _map_formula_error(rho, g, sol, ch))
            for H in (PowerH(2), PowerH(4)):
                worst = min(worst, five_gradients_residual(rho, g, sol, H))
    ok = worst >= -1e-6 and worst_map <= 1e-8
    detail = f"min residual {worst:.3e} (tol -1e-6); map formula error {worst_map:.3e} (tol 1e-8)"
    return ok, detail, {"min_residual": worst, "map_error": worst_map}


def row_pde_convergence():
    rho0 = cosine(Grid(0.0, 1.0, 128), 0.5)
    exact = heat_exact(0.5, 0.1, rho0.grid)
    hs = (4e-3, 2e-3, 1e-3)
    errors = []
    for h in hs:
        traj = run_scheme(rho0, PowerCost(2), JkoConfig(h=h), int(round(0.1 / h)))
        errors.append(traj.states[-1].l1_distance(exact))
    order = float(np.polyfit(np.log(hs), np.log(errors), 1)[0])
    cmp = compare_jko_pde(rho0, PowerCost(2), 1e-3, 0.1)
    ok = errors[-1] <= 5e-2 and order >= 0.7 and cmp.l1_error <= 5e-2
    detail = f"L1 to heat solution {errors[-1]:.3e} (tol 5e-2), order {order:.3f} (>= 0.7), JKO vs FD {cmp.l1_error:.3e}"
    return ok, detail, {"errors": errors, "order": order, "compare": cmp.to_dict()}


def row_kkt():
    c = PowerCost(2)
    worst_b = max(kkt_residual(rho, g, c, 0.1) for g, rho in brute_force_n4())
    worst_m = 0.0
    for seed in range(5):
        g = random_trig(GRID64, 700 + seed, 4)
        rho = pi_step(g, c, JkoConfig(h=MIRROR_H))
        worst_m = max(worst_m, kkt_residual(rho, g, c, MIRROR_H))
    ok = worst_b <= 1e-2 and worst_m <= 1e-4
    return ok, f"BruteForce n=4 {worst_b:.3e} (tol 1e-2), DirectMirror n=64 {worst_m:.3e} (tol 1e-4)", {
        "bruteforce": worst_b,
        "mirror": worst_m,
    }


def row_relativistic(steps: int = 50):
    h = 5e-2
    rho0 = random_trig(GRID64, 0, 4)
    outs = [pi_step(rho0, smooth(RelativisticCost(), eps), JkoConfig(h=h)) for eps in (1e-1, 1e-2, 1e-3)]
    d1, d2 = w1_distance(outs[0], outs[1]), w1_distance(outs[1], outs[2])
    ok_a = d2 < d1
    c = smooth(RelativisticCost(), 1e-2)
    traj = run_scheme(rho0, c, JkoConfig(h=h), steps)
    rep = monotonicity_report(traj.states, h=h, tol=Tolerances(1e-3, 1e-3, 1e-3, 1e-3))
    ok_b = rep.passed
    worst_flux = -math.inf
    exact = RelativisticCost()
    for start in (cosine(GRID64, 0.5), rho0):
        rho = start
        for _ in range(1000):
            worst_flux = max(worst_flux, float(np.max(np.abs(interface_flux(rho, exact)) - interface_average(rho))))
            rho = pde_step(rho, exact, stable_dt(rho, exact, 0.9))
    ok_c = worst_flux <= 0.0
    w = rep.worst()
    detail = (
        f"(a) W1 {d1:.3e} -> {d2:.3e}; (b) worst {w['check']} excess {w['excess']:.3e} (tol 1e-3); "
        f"(c) max |F| - rho~ = {worst_flux:.3e}"
    )
    return ok_a and ok_b and ok_c, detail, {"w1": [d1, d2], "monotonicity": rep.summary(), "flux": worst_flux}


def row_pde_fisher():
    worst = -math.inf
    H = PowerH(2)
    from .diagnostics import fisher

    for c in (PowerCost(2), RelativisticCost()):
        rho = cosine(GRID64, 0.5)
        prev = fisher(rho, H)
        for _ in range(1000):
            rho = pde_step(rho, c, stable_dt(rho, c, 0.9))
            cur = fisher(rho, H)
            worst = max(worst, cur - prev)
            prev = cur
    return worst <= 1e-8, f"max per-step Fisher increase {worst:.3e} (tol 1e-8)", {"worst": worst}


ROWS = [
    Row("fisher_decrease", 1, "mirror", row_fisher),
    Row("lipschitz", 2, "mirror", row_lipschitz),
    Row("modulus", 3, "mirror", row_modulus),
    Row("comparison_principle", 4, "comparison", row_comparison),
    Row("homogeneity", 5, "homogeneity", row_homogeneity),
    Row("oracle_equivalence", 6, "brute", row_oracle),
    Row("five_gradients", 7, "five", row_five_gradients),
    Row("pde_convergence", 8, "pde", row_pde_convergence),
    Row("kkt", 9, "brute", row_kkt),
    Row("relativistic", 10, "relativistic", row_relativistic),
    Row("pde_fisher", 11, "pdefisher", row_pde_fisher),
]


def select(filter_: Optional[str] = None) -> list:
    if not filter_:
        return list(ROWS)
    return [r for r in ROWS if filter_.lower() in r.name]


def run_row(row: Row) -> RowResult:
    start = time.perf_counter()
    try:
        ok, detail, metrics = row.fn()
    except (JkoFlowError, ValueError, FloatingPointError) as exc:
        ok, detail, metrics = False, f"error: {type(exc).__name__}: {exc}", {"traceback": traceback.format_exc()}
    return RowResult(row.name, row.criterion, bool(ok), detail, _plain(metrics), time.perf_counter() - start)


def _run_group(names: list) -> list:
    by_name = {r.name: r for r in ROWS}
    return [run_row(by_name[n]) for n in names]


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def thread_cap() -> int:
    raw = os.environ.get("JKO_THREADS", "")
    try:
        cap = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        cap = 1
    return max(1, cap)


def run_suite(filter_: Optional[str] = None, workers: Optional[int] = None) -> list:
    """Run the selected rows, in parallel groups when more than one worker is allowed."""
    rows = select(filter_)
    groups: dict = {}
    for r in rows:
        groups.setdefault(r.group, []).append(r.name)
    workers = thread_cap() if workers is None else workers
    if workers <= 1 or len(groups) <= 1:
        results = [run_row(r) for r in rows]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(groups))) as pool:
            done = list(pool.map(_run_group, groups.values()))
        flat = {res.name: res for grp in done for res in grp}
        results = [flat[r.name] for r in rows]
    return results


def write_results(results: list, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"pass": all(r.passed for r in results), "rows": [asdict(r) for r in results]}
    path = out / "verify.json"
    path.write_text(json.dumps(payload, indent=2))
    return path


def format_table(results: list) -> str:
    lines = [r.line() for r in results]
    passed = sum(r.passed for r in results)
    lines.append(f"{passed}/{len(results)} rows passed")
    return "\n".join(lines)
