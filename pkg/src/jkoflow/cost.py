"""Convex, even transport costs together with their Legendre conjugates.

Every cost exposes vectorised ``__call__`` (the cost itself, possibly
``+inf``), ``grad``, ``conj`` and ``grad_conj``.  ``ScaledCost`` wraps a cost
into the time-step family ``c_h(z) = h * c(z / h)``.

Cost codes used in config files::

    power:p             |z|^p / p
    relativistic        1 - sqrt(1 - z^2) on |z| <= 1, +inf outside
    relativistic_eps:e  inf-convolution of the relativistic cost with |w|^2 / (2e)
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidEps


def legendre_transform(z: np.ndarray, values: np.ndarray, w) -> np.ndarray:
    """Discrete conjugate ``max_k (w z_k - values_k)`` by brute force over the samples.

    Infinite samples are skipped.  O(len(z) * len(w)) memory, meant for desk-sized tables.
    """
    z = np.asarray(z, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = np.isfinite(values)
    z, values = z[keep], values[keep]
    w = np.asarray(w, dtype=float)
    scores = np.multiply.outer(w, z) - values
    return scores.max(axis=-1)


class CostModel:
    """Base class; subclasses fill in the closed forms."""

    code: str = "abstract"
    #: largest |z| where the cost is finite
    support: float = math.inf

    def __call__(self, z):
        raise NotImplementedError

    def grad(self, z):
        raise NotImplementedError

    def conj(self, w):
        raise NotImplementedError

    def grad_conj(self, w):
        raise NotImplementedError

    def grad_conj_slope(self, w):
        """Derivative of ``grad_conj``; bounds the stiffness of the limit PDE."""
        raise NotImplementedError

    def scaled(self, h: float) -> "ScaledCost":
        return ScaledCost(self, h)

    @property
    def base(self) -> "CostModel":
        return self

    @property
    def h(self) -> float:
        return 1.0

    def __repr__(self):
        return f"{type(self).__name__}({self.code!r})"

    def __eq__(self, other):
        return isinstance(other, CostModel) and type(other) is type(self) and other.code == self.code

    def __hash__(self):
        return hash((type(self).__name__, self.code))


class PowerCost(CostModel):
    """``c(z) = |z|^p / p`` with conjugate exponent ``q = p / (p - 1)``."""

    def __init__(self, p: float):
        if not p > 1:
            raise ValueError(f"power cost needs p > 1, got {p}")
        self.p = float(p)
        self.q = self.p / (self.p - 1.0)
        self.code = f"power:{p:g}"

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return np.abs(z) ** self.p / self.p

    def grad(self, z):
        z = np.asarray(z, dtype=float)
        return np.sign(z) * np.abs(z) ** (self.p - 1.0)

    def conj(self, w):
        w = np.asarray(w, dtype=float)
        return np.abs(w) ** self.q / self.q

    def grad_conj(self, w):
        w = np.asarray(w, dtype=float)
        return np.sign(w) * np.abs(w) ** (self.q - 1.0)

    def grad_conj_slope(self, w):
        w = np.asarray(w, dtype=float)
        if self.q == 2.0:
            return np.ones_like(w)
        with np.errstate(divide="ignore"):
            return (self.q - 1.0) * np.abs(w) ** (self.q - 2.0)


class RelativisticCost(CostModel):
    """``c(z) = 1 - sqrt(1 - z^2)`` for ``|z| <= 1`` and ``+inf`` beyond."""

    code = "relativistic"
    support = 1.0

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        inside = np.abs(z) <= 1.0
        zz = np.where(inside, z, 0.0)
        return np.where(inside, zz * zz / (1.0 + np.sqrt(1.0 - zz * zz)), np.inf)

    def grad(self, z):
        z = np.asarray(z, dtype=float)
        inside = np.abs(z) < 1.0
        zz = np.where(inside, z, 0.0)
        return np.where(inside, zz / np.sqrt(1.0 - zz * zz), np.copysign(np.inf, z))

    def conj(self, w):
        w = np.asarray(w, dtype=float)
        return w * w / (1.0 + np.sqrt(1.0 + w * w))

    def grad_conj(self, w):
        w = np.asarray(w, dtype=float)
        return w / np.hypot(1.0, w)

    def grad_conj_slope(self, w):
        w = np.asarray(w, dtype=float)
        return (1.0 + w * w) ** -1.5


class SmoothedCost(CostModel):
    """Inf-convolution ``c_eps(z) = inf_w c(z - w) + w^2 / (2 eps)``.

    The conjugate is ``c* + eps |w|^2 / 2``.  The minimising shift is found on
    the dual side: ``v = c_eps'(z)`` solves ``grad_conj(v) + eps v = z``, a
    monotone scalar equation handled by safeguarded Newton.  The primal
    bracketed minimiser :meth:`inf_convolution` is kept as an independent path.
    """

    def __init__(self, base: CostModel, eps: float):
        if not eps > 0:
            raise InvalidEps(f"smoothing parameter must be positive, got {eps}")
        self.base_cost = base
        self.eps = float(eps)
        self.code = f"relativistic_eps:{eps:g}" if isinstance(base, RelativisticCost) else f"{base.code}~eps:{eps:g}"

    def _dual_gradient(self, z: np.ndarray) -> np.ndarray:
        eps, base = self.eps, self.base_cost
        az = np.abs(z)
        lo = np.maximum(0.0, (az - base.support) / eps) if math.isfinite(base.support) else np.zeros_like(az)
        hi = az / eps
        v = 0.5 * (lo + hi)
        for _ in range(200):
            f = base.grad_conj(v) + eps * v - az
            lo = np.where(f < 0, v, lo)
            hi = np.where(f >= 0, v, hi)
            slope = base.grad_conj_slope(v) + eps
            with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
                newton = v - f / slope
            ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
            v_new = np.where(ok, newton, 0.5 * (lo + hi))
            if np.all(np.abs(v_new - v) <= 4e-16 * np.maximum(1.0, np.abs(v_new))):
                v = v_new
                break
            v = v_new
        return np.sign(z) * v

    def grad(self, z):
        z = np.asarray(z, dtype=float)
        return self._dual_gradient(z)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        v = self._dual_gradient(z)
        # Fenchel equality at the dual point
        return z * v - self.conj(v)

    def conj(self, w):
        w = np.asarray(w, dtype=float)
        return self.base_cost.conj(w) + 0.5 * self.eps * w * w

    def grad_conj(self, w):
        w = np.asarray(w, dtype=float)
        return self.base_cost.grad_conj(w) + self.eps * w

    def grad_conj_slope(self, w):
        return self.base_cost.grad_conj_slope(w) + self.eps

    def inf_convolution(self, z, iterations: int = 200):
        """Primal evaluation: bisection on the derivative of ``w -> c(z - w) + w^2/(2 eps)``.

        Returns ``(value, minimiser)``.
        """
        z = np.atleast_1d(np.asarray(z, dtype=float))
        base, eps = self.base_cost, self.eps
        s = base.support
        lo = np.maximum(z - s, -np.abs(z)) if math.isfinite(s) else -np.abs(z)
        hi = np.minimum(z + s, np.abs(z)) if math.isfinite(s) else np.abs(z)
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            slope = -base.grad(z - mid) + mid / eps
            lo = np.where(slope < 0, mid, lo)
            hi = np.where(slope >= 0, mid, hi)
        w = 0.5 * (lo + hi)
        return base(z - w) + w * w / (2 * eps), w


class TabulatedCost(CostModel):
    """Sampled convex even cost; the conjugate is a discrete Legendre transform.

    Convexity is checked on the samples only; strict convexity cannot be certified.
    """

    def __init__(self, z, values, code: str = "tabulated"):
        z = np.asarray(z, dtype=float)
        values = np.asarray(values, dtype=float)
        order = np.argsort(z)
        z, values = z[order], values[order]
        if len(z) < 3:
            raise ValueError("need at least three samples")
        finite = np.isfinite(values)
        zf, vf = z[finite], values[finite]
        slopes = np.diff(vf) / np.diff(zf)
        if np.any(np.diff(slopes) < -1e-10 * (1 + np.abs(slopes[1:]))):
            raise ValueError("tabulated cost samples are not convex")
        self.z, self.values = zf, vf
        self.support = float(min(-zf[0], zf[-1]))
        self.code = code

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        out = np.interp(z, self.z, self.values)
        return np.where((z < self.z[0]) | (z > self.z[-1]), np.inf, out)

    def grad(self, z):
        z = np.asarray(z, dtype=float)
        slopes = np.diff(self.values) / np.diff(self.z)
        k = np.clip(np.searchsorted(self.z, z) - 1, 0, len(slopes) - 1)
        out = slopes[k]
        return np.where((z < self.z[0]) | (z > self.z[-1]), np.copysign(np.inf, z), out)

    def conj(self, w):
        return legendre_transform(self.z, self.values, w)

    def grad_conj(self, w):
        w = np.asarray(w, dtype=float)
        scores = np.multiply.outer(w, self.z) - self.values
        return self.z[np.argmax(scores, axis=-1)]

    def grad_conj_slope(self, w):
        w = np.asarray(w, dtype=float)
        slopes = np.diff(self.values) / np.diff(self.z)
        dz = np.diff(self.z)
        dslope = np.diff(slopes)
        with np.errstate(divide="ignore"):
            inv = np.where(dslope > 0, 0.5 * (dz[1:] + dz[:-1]) / dslope, np.inf)
        return np.full_like(w, np.max(inv))


class ScaledCost(CostModel):
    """``c_h(z) = h * c(z / h)``; its conjugate is ``h * c*`` and ``grad (c_h)* = h grad c*``."""

    def __init__(self, base: CostModel, h: float):
        if not h > 0:
            raise ValueError(f"time step must be positive, got {h}")
        if isinstance(base, ScaledCost):
            base, h = base.base_cost, base.h_value * h
        self.base_cost = base
        self.h_value = float(h)
        self.support = h * base.support
        self.code = base.code

    @property
    def base(self) -> CostModel:
        return self.base_cost

    @property
    def h(self) -> float:
        return self.h_value

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return self.h_value * self.base_cost(z / self.h_value)

    def grad(self, z):
        z = np.asarray(z, dtype=float)
        return self.base_cost.grad(z / self.h_value)

    def conj(self, w):
        return self.h_value * self.base_cost.conj(w)

    def grad_conj(self, w):
        return self.h_value * self.base_cost.grad_conj(w)

    def grad_conj_slope(self, w):
        return self.h_value * self.base_cost.grad_conj_slope(w)

    def __repr__(self):
        return f"ScaledCost({self.base_cost!r}, h={self.h_value:g})"

    def __eq__(self, other):
        return isinstance(other, ScaledCost) and other.base_cost == self.base_cost and other.h_value == self.h_value

    def __hash__(self):
        return hash((self.base_cost, self.h_value))


def smooth(c: CostModel, eps: float) -> SmoothedCost:
    """Inf-convolution of ``c`` with ``|w|^2 / (2 eps)``."""
    if isinstance(c, ScaledCost):
        raise TypeError("smooth the base cost before scaling it")
    return SmoothedCost(c, eps)


def parse_cost(code: str) -> CostModel:
    """Build a cost from its config-file code (``power:p``, ``relativistic``, ``relativistic_eps:e``)."""
    text = code.strip().lower()
    name, _, arg = text.partition(":")
    try:
        if name == "power":
            return PowerCost(float(arg))
        if name == "relativistic" and not arg:
            return RelativisticCost()
        if name == "relativistic_eps":
            return smooth(RelativisticCost(), float(arg))
    except (ValueError, InvalidEps) as exc:
        raise ValueError(f"bad cost code {code!r}: {exc}") from exc
    raise ValueError(f"unknown cost code {code!r}")
