"""Gaussian heat-kernel machinery behind the fixed-point operator.

For a step quantile state ``Q = sum_j y_j 1_{cell j}`` with cell weights
``w_j`` and a target law ``nu`` this module evaluates

    G(x)     = sum_j w_j Phi((x - y_j) / sqrt(t))              (phi_t * F)
    S(x)     = int Q_nu(G(x - z)) phi_t(z) dz
    S'(x)    = int Q_nu'(G(x - z)) G'(x - z) phi_t(z) dz
    T(x, y)  = int phi_t(x - y - z) Q_nu'(G(x - z)) phi_t(z) dz

with the outer z-integral done by Gauss-Hermite quadrature.  ``S'`` is
computed as the exact derivative of the discretized ``S``, which makes it
identical (up to rounding) to ``sum_j w_j T(x, y_j)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .errors import DomainError, NumericError, RangeError
from .measures import AnalyticDistribution, DiscreteMeasure, Measure, Mixture, QuantileGrid

GH_NODES = 64
ROOT_RTOL = 1e-12
ROOT_MAX_ITERS = 200
_CHUNK = 256

SQRT2PI = math.sqrt(2.0 * math.pi)

norm_cdf = special.ndtr
norm_ppf = special.ndtri


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / SQRT2PI


@lru_cache(maxsize=16)
def hermite_rule(n: int = GH_NODES) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights for ``E[g(Z)]``, ``Z ~ N(0, 1)``."""
    x, w = np.polynomial.hermite.hermgauss(n)
    z = x * math.sqrt(2.0)
    w = w / math.sqrt(math.pi)
    z.flags.writeable = False
    w.flags.writeable = False
    return z, w


@dataclass(frozen=True)
class HeatKernel:
    """Centered Gaussian of variance ``t``."""

    t: float = 1.0

    def __post_init__(self):
        if not self.t > 0:
            raise DomainError("variance must be positive")

    @property
    def sd(self) -> float:
        return math.sqrt(self.t)

    def pdf(self, x):
        return norm_pdf(np.asarray(x, dtype=float) / self.sd) / self.sd

    def cdf(self, x):
        return norm_cdf(np.asarray(x, dtype=float) / self.sd)

    def smooth(self, f, x, nodes: int = GH_NODES):
        """``(phi_t * f)(x) = E[f(x + sqrt(t) Z)]``."""
        z, w = hermite_rule(nodes)
        x = np.asarray(x, dtype=float)
        vals = f(x[..., None] + self.sd * z)
        return vals @ w


def _state_arrays(F) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(F, QuantileGrid):
        return F.values, F.weights
    if isinstance(F, DiscreteMeasure):
        return F.atoms, F.weights
    raise TypeError(f"expected a step quantile state, got {type(F).__name__}")


def phi_convolve_cdf(F, t: float, x):
    """``(phi_t * F)(x) = int_0^1 Phi_t(x - Q(u)) du``."""
    if not t > 0:
        raise DomainError("variance must be positive")
    x = np.asarray(x, dtype=float)
    sd = math.sqrt(t)
    if isinstance(F, (QuantileGrid, DiscreteMeasure)):
        y, w = _state_arrays(F)
        return norm_cdf((x[..., None] - y) / sd) @ w
    if isinstance(F, Mixture):
        return sum(wk * phi_convolve_cdf(c, t, x) for c, wk in zip(F.components, F.weights))
    if isinstance(F, AnalyticDistribution):
        lo, hi = F.support()
        pts = [p for p in F.breakpoints() if lo < p < hi] or None

        def one(xv):
            val, _ = integrate.quad(lambda y: norm_cdf((xv - y) / sd) * F.pdf(y), lo, hi,
                                    points=pts if np.isfinite(lo) and np.isfinite(hi) else None,
                                    epsabs=1e-14, epsrel=1e-13, limit=200)
            return val

        return np.vectorize(one, otypes=[float])(x)
    raise TypeError(f"cannot convolve {type(F).__name__}")


@dataclass(frozen=True, eq=False)
class SMap:
    """The smoothed transport map ``S_Q`` of a step state against ``nu``."""

    state: QuantileGrid | DiscreteMeasure
    nu: AnalyticDistribution
    t: float = 1.0
    nodes: int = GH_NODES
    root_rtol: float = ROOT_RTOL
    _y: np.ndarray = field(init=False, repr=False)
    _w: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.t > 0:
            raise DomainError("variance must be positive")
        y, w = _state_arrays(self.state)
        object.__setattr__(self, "_y", np.asarray(y, dtype=float))
        object.__setattr__(self, "_w", np.asarray(w, dtype=float))
        lo, hi = self.nu.support()
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise DomainError("target law must have compact support")

    @property
    def sd(self) -> float:
        return math.sqrt(self.t)

    @property
    def range(self) -> tuple[float, float]:
        """Open range of S: the interior of the support hull of nu."""
        return self.nu.support()

    # -- inner convolution -------------------------------------------------
    def G(self, x):
        x = np.asarray(x, dtype=float)
        return norm_cdf((x[..., None] - self._y) / self.sd) @ self._w

    def G_prime(self, x):
        x = np.asarray(x, dtype=float)
        return norm_pdf((x[..., None] - self._y) / self.sd) @ self._w / self.sd

    def _quad_points(self, x):
        z, w = hermite_rule(self.nodes)
        return np.asarray(x, dtype=float)[..., None] - self.sd * z, w

    def _chunked(self, fn, x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1)
        out = np.empty(flat.shape, dtype=float)
        for i in range(0, flat.size, _CHUNK):
            out[i:i + _CHUNK] = fn(flat[i:i + _CHUNK])
        return out.reshape(x.shape)

    # -- S and its derivative ----------------------------------------------
    def __call__(self, x):
        return self.eval(x)

    def eval(self, x):
        def fn(xc):
            pts, w = self._quad_points(xc)
            return self.nu.quantile(np.clip(self.G(pts), 0.0, 1.0)) @ w

        out = self._chunked(fn, x)
        if not np.all(np.isfinite(out)):
            raise NumericError("S-map quadrature is not finite")
        return out

    def derivative(self, x):
        def fn(xc):
            pts, w = self._quad_points(xc)
            g = np.clip(self.G(pts), 0.0, 1.0)
            return (self.nu.quantile_derivative(g) * self.G_prime(pts)) @ w

        out = self._chunked(fn, x)
        if not np.all(np.isfinite(out)):
            raise NumericError("S-map derivative is not finite")
        return out

    def t_kernel(self, x, y):
        """``T_Q(x, y)`` for broadcastable ``x`` and ``y``."""
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        z, w = hermite_rule(self.nodes)
        pts = x[..., None] - self.sd * z
        qp = self.nu.quantile_derivative(np.clip(self.G(pts), 0.0, 1.0))
        ker = norm_pdf((pts - y[..., None]) / self.sd) / self.sd
        return (ker * qp) @ w

    def t_matrix(self, xs, ys):
        """``T[i, j] = T_Q(xs[i], ys[j])`` without recomputing the inner convolution."""
        xs = np.asarray(xs, dtype=float).reshape(-1)
        ys = np.asarray(ys, dtype=float).reshape(-1)
        z, w = hermite_rule(self.nodes)
        pts = xs[:, None] - self.sd * z                      # (N, K)
        qp = self.nu.quantile_derivative(np.clip(self.G(pts), 0.0, 1.0)) * w
        ker = norm_pdf((pts[:, None, :] - ys[None, :, None]) / self.sd) / self.sd
        return np.einsum("njk,nk->nj", ker, qp)

    # -- inverse -------------------------------------------------------------
    def value_and_derivative(self, x):
        """``(S(x), S'(x))`` sharing one evaluation of the inner convolution."""
        def fn(xc):
            pts, w = self._quad_points(xc)
            z = (pts[..., None] - self._y) / self.sd
            g = np.clip(norm_cdf(z) @ self._w, 0.0, 1.0)
            gp = norm_pdf(z) @ self._w / self.sd
            return np.stack([self.nu.quantile(g) @ w, (self.nu.quantile_derivative(g) * gp) @ w])

        x = np.asarray(x, dtype=float).reshape(-1)
        out = np.empty((2, x.size))
        for i in range(0, x.size, _CHUNK):
            out[:, i:i + _CHUNK] = fn(x[i:i + _CHUNK])
        if not np.all(np.isfinite(out)):
            raise NumericError("S-map quadrature is not finite")
        return out[0], out[1]

    def invert(self, target, x0=None):
        """Solve ``S(x) = target`` elementwise.

        Newton steps are capped by a step size that doubles whenever it binds
        (geometric bracket expansion); once both sides are bracketed, steps
        leaving the bracket fall back to bisection.
        """
        target = np.asarray(target, dtype=float)
        flat = target.reshape(-1)
        lo_nu, hi_nu = self.range
        bad = (flat <= lo_nu) | (flat >= hi_nu) | ~np.isfinite(flat)
        if np.any(bad):
            raise RangeError(
                f"targets {flat[bad].tolist()} outside the open range ({lo_nu}, {hi_nu}) of S"
            )
        if x0 is None:
            x = np.asarray(QuantileGrid(self._y, self._w).quantile(self.nu.cdf(flat)), dtype=float)
        else:
            x = np.broadcast_to(np.asarray(x0, dtype=float), flat.shape).astype(float)
        x = x.reshape(-1).copy()
        lo = np.full(x.shape, -np.inf)
        hi = np.full(x.shape, np.inf)
        cap = np.full(x.shape, self.sd)
        atol = self.root_rtol * (1.0 + np.abs(flat))
        active = np.arange(x.size)
        for _ in range(ROOT_MAX_ITERS):
            xa = x[active]
            s, ds = self.value_and_derivative(xa)
            s = s - flat[active]
            lo[active] = np.where(s < 0, xa, lo[active])
            hi[active] = np.where(s > 0, xa, hi[active])
            l, h = lo[active], hi[active]
            tight = (h - l) <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(xa))
            keep = ~((np.abs(s) <= atol[active]) | tight)
            active, xa, s, ds, l, h = active[keep], xa[keep], s[keep], ds[keep], l[keep], h[keep]
            if active.size == 0:
                return x.reshape(target.shape)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = -s / ds
            c = cap[active]
            big = ~np.isfinite(step) | (np.abs(step) > c)
            step = np.where(big, np.sign(-s) * c, step)
            cap[active] = np.where(big, 2 * c, c)
            xn = xa + step
            outside = (xn <= l) | (xn >= h)
            bounded = np.isfinite(l) & np.isfinite(h)
            xn = np.where(outside & bounded, 0.5 * (l + h), xn)
            xn = np.where(outside & ~bounded, np.where(np.isfinite(l), l, h), xn)
            x[active] = xn
        raise NumericError("S-map inversion did not converge")


def s_map_eval(S: SMap, x):
    return S.eval(x)


def s_map_invert(S: SMap, target, x0=None):
    return S.invert(target, x0)


def s_map_derivative(S: SMap, x):
    return S.derivative(x)


def t_kernel(S: SMap, x, y):
    return S.t_kernel(x, y)


def quantile_derivative_bounds(nu: AnalyticDistribution) -> tuple[float, float]:
    """(inf, sup) of ``Q_nu'`` from the density bounds of ``nu``."""
    fmin, fmax = nu.density_bounds()
    if fmin <= 0:
        raise DomainError("density of nu is not bounded away from zero on its hull")
    return 1.0 / fmax, 1.0 / fmin


def s_derivative_bounds(nu: AnalyticDistribution, R: float, t: float = 1.0) -> tuple[float, float]:
    """Explicit ``(eps_S(R), delta_S(R))`` with ``eps_S <= S_Q'(x) <= delta_S``
    whenever ``|x|, ||Q||_inf <= R``.

    ``S'(x) = int Q_nu'(.) (alpha * phi_{2t})(x)`` up to the quadrature, so
    ``ell * phi_{2t}(2R) <= S' <= L * phi_{2t}(0)``.
    """
    ell, L = quantile_derivative_bounds(nu)
    k = HeatKernel(2.0 * t)
    return float(ell * k.pdf(2.0 * R)), float(L * k.pdf(0.0))


def t_kernel_bounds(nu: AnalyticDistribution, R: float, t: float = 1.0) -> tuple[float, float]:
    """``(eps_T(R), delta_T(R))`` for ``|x|, |y| <= R``."""
    ell, L = quantile_derivative_bounds(nu)
    k = HeatKernel(2.0 * t)
    return float(ell * k.pdf(2.0 * R)), float(L * k.pdf(0.0))
