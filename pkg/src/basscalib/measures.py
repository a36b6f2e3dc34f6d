"""Probability measures on the real line.

Every measure exposes the same small interface: ``cdf``, ``cdf_left``,
``quantile``, ``mean``, ``put`` (the integrated CDF, ``E[(x - Y)^+]``),
``potential`` and ``support``.  Discrete measures additionally carry
``atoms`` and ``weights``.

Besides the families themselves this module holds the one-dimensional
diagnostics used throughout the package: quantization by cell means,
convex-order and irreducibility checks via potential functions, and the
Wasserstein / Kolmogorov distances.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import special

from .errors import DomainError

WEIGHT_SUM_TOL = 1e-12
MERGE_RTOL = 1e-12
POTENTIAL_FILL_POINTS = 512


def _arr(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


class Measure:
    """Common interface; subclasses implement the primitive methods."""

    is_discrete = False

    def cdf(self, x):
        raise NotImplementedError

    def cdf_left(self, x):
        return self.cdf(x)

    def quantile(self, u):
        raise NotImplementedError

    @property
    def mean(self) -> float:
        raise NotImplementedError

    def put(self, x):
        """``E[(x - Y)^+] = int_{-inf}^x F(t) dt``."""
        raise NotImplementedError

    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    def breakpoints(self) -> np.ndarray:
        lo, hi = self.support()
        return _arr([v for v in (lo, hi) if np.isfinite(v)])

    def potential(self, x):
        """``u(x) = int |x - y| dxi(y)``."""
        x = _arr(x)
        return 2.0 * self.put(x) - (x - self.mean)

    def integrated_quantile(self, p):
        """``int_0^p Q(u) du``, exact for every law via ``p Q(p) - put(Q(p))``."""
        p = _arr(p)
        out = np.empty_like(p)
        lo = p <= 0.0
        hi = p >= 1.0
        mid = ~(lo | hi)
        out[lo] = 0.0
        out[hi] = self.mean
        if np.any(mid):
            q = _arr(self.quantile(p[mid]))
            out[mid] = p[mid] * q - self.put(q)
        return out

    def finite_range(self, eps: float = 1e-12) -> tuple[float, float]:
        lo, hi = self.support()
        if not np.isfinite(lo):
            lo = float(self.quantile(eps))
        if not np.isfinite(hi):
            hi = float(self.quantile(1.0 - eps))
        return float(lo), float(hi)

    def to_dict(self) -> dict:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# discrete laws
# ---------------------------------------------------------------------------


class DiscreteMeasure(Measure):
    """Finitely supported law ``sum_j w_j delta_{x_j}``.

    Atoms are sorted and near-duplicates merged on construction, so two
    measures that differ only by atom ordering compare equal.
    """

    is_discrete = True

    def __init__(self, atoms: Sequence[float], weights: Sequence[float] | None = None):
        x = _arr(atoms).reshape(-1)
        if x.size == 0:
            raise DomainError("a discrete measure needs at least one atom")
        w = np.full(x.size, 1.0 / x.size) if weights is None else _arr(weights).reshape(-1)
        if w.shape != x.shape:
            raise DomainError("atoms and weights differ in length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
            raise DomainError("atoms and weights must be finite")
        if np.any(w < 0):
            raise DomainError("weights must be nonnegative")
        total = w.sum()
        if abs(total - 1.0) > WEIGHT_SUM_TOL * max(1, x.size):
            raise DomainError(f"weights sum to {total!r}, expected 1")
        keep = w > 0
        x, w = x[keep], w[keep]
        order = np.argsort(x, kind="stable")
        x, w = x[order], w[order]
        # merge near-coincident atoms
        merged_x, merged_w = [x[0]], [w[0]]
        for xi, wi in zip(x[1:], w[1:]):
            if abs(xi - merged_x[-1]) <= MERGE_RTOL * max(1.0, abs(xi)):
                tot = merged_w[-1] + wi
                merged_x[-1] = (merged_x[-1] * merged_w[-1] + xi * wi) / tot
                merged_w[-1] = tot
            else:
                merged_x.append(xi)
                merged_w.append(wi)
        self.atoms = np.array(merged_x)
        self.weights = np.array(merged_w) / np.sum(merged_w)
        self.atoms.flags.writeable = False
        self.weights.flags.writeable = False
        cum = np.cumsum(self.weights)
        cum[-1] = 1.0
        self._cum = cum
        self._cum_xw = np.cumsum(self.atoms * self.weights)

    def __len__(self) -> int:
        return self.atoms.size

    def __repr__(self) -> str:
        return f"DiscreteMeasure(n={len(self)}, mean={self.mean:.6g})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return np.array_equal(self.atoms, other.atoms) and np.array_equal(
            self.weights, other.weights
        )

    __hash__ = None

    @property
    def cumulative(self) -> np.ndarray:
        """Cumulative weights ``p_{j+1} = w_1 + ... + w_j``."""
        return self._cum.copy()

    @property
    def mean(self) -> float:
        return float(self.atoms @ self.weights)

    @property
    def variance(self) -> float:
        return float(((self.atoms - self.mean) ** 2) @ self.weights)

    def cdf(self, x):
        k = np.searchsorted(self.atoms, _arr(x), side="right")
        return np.where(k > 0, self._cum[np.maximum(k - 1, 0)], 0.0)

    def cdf_left(self, x):
        k = np.searchsorted(self.atoms, _arr(x), side="left")
        return np.where(k > 0, self._cum[np.maximum(k - 1, 0)], 0.0)

    def quantile(self, u):
        u = _arr(u)
        k = np.searchsorted(self._cum, u, side="left")
        return self.atoms[np.clip(k, 0, self.atoms.size - 1)]

    def put(self, x):
        x = _arr(x)
        k = np.searchsorted(self.atoms, x, side="right")
        idx = np.maximum(k - 1, 0)
        F = np.where(k > 0, self._cum[idx], 0.0)
        S = np.where(k > 0, self._cum_xw[idx], 0.0)
        return np.maximum(x * F - S, 0.0)

    def integrated_quantile(self, p):
        p = _arr(p)
        k = np.searchsorted(self._cum, p, side="left")
        k = np.clip(k, 0, self.atoms.size - 1)
        prev_cum = np.where(k > 0, self._cum[np.maximum(k - 1, 0)], 0.0)
        prev_xw = np.where(k > 0, self._cum_xw[np.maximum(k - 1, 0)], 0.0)
        out = prev_xw + (np.clip(p, 0, 1) - prev_cum) * self.atoms[k]
        return np.where(p <= 0, 0.0, np.where(p >= 1, self.mean, out))

    def support(self) -> tuple[float, float]:
        return float(self.atoms[0]), float(self.atoms[-1])

    def breakpoints(self) -> np.ndarray:
        return self.atoms.copy()

    def shifted(self, c: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.atoms + c, self.weights)

    def to_dict(self) -> dict:
        return {
            "type": "discrete",
            "atoms": [float(v) for v in self.atoms],
            "weights": [float(v) for v in self.weights],
        }

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["atom", "weight"])
        for a, w in zip(self.atoms, self.weights):
            writer.writerow([repr(float(a)), repr(float(w))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, source: str | Path) -> "DiscreteMeasure":
        """Read a two-column ``atom,weight`` table from a path or CSV text."""
        if isinstance(source, Path) or ("\n" not in str(source) and Path(source).exists()):
            text = Path(source).read_text(encoding="utf-8")
        else:
            text = str(source)
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if rows and not _is_number(rows[0][0]):
            rows = rows[1:]
        atoms = [float(r[0]) for r in rows]
        weights = [float(r[1]) for r in rows]
        return cls(atoms, weights)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


class PointMass(DiscreteMeasure):
    def __init__(self, value: float):
        super().__init__([value], [1.0])
        self.value = float(value)

    def __repr__(self) -> str:
        return f"PointMass({self.value!r})"

    def to_dict(self) -> dict:
        return {"type": "point", "value": self.value}


# ---------------------------------------------------------------------------
# absolutely continuous families
# ---------------------------------------------------------------------------


class AnalyticDistribution(Measure):
    """Closed-form family with a density."""

    def pdf(self, x):
        raise NotImplementedError

    def quantile_derivative(self, u):
        """``Q'(u) = 1 / f(Q(u))``."""
        return 1.0 / self.pdf(self.quantile(u))

    def density_bounds(self, n: int = 4097) -> tuple[float, float]:
        """(inf, sup) of the density over the closed support hull."""
        lo, hi = self.finite_range()
        x = np.linspace(lo, hi, n)
        f = self.pdf(x)
        return float(f.min()), float(f.max())


@dataclass(frozen=True, eq=True)
class Uniform(AnalyticDistribution):
    lower: float
    upper: float

    def __post_init__(self):
        if not self.upper > self.lower:
            raise DomainError("uniform needs lower < upper")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def mean(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def cdf(self, x):
        return np.clip((_arr(x) - self.lower) / self.width, 0.0, 1.0)

    def pdf(self, x):
        x = _arr(x)
        return np.where((x >= self.lower) & (x <= self.upper), 1.0 / self.width, 0.0)

    def quantile(self, u):
        return self.lower + _arr(u) * self.width

    def quantile_derivative(self, u):
        return np.full_like(_arr(u), self.width)

    def put(self, x):
        x = _arr(x)
        inside = (x - self.lower) ** 2 / (2 * self.width)
        return np.where(x <= self.lower, 0.0, np.where(x >= self.upper, x - self.mean, inside))

    def support(self):
        return float(self.lower), float(self.upper)

    def density_bounds(self, n: int = 0):
        return 1.0 / self.width, 1.0 / self.width

    def to_dict(self):
        return {"type": "uniform", "lower": float(self.lower), "upper": float(self.upper)}


@dataclass(frozen=True, eq=True)
class Normal(AnalyticDistribution):
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise DomainError("scale must be positive")

    @property
    def mean(self):
        return float(self.loc)

    def cdf(self, x):
        return special.ndtr((_arr(x) - self.loc) / self.scale)

    def pdf(self, x):
        z = (_arr(x) - self.loc) / self.scale
        return np.exp(-0.5 * z * z) / (self.scale * math.sqrt(2 * math.pi))

    def quantile(self, u):
        return self.loc + self.scale * special.ndtri(_arr(u))

    def put(self, x):
        d = (_arr(x) - self.loc) / self.scale
        return self.scale * (d * special.ndtr(d) + np.exp(-0.5 * d * d) / math.sqrt(2 * math.pi))

    def support(self):
        return -math.inf, math.inf

    def to_dict(self):
        return {"type": "normal", "loc": float(self.loc), "scale": float(self.scale)}


@dataclass(frozen=True, eq=True)
class Logistic(AnalyticDistribution):
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise DomainError("scale must be positive")

    @property
    def mean(self):
        return float(self.loc)

    def cdf(self, x):
        return special.expit((_arr(x) - self.loc) / self.scale)

    def pdf(self, x):
        z = (_arr(x) - self.loc) / self.scale
        e = special.expit(z)
        return e * (1 - e) / self.scale

    def quantile(self, u):
        return self.loc + self.scale * special.logit(_arr(u))

    def put(self, x):
        return self.scale * np.logaddexp(0.0, (_arr(x) - self.loc) / self.scale)

    def support(self):
        return -math.inf, math.inf

    def to_dict(self):
        return {"type": "logistic", "loc": float(self.loc), "scale": float(self.scale)}


@dataclass(frozen=True, eq=True)
class TruncatedNormal(AnalyticDistribution):
    loc: float
    scale: float
    lower: float
    upper: float

    def __post_init__(self):
        if not self.scale > 0:
            raise DomainError("scale must be positive")
        if not self.upper > self.lower:
            raise DomainError("truncation needs lower < upper")
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise DomainError("truncation bounds must be finite")

    @property
    def _ab(self):
        return (self.lower - self.loc) / self.scale, (self.upper - self.loc) / self.scale

    @property
    def _mass(self) -> float:
        a, b = self._ab
        return float(special.ndtr(b) - special.ndtr(a))

    @property
    def mean(self) -> float:
        a, b = self._ab
        return float(self.loc + self.scale * (_npdf(a) - _npdf(b)) / self._mass)

    @property
    def variance(self) -> float:
        a, b = self._ab
        Z = self._mass
        t = (a * _npdf(a) - b * _npdf(b)) / Z
        s = (_npdf(a) - _npdf(b)) / Z
        return float(self.scale**2 * (1 + t - s * s))

    def cdf(self, x):
        a, _ = self._ab
        xi = (np.clip(_arr(x), self.lower, self.upper) - self.loc) / self.scale
        return np.clip((special.ndtr(xi) - special.ndtr(a)) / self._mass, 0.0, 1.0)

    def pdf(self, x):
        x = _arr(x)
        xi = (x - self.loc) / self.scale
        f = _npdf(xi) / (self.scale * self._mass)
        return np.where((x >= self.lower) & (x <= self.upper), f, 0.0)

    def quantile(self, u):
        a, _ = self._ab
        p = special.ndtr(a) + _arr(u) * self._mass
        return np.clip(self.loc + self.scale * special.ndtri(p), self.lower, self.upper)

    def quantile_derivative(self, u):
        xi = (self.quantile(u) - self.loc) / self.scale
        return self.scale * self._mass / _npdf(xi)

    def put(self, x):
        x = _arr(x)
        a, _ = self._ab
        xc = np.clip(x, self.lower, self.upper)
        xi = (xc - self.loc) / self.scale
        Fa = special.ndtr(a)
        part = (self.loc * (special.ndtr(xi) - Fa) - self.scale * (_npdf(xi) - _npdf(a))) / self._mass
        inside = xc * self.cdf(xc) - part
        return np.where(x <= self.lower, 0.0, np.where(x >= self.upper, x - self.mean, np.maximum(inside, 0.0)))

    def support(self):
        return float(self.lower), float(self.upper)

    def density_bounds(self, n: int = 0):
        ends = self.pdf(_arr([self.lower, self.upper]))
        mode = float(np.clip(self.loc, self.lower, self.upper))
        return float(ends.min()), float(self.pdf(mode))

    def to_dict(self):
        return {
            "type": "trunc_normal",
            "loc": float(self.loc),
            "scale": float(self.scale),
            "lower": float(self.lower),
            "upper": float(self.upper),
        }


def _npdf(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


class Mixture(AnalyticDistribution):
    """Finite mixture.  Components may be any measures; ``pdf`` requires all
    of them to be absolutely continuous."""

    def __init__(self, components: Sequence[Measure], weights: Sequence[float]):
        w = _arr(weights).reshape(-1)
        if len(components) != w.size or w.size == 0:
            raise DomainError("components and weights differ in length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("mixture weights must be nonnegative and sum to 1")
        keep = w > 0
        self.components = tuple(c for c, k in zip(components, keep) if k)
        self.weights = w[keep] / w[keep].sum()
        self.is_discrete = all(c.is_discrete for c in self.components)

    def __repr__(self):
        return f"Mixture({list(self.components)!r}, {self.weights.tolist()!r})"

    def __eq__(self, other):
        if not isinstance(other, Mixture):
            return NotImplemented
        return self.components == other.components and np.array_equal(self.weights, other.weights)

    __hash__ = None

    @property
    def mean(self):
        return float(sum(w * c.mean for c, w in zip(self.components, self.weights)))

    def _sum(self, method, x):
        x = _arr(x)
        return sum(w * getattr(c, method)(x) for c, w in zip(self.components, self.weights))

    def cdf(self, x):
        return self._sum("cdf", x)

    def cdf_left(self, x):
        return self._sum("cdf_left", x)

    def pdf(self, x):
        if any(c.is_discrete for c in self.components):
            raise DomainError("mixture has atoms; no density")
        return self._sum("pdf", x)

    def put(self, x):
        return self._sum("put", x)

    def quantile(self, u):
        u = _arr(u)
        qs = np.stack([_arr(c.quantile(u)) for c in self.components])
        lo, hi = qs.min(axis=0), qs.max(axis=0)
        # bisection on the generalized inverse: smallest x with F(x) >= u
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            ok = self.cdf(mid) >= u
            hi = np.where(ok, mid, hi)
            lo = np.where(ok, lo, mid)
            if np.all(hi - lo <= 4e-16 * np.maximum(1.0, np.abs(hi))):
                break
        return hi

    def support(self):
        s = [c.support() for c in self.components]
        return min(a for a, _ in s), max(b for _, b in s)

    def breakpoints(self):
        return np.unique(np.concatenate([c.breakpoints() for c in self.components]))

    def density_bounds(self, n: int = 8193):
        lo, hi = self.finite_range()
        x = np.union1d(np.linspace(lo, hi, n), self.breakpoints())
        # one-sided limits at internal kinks
        eps = 1e-12 * max(1.0, hi - lo)
        x = np.clip(np.concatenate([x, x - eps, x + eps]), lo, hi)
        f = self.pdf(x)
        return float(f.min()), float(f.max())

    def to_dict(self):
        return {
            "type": "mixture",
            "weights": [float(w) for w in self.weights],
            "components": [c.to_dict() for c in self.components],
        }


class Restricted(AnalyticDistribution):
    """Conditional law of an absolutely continuous ``base`` given ``[lower, upper]``."""

    def __init__(self, base: AnalyticDistribution, lower: float, upper: float):
        if not upper > lower:
            raise DomainError("restriction needs lower < upper")
        self.base = base
        self.lower = float(lower)
        self.upper = float(upper)
        self._F_lo = float(base.cdf(lower))
        self._mass = float(base.cdf(upper)) - self._F_lo
        if self._mass <= 0:
            raise DomainError("restriction interval carries no mass")
        self._P_lo = float(base.put(lower))

    def __repr__(self):
        return f"Restricted({self.base!r}, {self.lower}, {self.upper})"

    @property
    def mass(self) -> float:
        return self._mass

    @property
    def mean(self):
        hi = self.upper
        # E[Y; lo < Y <= hi] via the integrated CDF
        part = (hi * self.base.cdf(hi) - self.base.put(hi)) - (self.lower * self._F_lo - self._P_lo)
        return float(part / self._mass)

    def cdf(self, x):
        x = np.clip(_arr(x), self.lower, self.upper)
        return np.clip((self.base.cdf(x) - self._F_lo) / self._mass, 0.0, 1.0)

    def pdf(self, x):
        x = _arr(x)
        return np.where((x >= self.lower) & (x <= self.upper), self.base.pdf(x) / self._mass, 0.0)

    def quantile(self, u):
        q = self.base.quantile(self._F_lo + _arr(u) * self._mass)
        return np.clip(q, self.lower, self.upper)

    def put(self, x):
        x = _arr(x)
        xc = np.clip(x, self.lower, self.upper)
        inside = (self.base.put(xc) - self._P_lo - (xc - self.lower) * self._F_lo) / self._mass
        return np.where(x >= self.upper, x - self.mean, np.maximum(inside, 0.0))

    def support(self):
        return self.lower, self.upper

    def to_dict(self):
        return {"type": "restricted", "base": self.base.to_dict(), "lower": self.lower, "upper": self.upper}


# ---------------------------------------------------------------------------
# quantile-function states
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QuantileGrid:
    """Step quantile function: value ``values[k]`` on the k-th cell of (0, 1).

    Cells have widths ``weights`` (equal widths give the midpoint grid
    ``u_k = (k - 1/2) / m``).  Unlike :class:`DiscreteMeasure` equal values
    are kept as separate cells, which is what the fixed-point iteration needs.
    """

    values: np.ndarray
    weights: np.ndarray = field(default=None)
    interpolation: str = "step"

    def __post_init__(self):
        v = _arr(self.values).reshape(-1).copy()
        w = np.full(v.size, 1.0 / v.size) if self.weights is None else _arr(self.weights).reshape(-1).copy()
        if v.size == 0 or v.shape != w.shape:
            raise DomainError("values and weights must be non-empty and equally long")
        if not np.all(np.isfinite(v)):
            raise DomainError("quantile values must be finite")
        if np.any(w <= 0) or abs(w.sum() - 1) > WEIGHT_SUM_TOL * max(1, w.size):
            raise DomainError("cell weights must be positive and sum to 1")
        if np.any(np.diff(v) < -1e-12 * max(1.0, float(np.abs(v).max()))):
            raise DomainError("quantile values must be nondecreasing")
        if self.interpolation not in ("step", "linear"):
            raise DomainError("interpolation is 'step' or 'linear'")
        v.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.values.size

    @property
    def breaks(self) -> np.ndarray:
        """Cell boundaries ``0 = p_1 < ... < p_{m+1} = 1``."""
        b = np.concatenate([[0.0], np.cumsum(self.weights)])
        b[-1] = 1.0
        return b

    @property
    def nodes(self) -> np.ndarray:
        b = self.breaks
        return 0.5 * (b[:-1] + b[1:])

    @property
    def mean(self) -> float:
        return float(self.values @ self.weights)

    def quantile(self, u):
        u = _arr(u)
        if self.interpolation == "linear" and self.values.size > 1:
            return np.interp(u, self.nodes, self.values)
        k = np.searchsorted(self.breaks[1:-1], u, side="right")
        return self.values[k]

    def shifted(self, c: float) -> "QuantileGrid":
        return QuantileGrid(self.values + c, self.weights, self.interpolation)

    def with_values(self, values) -> "QuantileGrid":
        return QuantileGrid(values, self.weights, self.interpolation)

    def to_measure(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.values, self.weights)

    @classmethod
    def from_measure(cls, m: DiscreteMeasure) -> "QuantileGrid":
        return cls(m.atoms, m.weights)

    @classmethod
    def from_distribution(cls, dist: Measure, m: int) -> "QuantileGrid":
        u = (np.arange(1, m + 1) - 0.5) / m
        return cls(_arr(dist.quantile(u)))


def as_measure(obj) -> Measure:
    if isinstance(obj, QuantileGrid):
        return obj.to_measure()
    if isinstance(obj, Measure):
        return obj
    raise TypeError(f"not a measure: {type(obj).__name__}")


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------


def quantize(dist: Measure, n: int) -> DiscreteMeasure:
    """Cell-mean quantization ``(1/n) sum_i delta_{x_i}``.

    ``x_i = n * int_{(i-1)/n}^{i/n} Q(u) du``; the result is dominated by
    ``dist`` in convex order.
    """
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    n = int(n)
    if not np.isfinite(dist.mean):
        raise DomainError("quantization needs a finite first moment")
    p = np.arange(n + 1) / n
    G = _arr(dist.integrated_quantile(p))
    if not np.all(np.isfinite(G)):
        raise DomainError("quantile function is not integrable")
    x = n * np.diff(G)
    # cancellation can break monotonicity by a few ulps
    x = np.maximum.accumulate(x)
    return DiscreteMeasure(x, np.full(n, 1.0 / n))


# ---------------------------------------------------------------------------
# potentials, convex order, irreducibility
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PotentialFunction:
    """``u(x) = int |x - y| xi(dy)`` with the kink list for discrete laws."""

    measure: Measure

    def __call__(self, x):
        return self.measure.potential(x)

    @property
    def breakpoints(self) -> np.ndarray:
        return self.measure.breakpoints()


def _potential_grid(mu: Measure, nu: Measure, fill: int = POTENTIAL_FILL_POINTS) -> np.ndarray:
    lo = min(mu.finite_range()[0], nu.finite_range()[0])
    hi = max(mu.finite_range()[1], nu.finite_range()[1])
    pad = 0.05 * (hi - lo) + 1e-6
    pts = [mu.breakpoints(), nu.breakpoints(), np.linspace(lo - pad, hi + pad, fill)]
    grid = np.unique(np.concatenate(pts))

    # between consecutive atoms a < b of a discrete mu the gap u_nu - u_mu is
    # convex with slope 2 F_nu(x) - 2 F_mu(a): it is smallest at Q_nu(F_mu(a))
    if mu.is_discrete:
        atoms = np.unique(mu.breakpoints())
        if atoms.size > 1:
            a, b = atoms[:-1], atoms[1:]
            p = np.clip(_arr(mu.cdf(a)), 0.0, 1.0)
            inner = (p > 0) & (p < 1)
            x = np.clip(_arr(nu.quantile(np.where(inner, p, 0.5))), a, b)
            grid = np.unique(np.concatenate([grid, x[inner]]))
    return grid


def convex_order_leq(mu, nu, tol: float = 1e-9) -> bool:
    """``mu <=_c nu`` via equal means and ``u_mu <= u_nu + tol`` on a covering grid."""
    mu, nu = as_measure(mu), as_measure(nu)
    if abs(mu.mean - nu.mean) > tol:
        return False
    grid = _potential_grid(mu, nu)
    return bool(np.all(mu.potential(grid) <= nu.potential(grid) + tol))


@dataclass(frozen=True)
class Component:
    """Open interval on which ``u_nu > u_mu``, with the masses it carries."""

    left: float
    right: float
    mu_mass: float
    nu_mass: float

    def contains(self, x) -> np.ndarray:
        x = _arr(x)
        return (x > self.left) & (x < self.right)


def irreducible_components(mu, nu, tol: float = 1e-9) -> list[Component]:
    """Maximal open intervals where the potential of ``nu`` strictly exceeds
    that of ``mu``.  The pair is irreducible iff a single component carries
    all of ``mu``."""
    mu, nu = as_measure(mu), as_measure(nu)
    if not convex_order_leq(mu, nu, tol):
        raise DomainError("irreducible components need mu <=_c nu")
    grid = _potential_grid(mu, nu)
    gap = nu.potential(grid) - mu.potential(grid)
    pos = gap > tol
    comps = []
    k = 0
    n = grid.size
    while k < n:
        if not pos[k]:
            k += 1
            continue
        start = k
        while k < n and pos[k]:
            k += 1
        left = grid[start - 1] if start > 0 else -math.inf
        right = grid[k] if k < n else math.inf
        mu_mass = float(mu.cdf_left(right) - mu.cdf(left))
        nu_mass = float(nu.cdf(right) - nu.cdf_left(left))
        comps.append(Component(float(left), float(right), mu_mass, nu_mass))
    return comps


def is_irreducible(mu, nu, tol: float = 1e-9) -> bool:
    comps = irreducible_components(mu, nu, tol)
    return len(comps) == 1 and comps[0].mu_mass >= 1 - 1e-9


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------


def _cells(m) -> tuple[np.ndarray, np.ndarray] | None:
    """(breaks, values) for step quantile functions, None for continuous laws."""
    if isinstance(m, QuantileGrid):
        return m.breaks, m.values
    if isinstance(m, DiscreteMeasure):
        return np.concatenate([[0.0], m.cumulative]), m.atoms
    return None


def _quantile_difference_extremes(a, b, dense: int = 4096) -> np.ndarray:
    """Values of ``Q_a - Q_b`` at both ends of every cell of the common refinement."""
    ca, cb = _cells(a), _cells(b)
    for m in (a, b):
        if not isinstance(m, QuantileGrid):
            lo, hi = m.support()
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise DomainError("W-infinity needs compact supports")
    pieces = [np.array([0.0, 1.0])]
    for c in (ca, cb):
        if c is not None:
            pieces.append(c[0])
    if ca is None and cb is None:
        pieces.append(np.linspace(0, 1, dense + 1))
    br = np.unique(np.clip(np.concatenate(pieces), 0, 1))

    def limits(m, c):
        if c is not None:
            mids = 0.5 * (br[:-1] + br[1:])
            k = np.searchsorted(c[0][1:-1], mids, side="right")
            v = c[1][k]
            return v, v
        lo, hi = m.support()
        left = np.where(br[:-1] <= 0, lo, m.quantile(br[:-1]))
        right = np.where(br[1:] >= 1, hi, m.quantile(br[1:]))
        return _arr(left), _arr(right)

    al, ar = limits(a, ca)
    bl, br_ = limits(b, cb)
    return np.concatenate([al - bl, ar - br_])


def w_infinity(a, b) -> float:
    """``ess sup_u |Q_a(u) - Q_b(u)|`` (comonotone coupling)."""
    d = _quantile_difference_extremes(a, b)
    return float(np.max(np.abs(d)))


def w_infinity_mod_shift(a, b) -> tuple[float, float]:
    """``min_c ||Q_a - Q_b - c||_inf`` and the minimizing ``c``."""
    d = _quantile_difference_extremes(a, b)
    hi, lo = float(d.max()), float(d.min())
    return 0.5 * (hi - lo), 0.5 * (hi + lo)


def w1_distance(a, b, fill: int = 40001) -> float:
    """``int |F_a - F_b| dx``; exact for two discrete laws."""
    a, b = as_measure(a), as_measure(b)
    if a.is_discrete and b.is_discrete:
        x = np.union1d(a.breakpoints(), b.breakpoints())
        diff = np.abs(a.cdf(x[:-1]) - b.cdf(x[:-1]))
        return float(diff @ np.diff(x))
    lo = min(a.finite_range(1e-14)[0], b.finite_range(1e-14)[0])
    hi = max(a.finite_range(1e-14)[1], b.finite_range(1e-14)[1])
    x = np.unique(np.concatenate([np.linspace(lo, hi, fill), a.breakpoints(), b.breakpoints()]))
    x = x[(x >= lo) & (x <= hi)]
    mids = 0.5 * (x[:-1] + x[1:])
    # Simpson on each cell; discrete CDFs are constant inside cells by construction
    fm = np.abs(a.cdf_left(mids) - b.cdf_left(mids))
    fl = np.abs(a.cdf(x[:-1]) - b.cdf(x[:-1]))
    fr = np.abs(a.cdf_left(x[1:]) - b.cdf_left(x[1:]))
    return float(np.sum(np.diff(x) * (fl + 4 * fm + fr) / 6.0))


def ks_distance(sample, dist: Measure) -> float:
    """Sup-distance between the empirical CDF of ``sample`` and ``dist``."""
    s = np.sort(_arr(sample).reshape(-1))
    if s.size == 0:
        raise DomainError("empty sample")
    pts = s
    if dist.is_discrete:
        pts = np.union1d(s, dist.breakpoints())
    n = s.size
    Fn = np.searchsorted(s, pts, side="right") / n
    Fn_left = np.searchsorted(s, pts, side="left") / n
    right = np.abs(Fn - dist.cdf(pts))
    left = np.abs(Fn_left - dist.cdf_left(pts))
    return float(max(right.max(), left.max()))


def symmetry_center(m, tol: float = 1e-9) -> float | None:
    """Center ``c`` with ``Q(u) + Q(1-u) = 2c``, or None if not symmetric."""
    if isinstance(m, QuantileGrid):
        v, w = m.values, m.weights
        if not np.allclose(w, w[::-1], rtol=0, atol=1e-14):
            return None
        s = v + v[::-1]
        c = 0.5 * float(s.mean())
        return c if np.max(np.abs(s - 2 * c)) <= tol else None
    if isinstance(m, DiscreteMeasure):
        return symmetry_center(QuantileGrid.from_measure(m), tol)
    u = np.linspace(1e-6, 0.5, 257)
    s = _arr(m.quantile(u)) + _arr(m.quantile(1 - u))
    c = 0.5 * float(np.median(s))
    return c if np.max(np.abs(s - 2 * c)) <= tol * max(1.0, abs(c)) + 1e-12 else None


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def measure_from_dict(d: dict) -> Measure:
    kind = d.get("type")
    if kind == "discrete":
        return DiscreteMeasure(d["atoms"], d.get("weights"))
    if kind == "point":
        return PointMass(d["value"])
    if kind == "uniform":
        return Uniform(float(d["lower"]), float(d["upper"]))
    if kind == "trunc_normal":
        return TruncatedNormal(float(d["loc"]), float(d["scale"]), float(d["lower"]), float(d["upper"]))
    if kind == "normal":
        return Normal(float(d.get("loc", 0.0)), float(d.get("scale", 1.0)))
    if kind == "logistic":
        return Logistic(float(d.get("loc", 0.0)), float(d.get("scale", 1.0)))
    if kind == "mixture":
        return Mixture([measure_from_dict(c) for c in d["components"]], d["weights"])
    if kind == "restricted":
        return Restricted(measure_from_dict(d["base"]), float(d["lower"]), float(d["upper"]))
    raise DomainError(f"unknown measure type {kind!r}")


def measure_to_dict(m) -> dict:
    return as_measure(m).to_dict()


def mixture_of(parts: Iterable[tuple[float, Measure]]) -> Measure:
    """Mixture that collapses to a DiscreteMeasure when every part is discrete."""
    parts = [(float(w), m) for w, m in parts if w > 0]
    if all(m.is_discrete for _, m in parts):
        atoms = np.concatenate([m.atoms for _, m in parts])
        weights = np.concatenate([w * m.weights for w, m in parts])
        return DiscreteMeasure(atoms, weights / weights.sum())
    return Mixture([m for _, m in parts], [w for w, _ in parts])
