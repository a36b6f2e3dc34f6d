"""Stretched Brownian motions built from computed fixed points, chained
across maturities into a Bass local-volatility model.

On an interval of length ``t`` with fixed point ``alpha = sum_j w_j delta_{y_j}``
the terminal map is ``f(b) = Q_nu(sum_j w_j Phi((b - y_j)/sqrt t))`` and the
martingale is ``M_s = f_s(B_s)`` with ``f_s = phi_{t-s} * f``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import AssumptionViolation, DomainError
from .fixedpoint import (
    FixedPointProblem,
    IterationTrace,
    SolverConfig,
    fixed_point_residual,
    iterate,
)
from .gauss_kernel import GH_NODES, hermite_rule, norm_cdf
from .measures import (
    AnalyticDistribution,
    DiscreteMeasure,
    Measure,
    QuantileGrid,
    Restricted,
    convex_order_leq,
    irreducible_components,
    ks_distance,
    quantize,
)

log = logging.getLogger(__name__)

TABLE_POINTS = 2048
TABLE_PAD_SD = 8.0
PATH_BLOCK = 8192
RNG_NAME = "Philox4x64-10"
BINARY_MAGIC = b"BASSPATH"


def rng_version() -> str:
    return f"numpy-{np.__version__}/{RNG_NAME}/block-{PATH_BLOCK}"


def block_generator(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


@dataclass(eq=False)
class TransportMaps:
    """``alpha``, ``f`` and ``f_s`` for one interval of length ``t``.

    ``y`` is aligned with the atoms ``x`` of ``mu`` (equal values kept as
    separate cells), so ``f_0(y_i) = x_i``.
    """

    y: np.ndarray
    weights: np.ndarray
    x: np.ndarray
    nu: AnalyticDistribution
    t: float = 1.0
    nodes: int = GH_NODES
    terminal: Callable | None = None
    _tables: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.cumulative = np.cumsum(self.weights)
        self.cumulative[-1] = 1.0

    @property
    def alpha(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.y, self.weights)

    @property
    def mu(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.x, self.weights)

    def rank(self, b):
        """``(alpha * gamma_t)`` CDF, i.e. the law of ``B`` at the interval end."""
        b = np.asarray(b, dtype=float)
        return norm_cdf((b[..., None] - self.y) / math.sqrt(self.t)) @ self.weights

    def f(self, b):
        b = np.asarray(b, dtype=float)
        if self.terminal is not None:
            return self.terminal(b)
        return self.nu.quantile(np.clip(self.rank(b), 0.0, 1.0))

    def f_direct(self, s: float, b):
        """``f_s(b) = E f(b + sqrt(t - s) Z)`` by Gauss-Hermite."""
        if not 0.0 <= s <= self.t:
            raise DomainError(f"time {s} outside [0, {self.t}]")
        v = self.t - s
        b = np.asarray(b, dtype=float)
        if v <= 0.0:
            return self.f(b)
        z, w = hermite_rule(self.nodes)
        return self.f(b[..., None] + math.sqrt(v) * z) @ w

    def table(self, s: float) -> tuple[float, float, PchipInterpolator]:
        if s not in self._tables:
            sd = math.sqrt(self.t)
            lo = self.y[0] - TABLE_PAD_SD * sd
            hi = self.y[-1] + TABLE_PAD_SD * sd
            grid = np.linspace(lo, hi, TABLE_POINTS)
            vals = np.maximum.accumulate(self.f_direct(s, grid))
            self._tables[s] = (lo, hi, PchipInterpolator(grid, vals, extrapolate=False))
        return self._tables[s]

    def f_at(self, s: float, b):
        """``f_s`` through a monotone cubic table, direct evaluation off-grid."""
        b = np.asarray(b, dtype=float)
        if s >= self.t:
            return self.f(b)
        lo, hi, interp = self.table(s)
        out = np.empty_like(b)
        inside = (b >= lo) & (b <= hi)
        out[inside] = interp(b[inside])
        if np.any(~inside):
            out[~inside] = self.f_direct(s, b[~inside])
        return out

    def pushforward_ks(self, m: int = 20001) -> float:
        """KS distance of ``f`` applied to stratified quantiles of ``alpha * gamma_t`` from ``nu``."""
        u = (np.arange(m) + 0.5) / m
        sd = math.sqrt(self.t)
        lo = np.full(m, self.y[0] - 40 * sd)
        hi = np.full(m, self.y[-1] + 40 * sd)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            below = self.rank(mid) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        pts = self.f(0.5 * (lo + hi))
        return ks_distance(pts, self.nu)

    # -- simulation interface ------------------------------------------------
    def start(self, u):
        k = np.minimum(np.searchsorted(self.cumulative, u, side="right"), self.y.size - 1)
        return np.zeros(k.shape, dtype=np.intp), self.y[k], self.x[k]

    def value(self, s, label, b):
        return self.f_at(s, b)

    def finish(self, label, b):
        u = np.clip(self.rank(b), 0.0, 1.0)
        if self.terminal is not None:
            return self.terminal(b), u
        return self.nu.quantile(u), u


@dataclass(eq=False)
class ComponentMaps:
    """Independent maps on each irreducible component of a reducible pair."""

    parts: list[TransportMaps]
    masses: np.ndarray
    nu: AnalyticDistribution
    t: float = 1.0

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=float)
        self.x = np.concatenate([p.x for p in self.parts])
        self.weights = np.concatenate([m * p.weights for m, p in zip(self.masses, self.parts)])
        self.labels = np.concatenate([np.full(p.x.size, k) for k, p in enumerate(self.parts)])
        self.local = np.concatenate([np.arange(p.x.size) for p in self.parts])
        self.cumulative = np.cumsum(self.weights)
        self.cumulative[-1] = 1.0

    @property
    def mu(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.x, self.weights)

    def start(self, u):
        k = np.minimum(np.searchsorted(self.cumulative, u, side="right"), self.x.size - 1)
        lab = self.labels[k]
        b = np.array([self.parts[l].y[j] for l, j in zip(lab, self.local[k])]) if k.size else np.zeros(0)
        return lab, b, self.x[k]

    def _by_label(self, label, fn):
        out = np.empty(label.shape, dtype=float)
        for l, p in enumerate(self.parts):
            sel = label == l
            if np.any(sel):
                out[sel] = fn(p, sel)
        return out

    def value(self, s, label, b):
        return self._by_label(label, lambda p, sel: p.f_at(s, b[sel]))

    def finish(self, label, b):
        m = self._by_label(label, lambda p, sel: p.f(b[sel]))
        return m, np.clip(self.nu.cdf(m), 0.0, 1.0)


def build_maps(p: FixedPointProblem, alpha, check_tol: float | None = None) -> TransportMaps:
    """Transport maps of a converged fixed point ``alpha`` (state on mu's cells)."""
    if isinstance(alpha, DiscreteMeasure):
        alpha = QuantileGrid.from_measure(alpha)
    if not isinstance(alpha, QuantileGrid) or alpha.values.size != p.n:
        raise DomainError("alpha must be a state on the cells of mu")
    tol = max(100 * p.config.atol, 1e-8) if check_tol is None else check_tol
    r = fixed_point_residual(p, alpha)
    if r > tol:
        raise DomainError(f"alpha is not a fixed point (residual {r:.3e} > {tol:.1e})")
    return TransportMaps(alpha.values, p.weights, p.x, p.nu, p.t, p.config.gh_nodes)


@dataclass(frozen=True)
class CalibrationConfig:
    solver: str = "fixed-point"
    componentwise: bool = False
    solver_config: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.solver not in ("fixed-point", "newton"):
            raise DomainError("solver is 'fixed-point' or 'newton'")


@dataclass(eq=False)
class CalibratedBassModel:
    maturities: np.ndarray
    marginals: list[Measure]
    intervals: list
    traces: list[IterationTrace | None]
    problems: list[FixedPointProblem]

    def maturity_law(self, i: int) -> Measure:
        """Law of ``M`` at the i-th maturity as realized by the model."""
        if i == 0:
            return self.intervals[0].mu
        return self.marginals[i]


def _solve_interval(p: FixedPointProblem, cfg: CalibrationConfig):
    if cfg.solver == "newton":
        from .semidiscrete import SemidiscreteSystem

        p.check_assumptions()
        sys = SemidiscreteSystem(p.mu, p.nu, p.t, p.config)
        y, rep = sys.solve_newton()
        return QuantileGrid(y, p.weights), None
    return iterate(p)


def calibrate_bass_lv(marginals: Sequence[tuple[float, Measure]],
                      config: CalibrationConfig | None = None) -> CalibratedBassModel:
    cfg = config or CalibrationConfig()
    if len(marginals) < 2:
        raise DomainError("need at least two maturities")
    T = np.array([float(t) for t, _ in marginals])
    if np.any(np.diff(T) <= 0):
        raise DomainError("maturities must be strictly increasing")
    laws = [m for _, m in marginals]
    for i in range(len(laws) - 1):
        if not convex_order_leq(laws[i], laws[i + 1], cfg.solver_config.order_tol):
            raise AssumptionViolation(f"marginals {i} and {i + 1} (T={T[i]}, T={T[i + 1]}) are not in convex order")
        if not isinstance(laws[i + 1], AnalyticDistribution):
            raise DomainError(f"marginal {i + 1} must be absolutely continuous")
    intervals, traces, problems = [], [], []
    for i in range(len(laws) - 1):
        mu = laws[i]
        if not isinstance(mu, DiscreteMeasure):
            mu = quantize(mu, cfg.solver_config.grid_size)
        nu = laws[i + 1]
        dt = T[i + 1] - T[i]
        p = FixedPointProblem(mu, nu, dt, cfg.solver_config)
        comps = irreducible_components(p.mu, nu, cfg.solver_config.order_tol)
        irreducible = len(comps) == 1 and comps[0].mu_mass >= 1 - 1e-9
        if irreducible or not cfg.componentwise:
            Q, tr = _solve_interval(p, cfg)
            intervals.append(build_maps(p, Q))
            traces.append(tr)
        else:
            intervals.append(_componentwise(p, comps, cfg))
            traces.append(None)
        problems.append(p)
        log.info("interval %d calibrated", i)
    return CalibratedBassModel(T, laws, intervals, traces, problems)


def _componentwise(p: FixedPointProblem, comps, cfg: CalibrationConfig) -> ComponentMaps:
    parts, masses = [], []
    covered = 0
    for c in comps:
        sel = c.contains(p.x)
        if not np.any(sel):
            continue
        w = p.weights[sel]
        mass = float(w.sum())
        sub_mu = DiscreteMeasure(p.x[sel], w / mass)
        sub_nu = Restricted(p.nu, max(c.left, p.nu.support()[0]), min(c.right, p.nu.support()[1]))
        sp = FixedPointProblem(sub_mu, sub_nu, p.t, p.config)
        Q, _ = _solve_interval(sp, cfg)
        parts.append(build_maps(sp, Q))
        masses.append(mass)
        covered += int(sel.sum())
    if covered != p.n:
        raise AssumptionViolation("some atoms of mu sit on a component boundary (mass not transported)")
    return ComponentMaps(parts, masses, p.nu, p.t)


@dataclass
class PathBatch:
    seed: int
    n_paths: int
    times: np.ndarray
    values: np.ndarray
    maturities: np.ndarray
    rng: str = field(default_factory=rng_version)

    SUMMARY_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)

    def column(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-12:
            raise DomainError(f"time {t} is not on the grid")
        return self.values[:, k]

    def summary_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        qs = [f"q{int(round(100 * q)):02d}" for q in self.SUMMARY_QUANTILES]
        w.writerow(["time", "mean", "stdev"] + qs)
        for k, t in enumerate(self.times):
            col = self.values[:, k]
            row = [t, col.mean(), col.std(ddof=1) if col.size > 1 else 0.0]
            row += list(np.quantile(col, self.SUMMARY_QUANTILES))
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    def to_bytes(self) -> bytes:
        n, L = self.values.shape
        head = BINARY_MAGIC + struct.pack("<QQ", n, L)
        return head + np.ascontiguousarray(self.values, dtype="<f8").tobytes(order="C")

    def dump(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @staticmethod
    def load_values(source) -> np.ndarray:
        data = source if isinstance(source, (bytes, bytearray)) else open(source, "rb").read()
        if data[:8] != BINARY_MAGIC:
            raise DomainError("not a path dump")
        n, L = struct.unpack("<QQ", data[8:24])
        return np.frombuffer(data[24:], dtype="<f8").reshape(n, L).copy()


def _as_model(model) -> CalibratedBassModel:
    if isinstance(model, CalibratedBassModel):
        return model
    if isinstance(model, (TransportMaps, ComponentMaps)):
        return CalibratedBassModel(np.array([0.0, model.t]), [model.mu, model.nu], [model], [None], [])
    raise TypeError(f"cannot simulate {type(model).__name__}")


def simulate(model, n_paths: int, grid: Sequence[float] | None = None, seed: int = 0) -> PathBatch:
    """Simulate ``M`` on ``grid`` (maturities are always included)."""
    model = _as_model(model)
    T = model.maturities
    if grid is not None and len(grid) == 0:
        raise DomainError("empty time grid")
    if n_paths < 1:
        raise DomainError("need at least one path")
    times = np.unique(np.concatenate([T, np.asarray([] if grid is None else grid, dtype=float)]))
    if times[0] < T[0] - 1e-12 or times[-1] > T[-1] + 1e-12:
        raise DomainError("grid must lie within the calibrated maturities")
    values = np.empty((n_paths, times.size))
    for blk, start in enumerate(range(0, n_paths, PATH_BLOCK)):
        m = min(PATH_BLOCK, n_paths - start)
        values[start:start + m] = _simulate_block(model, times, m, block_generator(seed, blk))
    return PathBatch(int(seed), int(n_paths), times, values, T.copy())


def _simulate_block(model: CalibratedBassModel, times, m, rng) -> np.ndarray:
    T = model.maturities
    out = np.empty((m, times.size))
    u = rng.random(m)
    k = 0
    for i, maps in enumerate(model.intervals):
        # the column at T_i already holds the previous block's terminal value
        label, b, start_value = maps.start(u)
        if i == 0:
            out[:, 0] = start_value
        t_prev = T[i]
        k += 1
        while times[k] < T[i + 1] - 1e-14:
            b = b + math.sqrt(times[k] - t_prev) * rng.standard_normal(m)
            out[:, k] = maps.value(times[k] - T[i], label, b)
            t_prev = times[k]
            k += 1
        b = b + math.sqrt(T[i + 1] - t_prev) * rng.standard_normal(m)
        out[:, k], u = maps.finish(label, b)
    return out


@dataclass
class DiagnosticsReport:
    n_paths: int
    ks: dict[float, float]
    ks_threshold: float
    drift: float
    drift_stderr: float
    max_gap_ratio: float
    gap_table: list[dict] = field(default_factory=list)
    gap_limit: float = 4.0

    @property
    def marginals_ok(self) -> bool:
        return all(v <= self.ks_threshold for v in self.ks.values())

    @property
    def martingale_ok(self) -> bool:
        return self.max_gap_ratio <= self.gap_limit

    @property
    def drift_ok(self) -> bool:
        return abs(self.drift) <= 3 * self.drift_stderr + 1e-12

    @property
    def passed(self) -> bool:
        return self.marginals_ok and self.martingale_ok and self.drift_ok

    def to_dict(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "ks": {repr(float(k)): v for k, v in self.ks.items()},
            "ks_threshold": self.ks_threshold,
            "drift": self.drift,
            "drift_stderr": self.drift_stderr,
            "max_gap_ratio": self.max_gap_ratio,
            "gap_limit": self.gap_limit,
            "marginals_ok": self.marginals_ok,
            "martingale_ok": self.martingale_ok,
            "drift_ok": self.drift_ok,
            "passed": self.passed,
        }


def decile_gaps(m_t: np.ndarray, m_end: np.ndarray, bins: int = 10) -> list[dict]:
    """``E[M_end - M_t | M_t in bin]`` over equal-count bins of ``M_t``,
    with the standard error of the within-bin mean."""
    order = np.argsort(m_t, kind="stable")
    rows = []
    for k, idx in enumerate(np.array_split(order, bins)):
        d = m_end[idx] - m_t[idx]
        se = float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0
        gap = float(d.mean())
        rows.append({"bin": k, "count": int(d.size), "gap": gap, "stderr": se,
                     "ratio": abs(gap) / se if se > 0 else (0.0 if abs(gap) < 1e-12 else math.inf)})
    return rows


def martingale_diagnostics(batch: PathBatch, model: CalibratedBassModel | None = None,
                           marginals: dict[float, Measure] | None = None,
                           ks_constant: float = 1.95, gap_limit: float = 4.0) -> DiagnosticsReport:
    """Marginal KS per maturity, overall drift and decile conditional-mean gaps.

    Gaps are measured within each interval, between every grid time and the
    interval's terminal maturity.
    """
    laws = dict(marginals or {})
    if model is not None:
        model = _as_model(model)
        for i, t in enumerate(model.maturities):
            laws.setdefault(float(t), model.maturity_law(i))
    n = batch.n_paths
    ks = {float(t): ks_distance(batch.column(t), law) for t, law in sorted(laws.items())}
    first, last = batch.values[:, 0], batch.values[:, -1]
    d = last - first
    drift = float(d.mean())
    drift_se = float(d.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    table = []
    T = batch.maturities
    for i in range(T.size - 1):
        end = batch.column(T[i + 1])
        for k, t in enumerate(batch.times):
            if T[i] - 1e-14 <= t < T[i + 1] - 1e-14:
                for row in decile_gaps(batch.values[:, k], end):
                    table.append({"time": float(t), "maturity": float(T[i + 1]), **row})
    worst = max((r["ratio"] for r in table), default=0.0)
    return DiagnosticsReport(n, ks, ks_constant / math.sqrt(n), drift, drift_se, float(worst), table, gap_limit)
