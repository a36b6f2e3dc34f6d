"""The quantile-space operator ``G Q = S_Q^{-1} o Q_mu`` and its iteration.

States are step quantile functions on the cells of the (discrete) initial
law ``mu``; the fixed point is unique up to translation, so every iterate is
re-centred to zero mean before the next step.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AssumptionViolation, DomainError, EllipticityError, NonConvergence, RangeError
from .gauss_kernel import GH_NODES, ROOT_RTOL, SMap
from .measures import (
    AnalyticDistribution,
    DiscreteMeasure,
    Measure,
    QuantileGrid,
    convex_order_leq,
    irreducible_components,
    quantize,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    gh_nodes: int = GH_NODES
    root_rtol: float = ROOT_RTOL
    atol: float = 1e-10
    max_iters: int = 10_000
    grid_size: int = 200
    order_tol: float = 1e-9
    check_irreducible: bool = True

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict | None) -> "SolverConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise DomainError(f"unknown solver options {sorted(unknown)}")
        return cls(**d)


class FixedPointProblem:
    """Marginals ``(mu, nu)`` and the convolution variance ``t``.

    A continuous ``mu`` is replaced by its ``config.grid_size``-cell
    quantization, which stays below ``nu`` in convex order.
    """

    def __init__(self, mu: Measure, nu: AnalyticDistribution, t: float = 1.0,
                 config: SolverConfig | None = None):
        if not t > 0:
            raise DomainError("variance t must be positive")
        if not isinstance(nu, AnalyticDistribution):
            raise DomainError("nu must be an absolutely continuous law")
        self.config = config or SolverConfig()
        self.source_mu = mu
        if isinstance(mu, QuantileGrid):
            mu = mu.to_measure()
        if not isinstance(mu, DiscreteMeasure):
            mu = quantize(mu, self.config.grid_size)
        self.mu = mu
        self.nu = nu
        self.t = float(t)

    def __repr__(self):
        return f"FixedPointProblem(mu={self.mu!r}, nu={self.nu!r}, t={self.t})"

    @property
    def x(self) -> np.ndarray:
        return self.mu.atoms

    @property
    def weights(self) -> np.ndarray:
        return self.mu.weights

    @property
    def n(self) -> int:
        return self.mu.atoms.size

    def initial_state(self) -> QuantileGrid:
        return QuantileGrid(self.mu.atoms, self.mu.weights)

    def smap(self, Q) -> SMap:
        return SMap(Q, self.nu, self.t, self.config.gh_nodes, self.config.root_rtol)

    def check_assumptions(self, check_irreducible: bool | None = None, warn_only: bool = False) -> None:
        """Raise :class:`AssumptionViolation` unless the pair is admissible."""
        lo, hi = self.nu.support()
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise AssumptionViolation("nu must have compact support")
        fmin, _ = self.nu.density_bounds()
        if not fmin > 0:
            raise AssumptionViolation("density of nu must be bounded below on its support hull")
        if self.x[0] <= lo or self.x[-1] >= hi:
            raise RangeError(f"support of mu [{self.x[0]}, {self.x[-1]}] is not inside ({lo}, {hi})")
        tol = self.config.order_tol
        if not convex_order_leq(self.mu, self.nu, tol):
            raise AssumptionViolation("mu is not dominated by nu in convex order")
        if check_irreducible is None:
            check_irreducible = self.config.check_irreducible
        if check_irreducible:
            comps = irreducible_components(self.mu, self.nu, tol)
            if not (len(comps) == 1 and comps[0].mu_mass >= 1 - 1e-9):
                msg = f"pair is not irreducible: {len(comps)} component(s)"
                if warn_only:
                    warnings.warn(msg, RuntimeWarning, stacklevel=2)
                else:
                    raise AssumptionViolation(msg)


def _as_state(p: FixedPointProblem, Q) -> QuantileGrid:
    if isinstance(Q, QuantileGrid):
        return Q
    if isinstance(Q, DiscreteMeasure):
        return QuantileGrid.from_measure(Q)
    v = np.asarray(Q, dtype=float)
    if v.shape != (p.n,):
        raise DomainError(f"state needs {p.n} values, got shape {v.shape}")
    return QuantileGrid(v, p.weights)


def apply_G(p: FixedPointProblem, Q, x0=None) -> QuantileGrid:
    """``(G Q)_i = S_Q^{-1}(x_i)`` on the cells of ``mu``."""
    Q = _as_state(p, Q)
    S = p.smap(Q)
    y = S.invert(p.x, x0=x0)
    # S is strictly increasing so y is sorted; rounding can still swap ties
    y = np.maximum.accumulate(y)
    return QuantileGrid(y, p.weights)


def apply_A(p: FixedPointProblem, F, x=None):
    """CDF form ``(A F)(x) = F_mu(S_Q(x))``; without ``x`` returns the law."""
    Q = _as_state(p, F)
    if x is None:
        return apply_G(p, Q).to_measure()
    return p.mu.cdf(p.smap(Q).eval(x))


def _gauge(Q: QuantileGrid) -> tuple[QuantileGrid, float]:
    c = -Q.mean
    return Q.shifted(c), c


def _osc(d: np.ndarray) -> float:
    return 0.5 * float(d.max() - d.min())


@dataclass
class IterationRecord:
    iteration: int
    residual: float
    shift_residual: float
    rate: float
    shift: float
    seconds: float
    distance_to_final: float = float("nan")


@dataclass
class IterationTrace:
    records: list[IterationRecord] = field(default_factory=list)
    iterates: list[QuantileGrid] = field(default_factory=list)
    converged: bool = False

    def __len__(self):
        return len(self.records)

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def shift_residuals(self) -> np.ndarray:
        return np.array([r.shift_residual for r in self.records])

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r.residual for r in self.records])

    @property
    def rates(self) -> np.ndarray:
        return np.array([r.rate for r in self.records])

    def iterations_to(self, tol: float) -> int | None:
        """First iteration count whose shift-minimized residual is ``<= tol``."""
        for r in self.records:
            if r.shift_residual <= tol:
                return r.iteration
        return None

    def fitted_rate(self, last: int = 8, floor: float = 1e-13) -> float:
        """Per-iteration factor from a log-linear fit of the shift residuals.

        Residuals below ``floor`` are rounding noise and are ignored.
        """
        r = self.shift_residuals
        k = np.arange(1, r.size + 1)
        keep = r > floor
        r, k = r[keep][-last:], k[keep][-last:]
        if r.size < 2:
            return 0.0
        slope = np.polyfit(k, np.log(r), 1)[0]
        return float(math.exp(slope))

    def finalize(self) -> None:
        if not self.iterates:
            return
        last = self.iterates[-1].values
        for rec, Q in zip(self.records, self.iterates):
            rec.distance_to_final = _osc(Q.values - last)

    COLUMNS = ("iteration", "residual", "shift_residual", "rate", "shift", "seconds", "distance_to_final")

    def to_csv(self, path=None, timings: bool = True) -> str:
        cols = self.COLUMNS if timings else tuple(c for c in self.COLUMNS if c != "seconds")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.records:
            w.writerow([r.iteration] + [repr(float(getattr(r, c))) for c in cols[1:]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    def to_dict(self, timings: bool = True) -> dict:
        cols = self.COLUMNS if timings else tuple(c for c in self.COLUMNS if c != "seconds")
        return {
            "converged": self.converged,
            "records": [{c: _jsonable(getattr(r, c)) for c in cols} for r in self.records],
        }

    def to_json(self, path=None, timings: bool = True) -> str:
        text = json.dumps(self.to_dict(timings), sort_keys=True, indent=1)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "IterationTrace":
        recs = []
        for r in d.get("records", []):
            vals = {c: (float(r[c]) if r.get(c) is not None else float("nan"))
                    for c in cls.COLUMNS if c != "iteration"}
            vals.setdefault("seconds", float("nan"))
            recs.append(IterationRecord(iteration=int(r["iteration"]), **vals))
        return cls(records=recs, converged=bool(d.get("converged", False)))


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def iterate(p: FixedPointProblem, Q0=None, atol: float | None = None, max_iters: int | None = None,
            check_irreducible: bool | None = None, warn_only: bool = False,
            keep_iterates: bool = True) -> tuple[QuantileGrid, IterationTrace]:
    """Iterate ``G`` from ``Q0`` (default ``Q_mu``) until the shift-minimized
    residual ``min_c ||G Q - Q - c||_inf`` drops to ``atol``."""
    atol = p.config.atol if atol is None else atol
    max_iters = p.config.max_iters if max_iters is None else max_iters
    p.check_assumptions(check_irreducible, warn_only)
    Q, _ = _gauge(_as_state(p, p.initial_state() if Q0 is None else Q0))
    if Q.weights.shape != p.weights.shape or not np.allclose(Q.weights, p.weights, atol=1e-14):
        # re-express the initial quantile on the cells of mu
        Q, _ = _gauge(QuantileGrid(Q.quantile(p.initial_state().nodes), p.weights))
    trace = IterationTrace()
    prev_r = float("nan")
    for k in range(1, max_iters + 1):
        t0 = time.perf_counter()
        raw = apply_G(p, Q, x0=Q.values)
        Qn, c = _gauge(raw)
        d = raw.values - Q.values
        r = _osc(d)
        rate = r / prev_r if prev_r > 0 else float("nan")
        trace.records.append(IterationRecord(k, float(np.max(np.abs(d))), r, rate, c,
                                             time.perf_counter() - t0))
        if keep_iterates:
            trace.iterates.append(Qn)
        log.debug("iteration %d shift residual %.3e", k, r)
        Q, prev_r = Qn, r
        if r <= atol:
            trace.converged = True
            if not keep_iterates:
                trace.iterates.append(Qn)
            trace.finalize()
            return Q, trace
    if not keep_iterates:
        trace.iterates.append(Q)
    trace.finalize()
    raise NonConvergence(f"no convergence in {max_iters} iterations (residual {prev_r:.3e})", trace)


def fixed_point_residual(p: FixedPointProblem, Q) -> float:
    """Shift-minimized ``||G Q - Q||_inf``."""
    Q = _as_state(p, Q)
    return _osc(apply_G(p, Q, x0=Q.values).values - Q.values)


@dataclass(frozen=True)
class DerivativeDensity:
    """``D[i, j]``: density in ``v`` of the derivative of ``(G Q)_i`` in ``Q(v_j)``."""

    matrix: np.ndarray
    weights: np.ndarray
    eps: float
    delta: float

    @property
    def row_integrals(self) -> np.ndarray:
        return self.matrix @ self.weights

    def apply(self, f) -> np.ndarray:
        """Directional derivative ``D_Q G (f)``."""
        return self.matrix @ (self.weights * np.asarray(f, dtype=float))


def derivative_density(p: FixedPointProblem, Q) -> DerivativeDensity:
    Q = _as_state(p, Q)
    S = p.smap(Q)
    y = apply_G(p, Q, x0=Q.values).values
    T = S.t_matrix(y, Q.values)
    D = T / S.derivative(y)[:, None]
    return DerivativeDensity(D, Q.weights.copy(), float(D.min()), float(D.max()))


def contraction_bound(d: DerivativeDensity | tuple[float, float]) -> float:
    eps, delta = (d.eps, d.delta) if isinstance(d, DerivativeDensity) else d
    if not eps > 0:
        raise EllipticityError(f"derivative density is not bounded away from zero (eps={eps})")
    return (eps + delta) / (2 * eps + delta)


def oscillation_bound(d: DerivativeDensity) -> float:
    """``1 - sum_j w_j min_i D[i, j]``: the local factor for the oscillation seminorm."""
    return float(1.0 - d.weights @ d.matrix.min(axis=0))


def support_hull_measure(Q) -> float:
    v = Q.values if isinstance(Q, QuantileGrid) else np.asarray(Q.atoms)
    return float(v[-1] - v[0])


def with_config(p: FixedPointProblem, **changes) -> FixedPointProblem:
    return FixedPointProblem(p.source_mu, p.nu, p.t, replace(p.config, **changes))
