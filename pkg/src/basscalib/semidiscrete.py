"""Newton solver for the semidiscrete system ``S_y(y_i) = x_i``.

For ``mu = sum_i w_i delta_{x_i}`` the fixed point is the law
``sum_j w_j delta_{y_j}`` where ``y`` solves ``n`` equations in ``n``
unknowns.  The system is translation invariant (``J 1 = 0``), so the gauge
``sum_j w_j y_j = 0`` is appended as an extra row.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericError
from .fixedpoint import FixedPointProblem, SolverConfig, apply_G
from .gauss_kernel import SMap
from .measures import AnalyticDistribution, DiscreteMeasure, QuantileGrid, symmetry_center

MAX_HALVINGS = 30
# quadrature error makes the n equations slightly incompatible (the shift
# direction is lost), so the residual can floor out above atol; below this
# level a stalled line search is reported as stagnation instead of an error
STAGNATION_TOL = 1e-9


@dataclass(frozen=True)
class NewtonOptions:
    atol: float = 1e-12
    max_iters: int = 50
    max_halvings: int = MAX_HALVINGS


@dataclass
class NewtonReport:
    iterations: int
    residual_norm: float
    residual_history: list[float] = field(default_factory=list)
    step_lengths: list[float] = field(default_factory=list)
    singular_values: list[float] = field(default_factory=list)
    stagnated: bool = False

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "stagnated": self.stagnated,
            "residual_norm": self.residual_norm,
            "residual_history": list(self.residual_history),
            "step_lengths": list(self.step_lengths),
            "singular_values": list(self.singular_values),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


class SemidiscreteSystem:
    def __init__(self, mu: DiscreteMeasure, nu: AnalyticDistribution, t: float = 1.0,
                 config: SolverConfig | None = None):
        if not isinstance(mu, DiscreteMeasure):
            raise DomainError("the semidiscrete system needs a discrete mu")
        self.problem = FixedPointProblem(mu, nu, t, config)
        self.mu = mu
        self.nu = nu
        self.t = float(t)

    @property
    def x(self) -> np.ndarray:
        return self.mu.atoms

    @property
    def w(self) -> np.ndarray:
        return self.mu.weights

    @property
    def n(self) -> int:
        return self.x.size

    def _smap(self, y) -> SMap:
        return self.problem.smap(QuantileGrid(np.asarray(y, dtype=float), self.w))

    def residual(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self._smap(y).eval(y) - self.x

    def jacobian(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        S = self._smap(y)
        J = -S.t_matrix(y, y) * self.w[None, :]
        J[np.diag_indices_from(J)] += S.derivative(y)
        return J

    def initial_guess(self) -> np.ndarray:
        y = apply_G(self.problem, self.problem.initial_state()).values
        return y - y @ self.w

    def solve_newton(self, y0=None, opts: NewtonOptions | None = None) -> tuple[np.ndarray, NewtonReport]:
        opts = opts or NewtonOptions()
        y = self.initial_guess() if y0 is None else np.asarray(y0, dtype=float).copy()
        if y.shape != (self.n,):
            raise DomainError(f"y0 must have {self.n} entries")
        if np.any(np.diff(y) < 0):
            raise DomainError("y0 must be nondecreasing")
        y = y - y @ self.w
        R = self.residual(y)
        rn = float(np.max(np.abs(R)))
        report = NewtonReport(0, rn, [rn])
        while rn > opts.atol:
            if report.iterations >= opts.max_iters:
                raise NumericError(f"Newton did not converge in {opts.max_iters} steps (|R|={rn:.3e})")
            A = np.vstack([self.jacobian(y), self.w[None, :]])
            sv = np.linalg.svd(A, compute_uv=False)
            if not sv[-1] > 1e-14 * sv[0]:
                raise NumericError("augmented Jacobian is singular")
            b = np.concatenate([-R, [-(y @ self.w)]])
            step = np.linalg.lstsq(A, b, rcond=None)[0]
            lam = 1.0
            for _ in range(opts.max_halvings + 1):
                cand = y + lam * step
                if np.all(np.diff(cand) >= 0):
                    Rc = self.residual(cand)
                    rc = float(np.max(np.abs(Rc)))
                    if rc < rn:
                        break
                lam *= 0.5
            else:
                if rn <= STAGNATION_TOL:
                    report.stagnated = True
                    break
                raise NumericError("line search failed to reduce the residual")
            y, R, rn = cand, Rc, rc
            report.iterations += 1
            report.residual_history.append(rn)
            report.step_lengths.append(lam)
        report.residual_norm = rn
        report.singular_values = np.linalg.svd(self.jacobian(y), compute_uv=False).tolist()
        return y, report

    def symmetry_reduce(self, tol: float = 1e-10) -> "ReducedSystem":
        return ReducedSystem(self, tol)


class ReducedSystem:
    """Symmetric pair: unknowns ``y_1..y_m``, ``m = floor(n/2)``, with
    ``y_{n+1-i} = -y_i`` and a zero middle atom for odd ``n``."""

    def __init__(self, full: SemidiscreteSystem, tol: float = 1e-10):
        cm = symmetry_center(full.mu, tol)
        cn = symmetry_center(full.nu, 1e-8)
        if cm is None or cn is None:
            raise DomainError("symmetry reduction needs symmetric mu and nu")
        if abs(cm - cn) > 1e-8 * max(1.0, abs(cm)):
            raise DomainError("mu and nu are symmetric about different centers")
        self.full = full
        self.m = full.n // 2

    def expand(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        mid = [0.0] if self.full.n % 2 else []
        return np.concatenate([z, mid, -z[::-1]])

    def residual(self, z) -> np.ndarray:
        return self.full.residual(self.expand(z))[: self.m]

    def jacobian(self, z) -> np.ndarray:
        J = self.full.jacobian(self.expand(z))[: self.m]
        n = self.full.n
        return J[:, : self.m] - J[:, n - 1: n - 1 - self.m: -1]

    def solve(self, z0=None, opts: NewtonOptions | None = None) -> tuple[np.ndarray, NewtonReport]:
        opts = opts or NewtonOptions()
        if self.m == 0:
            return self.expand(np.zeros(0)), NewtonReport(0, float(np.max(np.abs(self.full.residual([0.0])))))
        z = self.full.initial_guess()[: self.m] if z0 is None else np.asarray(z0, dtype=float)
        z = np.minimum(z, 0.0)
        R = self.residual(z)
        rn = float(np.max(np.abs(R)))
        report = NewtonReport(0, rn, [rn])
        while rn > opts.atol:
            if report.iterations >= opts.max_iters:
                raise NumericError("reduced Newton did not converge")
            step = np.linalg.solve(self.jacobian(z), -R)
            lam = 1.0
            for _ in range(opts.max_halvings + 1):
                cand = z + lam * step
                if np.all(np.diff(self.expand(cand)) >= 0):
                    Rc = self.residual(cand)
                    rc = float(np.max(np.abs(Rc)))
                    if rc < rn:
                        break
                lam *= 0.5
            else:
                if rn <= STAGNATION_TOL:
                    report.stagnated = True
                    break
                raise NumericError("line search failed to reduce the residual")
            z, R, rn = cand, Rc, rc
            report.iterations += 1
            report.residual_history.append(rn)
            report.step_lengths.append(lam)
        y = self.expand(z)
        report.residual_norm = float(np.max(np.abs(self.full.residual(y))))
        return y, report


def residual(sys: SemidiscreteSystem, y) -> np.ndarray:
    return sys.residual(y)


def jacobian(sys: SemidiscreteSystem, y) -> np.ndarray:
    return sys.jacobian(y)


def solve_newton(sys: SemidiscreteSystem, y0=None, opts: NewtonOptions | None = None):
    y, rep = sys.solve_newton(y0, opts)
    return y, rep.iterations, rep.residual_norm


def symmetry_reduce(sys: SemidiscreteSystem) -> ReducedSystem:
    return sys.symmetry_reduce()


def solve_measure(mu: DiscreteMeasure, nu: AnalyticDistribution, t: float = 1.0,
                  opts: NewtonOptions | None = None) -> QuantileGrid:
    sys = SemidiscreteSystem(mu, nu, t)
    y, _ = sys.solve_newton(opts=opts)
    return QuantileGrid(y, mu.weights)


def second_smallest_singular_value(J: np.ndarray) -> float:
    sv = np.linalg.svd(J, compute_uv=False)
    return float(sv[-2]) if sv.size > 1 else math.inf
