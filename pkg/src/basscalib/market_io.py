"""Market quotes to marginals, irreducible approximations, and artifact files."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from . import __version__
from .errors import DataError, DomainError, ParseError, VerificationError
from .measures import (
    DiscreteMeasure,
    Measure,
    Mixture,
    QuantileGrid,
    Uniform,
    as_measure,
    measure_from_dict,
    measure_to_dict,
    mixture_of,
    quantize,
)

ARTIFACT_FORMAT = 1


# ---------------------------------------------------------------------------
# quotes
# ---------------------------------------------------------------------------


@dataclass
class QuoteSurface:
    """Undiscounted call prices per maturity."""

    quotes: dict[float, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    forwards: dict[float, float] = field(default_factory=dict)

    @property
    def maturities(self) -> list[float]:
        return sorted(self.quotes)

    def add(self, maturity: float, strikes, prices) -> None:
        K = np.asarray(strikes, dtype=float)
        C = np.asarray(prices, dtype=float)
        order = np.argsort(K, kind="stable")
        self.quotes[float(maturity)] = (K[order], C[order])

    def marginal(self, maturity: float, **kw) -> DiscreteMeasure:
        K, C = self.quotes[float(maturity)]
        return implied_marginal(K, C, forward=self.forwards.get(float(maturity)), **kw)

    def marginals(self, **kw) -> list[tuple[float, DiscreteMeasure]]:
        return [(T, self.marginal(T, **kw)) for T in self.maturities]


def read_quotes_csv(source) -> QuoteSurface:
    """Parse ``maturity,strike,price`` rows (UTF-8, decimal point)."""
    if isinstance(source, (str, Path)) and Path(source).exists():
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = str(source)
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip().lower() for c in rows[0]] != ["maturity", "strike", "price"]:
        raise DataError("quote file must start with the header maturity,strike,price")
    data: dict[float, list[tuple[float, float]]] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise DataError(f"line {lineno}: expected 3 fields", [lineno])
        try:
            T, K, C = (float(c) for c in row)
        except ValueError:
            raise DataError(f"line {lineno}: non-numeric field", [lineno]) from None
        if not all(math.isfinite(v) for v in (T, K, C)):
            raise DataError(f"line {lineno}: non-finite value", [lineno])
        data.setdefault(T, []).append((K, C))
    surf = QuoteSurface()
    for T, pairs in data.items():
        K, C = zip(*pairs)
        if len(set(K)) != len(K):
            raise DataError(f"maturity {T}: duplicate strikes", sorted({k for k in K if K.count(k) > 1}))
        surf.add(T, K, C)
    return surf


def _violations(K: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-strike arbitrage violation sizes (in slope units) and the slopes."""
    s = np.diff(C) / np.diff(K)
    v = np.zeros(K.size)
    # slopes in [-1, 0]
    v[:-1] = np.maximum(v[:-1], np.maximum(s, 0.0))
    v[1:] = np.maximum(v[1:], np.maximum(s, 0.0))
    v[:-1] = np.maximum(v[:-1], np.maximum(-1.0 - s, 0.0))
    v[1:] = np.maximum(v[1:], np.maximum(-1.0 - s, 0.0))
    # convexity: nondecreasing slopes, violation attributed to the middle strike
    v[1:-1] = np.maximum(v[1:-1], np.maximum(s[:-1] - s[1:], 0.0))
    v = np.maximum(v, np.maximum(-C, 0.0))
    return v, s


def repair_call_prices(K, C, tol: float = 1e-3) -> np.ndarray:
    """Least-squares projection of ``C`` onto convex, nonincreasing prices with
    slopes in ``[-1, 0]``; raises :class:`DataError` if any violation exceeds ``tol``."""
    K = np.asarray(K, dtype=float)
    C = np.asarray(C, dtype=float)
    v, _ = _violations(K, C)
    if np.all(v <= 0):
        return C.copy()
    if np.any(v > tol):
        bad = K[v > tol].tolist()
        raise DataError(f"call prices violate no-arbitrage at strikes {bad}", bad)
    h = np.diff(K)
    cons = [
        {"type": "ineq", "fun": lambda c: np.diff(np.diff(c) / h)},
        {"type": "ineq", "fun": lambda c: -np.diff(c) / h},
        {"type": "ineq", "fun": lambda c: np.diff(c) / h + 1.0},
        {"type": "ineq", "fun": lambda c: c},
    ]
    res = optimize.minimize(lambda c: 0.5 * np.sum((c - C) ** 2), C, jac=lambda c: c - C,
                            constraints=cons, method="SLSQP",
                            options={"ftol": 1e-15, "maxiter": 500})
    out = res.x
    v2, _ = _violations(K, out)
    if not res.success or np.any(v2 > 1e-9):
        raise DataError("call price repair failed", K[v2 > 1e-9].tolist())
    return out


def implied_marginal(strikes, prices, forward: float | None = None, tol: float = 1e-3,
                     mean_tol: float = 1e-8) -> DiscreteMeasure:
    """Terminal law implied by piecewise-linear call prices.

    Atoms sit on the strikes with masses given by the slope jumps; the mass
    below the first strike sits at the point that matches the forward (the
    first strike when ``forward`` is omitted) and the mass above the last
    strike at its conditional mean ``K_n + C(K_n) / m_n``.
    """
    K = np.asarray(strikes, dtype=float)
    C = np.asarray(prices, dtype=float)
    if K.size < 3 or K.shape != C.shape:
        raise DataError("need at least three strikes with one price each")
    order = np.argsort(K)
    K, C = K[order], C[order]
    if np.any(np.diff(K) <= 0):
        raise DataError("strikes must be distinct", K[np.r_[np.diff(K) <= 0, False]].tolist())
    C = repair_call_prices(K, C, tol)
    s = np.diff(C) / np.diff(K)
    s = np.clip(s, -1.0, 0.0)
    mass = np.empty(K.size)
    mass[0] = 1.0 + s[0]
    mass[1:-1] = np.diff(s)
    mass[-1] = -s[-1]
    mass = np.maximum(mass, 0.0)
    atoms = K.copy()
    if mass[-1] > 0 and C[-1] > 0:
        atoms[-1] = K[-1] + C[-1] / mass[-1]
    elif C[-1] > mean_tol:
        raise DataError("positive price beyond the last strike with no mass there", [K[-1]])
    implied_fwd = K[0] + C[0]
    if forward is not None:
        excess = implied_fwd - forward
        if excess < -mean_tol:
            raise DataError(f"prices below intrinsic value for forward {forward}", [K[0]])
        if excess > mean_tol:
            if mass[0] <= 0:
                raise DataError("forward needs mass below the first strike", [K[0]])
            atoms[0] = K[0] - excess / mass[0]
    total = mass.sum()
    if abs(total - 1.0) > 1e-9:
        raise DataError(f"implied masses sum to {total}", [])
    return DiscreteMeasure(atoms, mass / total)


# ---------------------------------------------------------------------------
# convex-order projection and approximating irreducible pairs
# ---------------------------------------------------------------------------


def _integrated_on(m: DiscreteMeasure, p: np.ndarray) -> np.ndarray:
    return np.asarray(m.integrated_quantile(p), dtype=float)


def convex_order_projection(mu, nu, mean_tol: float = 1e-9) -> DiscreteMeasure:
    """Closest law to ``mu`` (in W1 and W2) among laws dominated by ``nu`` in convex order.

    With ``G(p) = int_0^p Q``, the projection has quantile
    ``Q_mu + d/dp conc(G_nu - G_mu)``, where ``conc`` is the least concave
    majorant; for step quantiles this is an upper hull on the merged breaks.
    """
    mu, nu = as_measure(mu), as_measure(nu)
    if not (mu.is_discrete and nu.is_discrete):
        raise DomainError("projection is implemented for discrete laws")
    if abs(mu.mean - nu.mean) > mean_tol:
        raise DomainError(f"means differ ({mu.mean} vs {nu.mean}); projection infeasible")
    p = np.unique(np.concatenate([[0.0], mu.cumulative, nu.cumulative, [1.0]]))
    p = p[(p >= 0) & (p <= 1)]
    p[-1] = 1.0
    D = _integrated_on(nu, p) - _integrated_on(mu, p)
    D[0] = 0.0
    D[-1] = 0.0
    hull = _upper_hull(p, D)
    H = np.interp(p, p[hull], D[hull])
    widths = np.diff(p)
    keep = widths > 0
    slope = np.diff(H)[keep] / widths[keep]
    mids = 0.5 * (p[:-1] + p[1:])[keep]
    q = np.asarray(mu.quantile(mids), dtype=float) + slope
    q = np.maximum.accumulate(q)
    return DiscreteMeasure(q, widths[keep])


def _upper_hull(x: np.ndarray, y: np.ndarray) -> list[int]:
    hull: list[int] = []
    for i in range(x.size):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return hull


@dataclass(frozen=True)
class ApproximatePair:
    mu_n: Measure
    nu_n: Measure
    mu_hat: DiscreteMeasure
    nu_hat: DiscreteMeasure
    radius: float
    weight: float

    def __iter__(self):
        yield self.mu_n
        yield self.nu_n

    @property
    def density_floor(self) -> float:
        return self.weight / (2.0 * self.radius)


def approximate_irreducible_pair(mu, nu, n: int, mu_cells: int | None = None) -> ApproximatePair:
    """Irreducible pair ``(mu_n, nu_n)`` close to ``(mu, nu)`` in W1.

    ``nu_hat`` is the n-point quantization of ``nu`` with radius
    ``R = max |supp nu_hat|``;
    ``nu_n = 1/(nR) Unif[-R, R] + (1 - 1/(nR)) nu_hat * Unif[-1/n, 1/n]`` and
    ``mu_n = 1/(nR) delta_0 + (1 - 1/(nR)) mu_hat`` with ``mu_hat`` the
    convex-order projection of ``mu`` below ``nu_hat``.  A continuous ``mu``
    is first quantized on ``mu_cells`` cells (a multiple of ``n``).
    """
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    n = int(n)
    mu, nu = as_measure(mu), as_measure(nu)
    nu_hat = quantize(nu, n)
    R = float(np.max(np.abs(nu_hat.atoms)))
    if not n * R > 1:
        raise DomainError(f"n * R_n = {n * R} must exceed 1")
    lam = 1.0 / (n * R)
    if not mu.is_discrete:
        m = mu_cells or n * max(1, math.ceil(4096 / n))
        mu = quantize(mu, m)
    mu_hat = convex_order_projection(mu, nu_hat)
    mollified = Mixture([Uniform(x - 1.0 / n, x + 1.0 / n) for x in nu_hat.atoms], nu_hat.weights)
    nu_n = Mixture([Uniform(-R, R), mollified], [lam, 1.0 - lam])
    mu_n = mixture_of([(lam, DiscreteMeasure([0.0])), (1.0 - lam, mu_hat)])
    return ApproximatePair(mu_n, nu_n, mu_hat, nu_hat, R, lam)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=False, allow_nan=False) + "\n"


def digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def atomic_write(path, data: str | bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": "\n"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class CalibrationArtifact:
    """Everything needed to rebuild and re-verify a calibrated model."""

    config: dict
    maturities: list[float]
    marginals: list[dict]
    intervals: list[dict]
    inputs_digest: str = ""
    version: str = __version__
    format: int = ARTIFACT_FORMAT

    def __post_init__(self):
        if not self.inputs_digest:
            self.inputs_digest = digest({"maturities": self.maturities, "marginals": self.marginals,
                                         "config": self.config})

    def to_dict(self) -> dict:
        return {
            "format": self.format,
            "version": self.version,
            "inputs_digest": self.inputs_digest,
            "config": self.config,
            "maturities": self.maturities,
            "marginals": self.marginals,
            "intervals": self.intervals,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationArtifact":
        missing = {"format", "version", "config", "maturities", "marginals", "intervals"} - set(d)
        if missing:
            raise ParseError(f"artifact is missing fields {sorted(missing)}")
        return cls(config=d["config"], maturities=list(d["maturities"]), marginals=list(d["marginals"]),
                   intervals=list(d["intervals"]), inputs_digest=d.get("inputs_digest", ""),
                   version=d["version"], format=int(d["format"]))

    # -- model round trip ---------------------------------------------------
    @classmethod
    def from_model(cls, model, config: dict | None = None) -> "CalibrationArtifact":
        from .bass_model import ComponentMaps

        intervals = []
        for i, maps in enumerate(model.intervals):
            tr = model.traces[i] if i < len(model.traces) else None
            entry = {"t": float(model.maturities[i + 1] - model.maturities[i]),
                     "nu": measure_to_dict(maps.nu)}
            if isinstance(maps, ComponentMaps):
                entry["kind"] = "components"
                entry["masses"] = [float(m) for m in maps.masses]
                entry["parts"] = [_maps_entry(p) for p in maps.parts]
            else:
                entry["kind"] = "single"
                entry.update(_maps_entry(maps))
            if tr is not None:
                entry["trace"] = tr.to_dict(timings=False)
            intervals.append(entry)
        return cls(config=dict(config or {}), maturities=[float(t) for t in model.maturities],
                   marginals=[measure_to_dict(m) for m in model.marginals], intervals=intervals)

    def to_model(self):
        from .bass_model import CalibratedBassModel, ComponentMaps
        from .fixedpoint import IterationTrace

        maps, traces = [], []
        for e in self.intervals:
            nu = measure_from_dict(e["nu"])
            if e.get("kind") == "components":
                parts = [_maps_from_entry(p, e["t"]) for p in e["parts"]]
                maps.append(ComponentMaps(parts, e["masses"], nu, e["t"]))
            else:
                maps.append(_maps_from_entry(e, e["t"], nu))
            traces.append(IterationTrace.from_dict(e["trace"]) if "trace" in e else None)
        marg = [measure_from_dict(m) for m in self.marginals]
        return CalibratedBassModel(np.array(self.maturities), marg, maps, traces, [])

    def verify(self, tol: float = 1e-8) -> list[float]:
        """Recompute every stored fixed-point residual; raise if any exceeds ``tol``."""
        from .fixedpoint import FixedPointProblem, SolverConfig, fixed_point_residual

        cfg = SolverConfig.from_dict(self.config.get("solver_config"))
        out = []
        for i, e in enumerate(self.intervals):
            entries = e["parts"] if e.get("kind") == "components" else [e]
            for part in entries:
                nu = measure_from_dict(part["nu"]) if "nu" in part else measure_from_dict(e["nu"])
                mu = DiscreteMeasure(part["x"], part["weights"])
                p = FixedPointProblem(mu, nu, e["t"], cfg)
                if p.n != len(part["y"]):
                    raise VerificationError(f"interval {i}: fixed point does not match mu")
                try:
                    r = fixed_point_residual(p, QuantileGrid(part["y"], p.weights))
                except Exception as exc:  # corrupted values can break the map itself
                    raise VerificationError(f"interval {i}: cannot evaluate fixed point ({exc})") from exc
                if not r <= tol:
                    raise VerificationError(f"interval {i}: stored fixed point has residual {r:.3e} > {tol:.1e}")
                out.append(r)
        return out


def _maps_entry(maps) -> dict:
    return {"x": [float(v) for v in maps.x], "weights": [float(v) for v in maps.weights],
            "y": [float(v) for v in maps.y], "nu": measure_to_dict(maps.nu)}


def _maps_from_entry(e: dict, t: float, nu=None):
    from .bass_model import TransportMaps

    nu = nu if nu is not None else measure_from_dict(e["nu"])
    return TransportMaps(np.array(e["y"]), np.array(e["weights"]), np.array(e["x"]), nu, float(t))


def save_artifact(artifact: CalibrationArtifact, path) -> str:
    text = artifact.to_json()
    atomic_write(path, text)
    return text


def load_artifact(path, verify: bool = True, tol: float = 1e-8) -> CalibrationArtifact:
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"artifact is not UTF-8: {exc.reason}", exc.start) from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ParseError(f"corrupt artifact at byte {offset}: {exc.msg}", offset) from None
    if not isinstance(d, dict):
        raise ParseError("artifact must be a JSON object", 0)
    try:
        art = CalibrationArtifact.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"malformed artifact: {exc}") from None
    if art.format != ARTIFACT_FORMAT:
        raise ParseError(f"unsupported artifact format {art.format}")
    if art.version != __version__:
        warnings.warn(f"artifact written by version {art.version}, running {__version__}", UserWarning,
                      stacklevel=2)
    if verify:
        art.verify(tol)
    return art
