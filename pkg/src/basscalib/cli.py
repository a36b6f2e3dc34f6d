"""Command-line front end: ``python -m basscalib {calibrate,sweep,simulate,verify}``."""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

from . import __version__
from .bass_model import CalibrationConfig, calibrate_bass_lv, martingale_diagnostics, rng_version, simulate
from .errors import (
    AssumptionViolation,
    BassCalibError,
    DataError,
    DomainError,
    NonConvergence,
    ParseError,
    VerificationError,
)
from .fixedpoint import (
    FixedPointProblem,
    SolverConfig,
    contraction_bound,
    derivative_density,
    iterate,
    support_hull_measure,
)
from .market_io import CalibrationArtifact, atomic_write, canonical_json, load_artifact, read_quotes_csv, save_artifact
from .measures import Measure, measure_from_dict, quantize

log = logging.getLogger("basscalib")

EXIT_OK = 0
EXIT_DATA = 2
EXIT_NONCONVERGENCE = 3
EXIT_ASSUMPTION = 4
EXIT_DIAGNOSTICS = 5
EXIT_VERIFICATION = 6

EXIT_CODES = {
    EXIT_OK: "success",
    EXIT_DATA: "data error (malformed config, quotes or artifact; irreparable arbitrage)",
    EXIT_NONCONVERGENCE: "fixed-point iteration did not converge (trace still written)",
    EXIT_ASSUMPTION: "marginals violate an assumption (convex order, irreducibility, support, density)",
    EXIT_DIAGNOSTICS: "simulation diagnostics exceeded their thresholds",
    EXIT_VERIFICATION: "stored artifact failed re-verification",
}


@dataclass
class RunConfig:
    """A complete, JSON-serializable description of a run."""

    marginals: list = field(default_factory=list)
    quotes: str | None = None
    forwards: dict = field(default_factory=dict)
    solver: str = "fixed-point"
    solver_config: dict = field(default_factory=dict)
    componentwise: bool = False
    simulate: dict = field(default_factory=lambda: {"paths": 10000, "grid": []})
    sweep: dict = field(default_factory=dict)
    artifact: str | None = None
    seed: int = 0
    out: str = "out"
    threads: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known - {"description"}
        if extra:
            raise ParseError(f"unknown config keys {sorted(extra)}")
        return cls(**{k: copy.deepcopy(v) for k, v in d.items() if k in known})

    def to_dict(self) -> dict:
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def artifact_config(self) -> dict:
        """The fields that determine results: output location and thread count are dropped."""
        d = self.to_dict()
        for k in ("out", "threads", "artifact"):
            d.pop(k)
        return d

    def solver_settings(self) -> SolverConfig:
        try:
            return SolverConfig.from_dict(self.solver_config)
        except (TypeError, DomainError) as exc:
            raise ParseError(f"bad solver_config: {exc}") from None

    def calibration_config(self) -> CalibrationConfig:
        return CalibrationConfig(self.solver, self.componentwise, self.solver_settings())

    def build_marginals(self, base: Path | None = None) -> list[tuple[float, Measure]]:
        if self.quotes:
            qpath = Path(self.quotes)
            if base is not None and not qpath.is_absolute():
                qpath = base / qpath
            surf = read_quotes_csv(qpath)
            surf.forwards.update({float(k): float(v) for k, v in self.forwards.items()})
            return surf.marginals()
        out = []
        for entry in self.marginals:
            try:
                m = measure_from_dict(entry["measure"])
                if entry.get("quantize"):
                    m = quantize(m, int(entry["quantize"]))
                out.append((float(entry["time"]), m))
            except (KeyError, TypeError) as exc:
                raise ParseError(f"bad marginal entry {entry!r}: {exc}") from None
        return out


def bundled_configs() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("basscalib.configs").iterdir() if p.name.endswith(".json"))


def read_config(spec: str | None) -> tuple[RunConfig, Path | None]:
    """Load a config from a path, or by name from the bundled set."""
    if spec is None:
        return RunConfig(), None
    path = Path(spec)
    if path.exists():
        text, base = path.read_text(encoding="utf-8"), path.parent
    else:
        name = spec[:-5] if spec.endswith(".json") else spec
        res = resources.files("basscalib.configs") / f"{name}.json"
        if not res.is_file():
            raise ParseError(f"no config file or bundled config named {spec!r}")
        text, base = res.read_text(encoding="utf-8"), None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"config is not valid JSON: {exc.msg}", len(text[: exc.pos].encode())) from None
    return RunConfig.from_dict(d), base


def set_path(d: dict, path: str, value):
    """Set ``d[a][b][0]...`` for a dotted path ``a.b.0``; returns a modified copy."""
    d = copy.deepcopy(d)
    keys = path.split(".")
    node = d
    for k in keys[:-1]:
        node = node[int(k)] if isinstance(node, list) else node[k]
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value
    return d


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _interval_summary(model, i: int) -> dict:
    maps = model.intervals[i]
    tr = model.traces[i]
    entry = {"t0": float(model.maturities[i]), "t1": float(model.maturities[i + 1])}
    if tr is not None:
        entry["iterations"] = tr.iterations
        entry["final_residual"] = float(tr.shift_residuals[-1])
        entry["observed_rate"] = tr.fitted_rate()
    if hasattr(maps, "y"):
        entry["fixed_point"] = [float(v) for v in maps.y]
        entry["hull_measure"] = float(maps.y[-1] - maps.y[0])
        if model.problems:
            p = model.problems[i]
            d = derivative_density(p, maps.y)
            entry["eps"], entry["delta"] = d.eps, d.delta
            entry["rate_bound"] = contraction_bound(d)
    else:
        entry["components"] = len(maps.parts)
    return entry


def cmd_calibrate(cfg: RunConfig, base: Path | None = None) -> int:
    """Calibrate every interval and write artifact, traces and summary."""
    out = Path(cfg.out)
    marginals = cfg.build_marginals(base)
    try:
        model = calibrate_bass_lv(marginals, cfg.calibration_config())
    except NonConvergence as exc:
        if exc.trace is not None:
            atomic_write(out / "trace_failed.csv", exc.trace.to_csv(timings=False))
        raise
    art = CalibrationArtifact.from_model(model, cfg.artifact_config())
    save_artifact(art, out / "artifact.json")
    for i, tr in enumerate(model.traces):
        if tr is not None:
            atomic_write(out / f"trace_{i}.csv", tr.to_csv(timings=False))
    summary = {"version": __version__, "intervals": [_interval_summary(model, i) for i in range(len(model.intervals))]}
    atomic_write(out / "summary.json", canonical_json(summary))
    print(canonical_json(summary), end="")
    return EXIT_OK


def sweep_point(cfg: RunConfig, base: Path | None = None) -> dict:
    """Calibrate the first interval of ``cfg`` and report iterations and hull measure."""
    marginals = cfg.build_marginals(base)
    (_, mu), (t1, nu) = marginals[0], marginals[1]
    p = FixedPointProblem(mu, nu, t1 - marginals[0][0], cfg.solver_settings())
    Q, tr = iterate(p)
    return {"iterations": tr.iterations, "hull_measure": support_hull_measure(Q),
            "observed_rate": tr.fitted_rate(), "final_residual": float(tr.shift_residuals[-1])}


def run_sweep(cfg: RunConfig, base: Path | None = None) -> list[dict]:
    sw = cfg.sweep
    if not sw.get("path") or not sw.get("values"):
        raise ParseError("sweep needs 'path' and 'values'")
    base_dict = cfg.to_dict()

    def one(value):
        row = {"parameter": value}
        try:
            sub = RunConfig.from_dict(set_path(base_dict, sw["path"], value))
            row.update(sweep_point(sub, base))
            row["status"] = "ok"
        except AssumptionViolation as exc:
            row["status"] = "excluded"
            row["reason"] = str(exc)
        except NonConvergence as exc:
            row["status"] = "nonconvergence"
            row["iterations"] = exc.trace.iterations if exc.trace else None
        except BassCalibError as exc:
            row["status"] = "error"
            row["reason"] = str(exc)
        return row

    with ThreadPoolExecutor(max_workers=max(1, int(cfg.threads))) as pool:
        return list(pool.map(one, sw["values"]))


SWEEP_COLUMNS = ("parameter", "iterations", "hull_measure", "observed_rate", "final_residual", "status")


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow(["" if r.get(c) is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                    for c in SWEEP_COLUMNS])
    return buf.getvalue()


def cmd_sweep(cfg: RunConfig, base: Path | None = None) -> int:
    """Run a parameter ramp and tabulate iterations and hull measure."""
    rows = run_sweep(cfg, base)
    text = sweep_csv(rows)
    atomic_write(Path(cfg.out) / "sweep.csv", text)
    print(text, end="")
    return EXIT_NONCONVERGENCE if any(r["status"] == "nonconvergence" for r in rows) else EXIT_OK


def cmd_simulate(cfg: RunConfig, base: Path | None = None) -> int:
    """Simulate paths from a verified artifact and run diagnostics."""
    out = Path(cfg.out)
    path = Path(cfg.artifact) if cfg.artifact else out / "artifact.json"
    if base is not None and not path.is_absolute() and cfg.artifact:
        path = base / path
    art = load_artifact(path, verify=True)
    model = art.to_model()
    sim = cfg.simulate
    if sim == RunConfig().simulate:
        sim = art.config.get("simulate") or sim
    batch = simulate(model, int(sim.get("paths", 10000)), sim.get("grid") or None, seed=int(cfg.seed))
    atomic_write(out / "paths_summary.csv", batch.summary_csv())
    if sim.get("dump"):
        atomic_write(out / "paths.bin", batch.to_bytes())
    rep = martingale_diagnostics(batch, model)
    report = {"seed": int(cfg.seed), "rng": rng_version(), "inputs_digest": art.inputs_digest, **rep.to_dict()}
    atomic_write(out / "diagnostics.json", canonical_json(report))
    print(canonical_json(report), end="")
    return EXIT_OK if rep.passed else EXIT_DIAGNOSTICS


def cmd_verify(cfg: RunConfig, base: Path | None = None) -> int:
    """Re-check the fixed-point residuals stored in an artifact."""
    path = Path(cfg.artifact) if cfg.artifact else Path(cfg.out) / "artifact.json"
    art = load_artifact(path, verify=False)
    res = art.verify()
    print(canonical_json({"artifact": str(path), "residuals": res, "ok": True}), end="")
    return EXIT_OK


COMMANDS = {"calibrate": cmd_calibrate, "sweep": cmd_sweep, "simulate": cmd_simulate, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    epilog = "exit codes:\n" + "\n".join(f"  {k}  {v}" for k, v in EXIT_CODES.items())
    epilog += "\n\nbundled configs: " + ", ".join(bundled_configs())
    epilog += "\nenvironment: BASSCALIB_LOG sets the log level (e.g. DEBUG, INFO)"
    parser = argparse.ArgumentParser(prog="basscalib", description=__doc__, epilog=epilog,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file or bundled config name")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--seed", type=int, help="random seed (overrides config)")
    common.add_argument("--threads", type=int, help="worker threads (overrides config)")
    common.add_argument("--artifact", help="artifact path for simulate/verify")
    common.add_argument("--set", action="append", default=[], metavar="PATH=JSON",
                        help="override a config field by dotted path, value parsed as JSON")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__, epilog=epilog,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser


def _configure_logging() -> None:
    level = os.environ.get("BASSCALIB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg, base = read_config(args.config)
        d = cfg.to_dict()
        for item in args.set:
            key, _, raw = item.partition("=")
            try:
                d = set_path(d, key, json.loads(raw))
            except (json.JSONDecodeError, KeyError, IndexError, ValueError) as exc:
                raise ParseError(f"bad --set {item!r}: {exc}") from None
        for name in ("out", "seed", "threads", "artifact"):
            if getattr(args, name) is not None:
                d[name] = getattr(args, name)
        cfg = RunConfig.from_dict(d)
        return COMMANDS[args.command](cfg, base)
    except (DataError, ParseError) as exc:
        _report(exc)
        return EXIT_DATA
    except NonConvergence as exc:
        _report(exc)
        return EXIT_NONCONVERGENCE
    except VerificationError as exc:
        _report(exc)
        return EXIT_VERIFICATION
    except (AssumptionViolation, DomainError) as exc:
        _report(exc)
        return EXIT_ASSUMPTION
    except FileNotFoundError as exc:
        _report(exc)
        return EXIT_DATA


def _report(exc: BaseException) -> None:
    print(f"basscalib: {type(exc).__name__}: {exc}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
