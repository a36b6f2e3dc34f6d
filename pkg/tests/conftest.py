from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from basscalib.measures import (
    DiscreteMeasure,
    Logistic,
    Mixture,
    Normal,
    TruncatedNormal,
    Uniform,
    quantize,
)
from basscalib.fixedpoint import FixedPointProblem

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


def mixture_mu(n: int = 50) -> DiscreteMeasure:
    return quantize(Mixture([Normal(0.0, 1.0), Logistic(0.0, 1.0)], [0.5, 0.5]), n)


def mixture_nu() -> TruncatedNormal:
    return TruncatedNormal(0.0, 2.5, -5.0, 5.0)


def skewed_pair() -> tuple[DiscreteMeasure, TruncatedNormal]:
    """Asymmetric three-atom pair with matched means."""
    nu = TruncatedNormal(0.0, 1.2, -2.0, 2.5)
    mu = DiscreteMeasure([-0.6, 0.1, 0.5], [0.3, 0.5, 0.2])
    return mu.shifted(nu.mean - mu.mean), nu


def test_problems() -> dict[str, FixedPointProblem]:
    """Five irreducible problems used by the property suites."""
    return {
        "two_point": FixedPointProblem(DiscreteMeasure([-0.25, 0.25]), Uniform(-1.0, 1.0)),
        "four_point": FixedPointProblem(DiscreteMeasure([0.2, 0.4, 0.6, 0.8]), Uniform(0.0, 1.0)),
        "skewed": FixedPointProblem(*skewed_pair()),
        "tn_ten": FixedPointProblem(quantize(TruncatedNormal(0.0, 1.0, -4.0, 4.0), 10),
                                    TruncatedNormal(0.0, 1.5, -4.0, 4.0)),
        "mixture": FixedPointProblem(mixture_mu(), mixture_nu()),
    }


test_problems.__test__ = False


@pytest.fixture(scope="session")
def problems():
    return test_problems()


@pytest.fixture(scope="session")
def two_point():
    return FixedPointProblem(DiscreteMeasure([-0.25, 0.25]), Uniform(-1.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# -- acceptance report ---------------------------------------------------------

ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}


@pytest.fixture
def record():
    """``record(criterion, label, ok, detail)`` stores one check for the summary."""

    def _record(criterion: int, label: str, ok: bool, detail: str = "") -> bool:
        ACCEPTANCE.setdefault(criterion, []).append((label, bool(ok), detail))
        print(f"criterion {criterion} [{label}]: {'PASS' if ok else 'FAIL'} {detail}")
        return bool(ok)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[c]
        ok = all(r[1] for r in checks)
        parts = "; ".join(f"{label} {'PASS' if good else 'FAIL'} ({detail})" for label, good, detail in checks)
        tr.write_line(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'}  {parts}")
