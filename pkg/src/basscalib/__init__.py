"""Fixed-point calibration of Bass local-volatility martingales."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AssumptionViolation,
    BassCalibError,
    DataError,
    DomainError,
    EllipticityError,
    NonConvergence,
    NumericError,
    ParseError,
    RangeError,
    VerificationError,
)
from .measures import (  # noqa: E402
    DiscreteMeasure,
    Logistic,
    Mixture,
    Normal,
    PointMass,
    QuantileGrid,
    Restricted,
    TruncatedNormal,
    Uniform,
    convex_order_leq,
    irreducible_components,
    quantize,
    w_infinity,
    w_infinity_mod_shift,
)
from .fixedpoint import (  # noqa: E402
    FixedPointProblem,
    SolverConfig,
    apply_G,
    contraction_bound,
    derivative_density,
    iterate,
)
from .semidiscrete import SemidiscreteSystem  # noqa: E402
from .bass_model import build_maps, calibrate_bass_lv, martingale_diagnostics, simulate  # noqa: E402
