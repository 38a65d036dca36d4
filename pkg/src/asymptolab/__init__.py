"""Numerical laboratory for long-time asymptotics of convection-diffusion equations."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AsymptolabError,
    BoundaryMassWarning,
    BoxExhausted,
    ConfigInvalid,
    DegenerateFit,
    GridMismatch,
    MissingData,
    NonFiniteField,
    OrderTooHigh,
    PlateauNotReached,
    QuadratureBudgetExceeded,
    RangeViolation,
    ScaleOutOfRange,
    StepFailure,
    TailBudgetExceeded,
)
from .field import (  # noqa: E402
    Field,
    GridSpec,
    MultiIndex,
    Nonlinearity,
    ScalingExponents,
    dilate,
    lq_norm,
    moment,
    weighted_l1_norm,
)
from .heat import (  # noqa: E402
    HeatPropagator,
    expansion_error_bound,
    gauss_kernel,
    heat_apply,
    hermite_eval,
    hermite_gaussian,
    lambda_profile,
)
from .solver import (  # noqa: E402
    GaussianMixture,
    SolverConfig,
    StepPolicy,
    Trajectory,
    decay_envelope,
    solve,
    translated_gaussian,
)
from .profiles import (  # noqa: E402
    ProfileSpec,
    Profiles,
    PsiIntegral,
    burgers_wave,
    compute_psi,
    duhamel,
    profile_A0k,
    profile_A1k,
    profile_tildeA,
    psi_sample_times,
    remainder_R01,
    star_shape,
)
from .analysis import (  # noqa: E402
    DecayFit,
    RemainderCurve,
    fit_decay,
    fit_log_coefficient,
    fit_power_and_log,
    measure_remainder,
    verify_limit_constant,
    verify_nonoptimality_critical,
)
