"""smolkit: sectional coagulation-diffusion solver with built-in verification.

The package couples a deterministic solver for diffusing, pairwise
coagulating cluster populations on a periodic grid with a tracer-particle
Monte Carlo simulator and a set of monitors that check the inequalities the
model guarantees (mass budgets, moment plateaus, heat-majorant domination,
stability envelopes, gelation trends).
"""

from .analysis import (
    BoundReport,
    GelVerdict,
    HypothesisError,
    check_conservation,
    check_gronwall,
    check_heat_majorant,
    check_moment_bound,
    collision_budget,
    gelation_scan,
    linf_moment_exponent,
)
from .coagulation import (
    RateField,
    TruncationPolicy,
    gain,
    loss,
    reaction_rates,
    weighted_sum,
)
from .diffusion import HeatPropagator, comparison_multiplier, heat_majorant, heat_step
from .field import (
    Grid,
    MassField,
    MomentSpec,
    initial_data_functionals,
    moment,
    pair_moment,
    potential_kernel,
    total_mass,
)
from .integrator import (
    HomogeneousState,
    RunConfig,
    RunRecord,
    StepSizeError,
    homogeneous_run,
    run,
    step,
)
from .kernels import (
    CheckResult,
    DiffusionProfile,
    Kernel,
    RangeProfile,
    check_assumption_1_1,
    check_assumption_1_2,
    check_assumption_1_3,
    eval_kernel,
    kinetic_kernel_from_range,
)
from .tracer import (
    CEMETERY,
    ConsistencyReport,
    TracerEnsemble,
    TracerHistogram,
    TracerState,
    density_consistency,
    evolve_frozen,
    sample_initial,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "BoundReport",
    "CEMETERY",
    "CheckResult",
    "ConsistencyReport",
    "DiffusionProfile",
    "GelVerdict",
    "Grid",
    "HeatPropagator",
    "HomogeneousState",
    "HypothesisError",
    "Kernel",
    "MassField",
    "MomentSpec",
    "RangeProfile",
    "RateField",
    "RunConfig",
    "RunRecord",
    "StepSizeError",
    "TracerEnsemble",
    "TracerHistogram",
    "TracerState",
    "TruncationPolicy",
    "check_assumption_1_1",
    "check_assumption_1_2",
    "check_assumption_1_3",
    "check_conservation",
    "check_gronwall",
    "check_heat_majorant",
    "check_moment_bound",
    "collision_budget",
    "comparison_multiplier",
    "density_consistency",
    "eval_kernel",
    "evolve_frozen",
    "gain",
    "gelation_scan",
    "heat_majorant",
    "heat_step",
    "homogeneous_run",
    "initial_data_functionals",
    "kinetic_kernel_from_range",
    "linf_moment_exponent",
    "loss",
    "moment",
    "pair_moment",
    "potential_kernel",
    "reaction_rates",
    "run",
    "sample_initial",
    "simulate",
    "step",
    "total_mass",
    "weighted_sum",
]
