"""Simulation and parameter identification for a nonlocal
logistic-selection population model.

Forward problem: `solve_forward` integrates the total-mass fixed-point
equation. Inverse problems: `irgn_minimize` recovers the growth rate from
(noisy) total-mass records by regularized Gauss-Newton, and the
`critical` module turns observed extrema of the density into pointwise
values of p', d' and (ln n0)'.
"""

import os as _os

# Pin BLAS threading before numpy loads so repeated runs with one config and
# seed are byte-identical (reduction order must not depend on the machine's
# momentary thread count). Respects values the caller already exported.
for _var in (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
):
    _os.environ.setdefault(_var, "1")
del _os, _var

from .model import (
    EXP_LIMIT,
    ExponentOverflowError,
    FixedPointError,
    ForwardSolution,
    ModelError,
    ModelInstance,
    ParameterField,
    SpatialGrid,
    TimeGrid,
    constant_field,
    contraction_constant,
    cumulative_trapezoid,
    density_at,
    field_from_callable,
    integrate_space,
    preset_field,
    solve_forward,
)
from .observations import (
    ALL_TIMES,
    CriticalPoint,
    CriticalPointSet,
    KIND_FLAT,
    KIND_MAX,
    KIND_MIN,
    PopulationMeasurement,
    add_l2_noise,
    extract_critical_points,
    perturb_critical_points,
    predict_critical_time,
)
from .tikhonov import (
    ForwardOperator,
    H1Machinery,
    IRGNConfig,
    IRGNResult,
    adjoint,
    apply_forward,
    construct_source_p0,
    derivative,
    irgn_minimize,
    jacobian,
    perturbation_bound,
)
from .critical import (
    PointwiseReconstruction,
    RateTable,
    SingularSystemError,
    cluster_times,
    dedupe_earliest,
    noise_rate_experiment,
    reconstruct_d_prime,
    reconstruct_log_n0_prime,
    reconstruct_p_prime,
    solve_two_time_system,
)

__version__ = "0.1.0"
