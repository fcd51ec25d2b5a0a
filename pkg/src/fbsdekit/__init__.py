"""Regression Monte Carlo solvers for coupled forward-backward SDEs.

The package implements a Markovian (Picard-type) iteration for FBSDEs
whose forward drift depends on both the value process Y and its gradient
process Z.  Per time step, the backward pass fits a quadratic decoupling
field for Y by least squares; the Z field is either obtained by
differentiating that field and multiplying by the diffusion (the
``differentiation`` method) or fit by an independent second regression
(the ``direct`` baseline, which fails under Z-coupling).  Reference
solutions, strong error metrics, convergence-rate fits, and evaluators
for the convergence constants of the underlying contraction analysis are
included, plus the ``fbsde`` experiment CLI.
"""

from .brownian import (
    BrownianStore,
    PathBatch,
    TimeGrid,
    coarsen_increments,
    make_time_grid,
    sample_fine_increments,
)
from .diagnostics import (
    AssumptionConstants,
    DiagnosticsReport,
    check_conditions,
    parse_constants,
)
from .errors import (
    FBSDEError,
    InvalidArgument,
    NumericalFailure,
    RankDeficiencyError,
    UnsupportedProblem,
)
from .fields import (
    DirectZField,
    QuadraticField,
    eval_u,
    eval_v_diff,
    eval_v_direct,
    features,
    grad_u,
)
from .problems import (
    ProblemSpec,
    decoupled_test_problem,
    example1_problem,
    example2_problem,
)
from .reference import ErrorReport, compute_errors, fit_rate, simulate_reference
from .regression import (
    RegressionConfig,
    fit_step_differentiation,
    fit_step_direct,
    solve_linear_lsq,
)
from .solver import (
    IterationResult,
    SolverConfig,
    backward_pass,
    forward_simulate,
    run_markovian_iteration,
)

__version__ = "0.1.0"
