"""Discrete fractional semilinear inverse problems in one dimension.

Assemble a fractional Laplacian on a truncated grid, solve the semilinear
exterior problem, read off derivatives of its DN map, and run the
monotonicity-based inversion algorithms on top.
"""

from .errors import (
    ConfigError,
    DegenerateApproximantError,
    DomainError,
    FraccalError,
    GridMismatchError,
    InvalidGeometryError,
    NoConvergenceError,
    ParityError,
    SingularSystemError,
)
from .forms import (
    DNDerivativeEvaluator,
    MFormEvaluator,
    Ordering,
    Potential,
    TestBattery,
    compare_mforms,
    make_battery,
    mform_dn,
    testing_operator,
)
from .fracop import FracOperator, apply, assemble, centered_weights, normalization_constant
from .grid import Grid, build_grid, integrate, lp_norm
from .inversion import (
    InclusionVerdict,
    ReconstructionResult,
    StabilityCurve,
    inclusion_test,
    inner_support_scan,
    lipschitz_estimate,
    reconstruct_potential,
    support_reconstruct,
)
from .runge import ApproximationProblem, LocalizedPotentialSequence, approximate, localized_potentials
from .solver import (
    HarmonicLift,
    SemilinearSolution,
    build_lift,
    dn_map,
    fd_derivative,
    solve_semilinear,
    solve_source,
)

__version__ = "0.1.0"
