"""Energy-stable time integration for three-well gradient elasticity.

Dynamic relaxation of a finite-strain solid whose free energy has three
tetragonal wells, discretized with quadratic tensor-product B-splines.  The
package provides two per-step stress approximations that satisfy an exact
discrete work identity (one midpoint-based, one series-based), a Newton
driver, an energy-ledger time stepper, periodic-cell homogenization, and a
command-line front end for desk-scale experiments.
"""

from .assembly import ConstraintSet, NewtonConfig, assemble, linear_solve, newton_solve
from .dynamics import (
    DynamicsDriver,
    EnergyLedger,
    InitialCondition,
    RunConfig,
    StatePair,
    bump_initial_condition,
    init_states,
    run,
    temporal_convergence_study,
)
from .errors import (
    AssemblyError,
    DomainError,
    EnergyBalanceError,
    InvalidMeshError,
    LinearSolveError,
    LoadingError,
    NonconvergenceError,
    RefinementError,
    SpecFileError,
    TriwellError,
)
from .homogenize import (
    MacroLoading,
    continuation_sweep,
    effective_stress,
    periodic_equilibrium,
)
from .integrators import (
    HalfStepStates,
    SchemeConfig,
    gonzalez_stresses,
    gonzalez_tangent,
    kinematic_stencils,
    taylor_stresses,
    taylor_tangent,
)
from .material import (
    MaterialParams,
    QuadState,
    StressPair,
    build_psi_polynomial,
    classify_phase,
    green_lagrange,
    psi,
    reparam_strains,
    stresses,
)
from .polynomial import SparsePolynomial
from .splines import (
    FieldCoeffs,
    KnotVector,
    SplineSpace,
    interpolate_field,
    knot_insert,
    make_uniform_space,
)

__version__ = "0.1.0"
