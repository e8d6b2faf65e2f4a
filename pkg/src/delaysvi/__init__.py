"""Constrained stochastic delay differential equations.

Simulation of multivalued (subdifferential-constrained) delay SDEs, Monte
Carlo studies of their quantitative behavior, value estimation for the
associated control problem, and a finite-difference solver for the reduced
value PDE with cross-validation between the two.
"""

from .convex import (
    BallIndicator,
    BoxIndicator,
    ConvexConstraint,
    HalfspaceIndicator,
    PolyhedronIndicator,
    QuadraticFunction,
    ZeroFunction,
    dir_subdiff,
    envelope,
    prox,
    yosida_audit,
    yosida_grad,
)
from .engine import (
    DelayBuffer,
    SolverConfig,
    Trajectory,
    memory_y,
    memory_z,
    simulate_block,
    simulate_path,
    solution_audit,
    step,
)
from .errors import (
    DelaySviError,
    DomainError,
    InvalidInputError,
    NumericError,
    PreconditionError,
    StateError,
    ValidationError,
)
from .hjb import GridSpec, ReducedScenario, ValueField, hamiltonian, solve_hjb
from .policies import (
    ConstantPolicy,
    FeedbackTablePolicy,
    PiecewiseConstantPolicy,
    Policy,
    PolicyFamily,
)
from .scenario import (
    AffineDiffusion,
    AffineDrift,
    PathSegment,
    PolynomialCost,
    Scenario,
)

__version__ = "0.1.0"
