"""Gradient pipelines for ODEs with constant parameters: continuous and
discrete adjoints, tangent sensitivities, reverse accumulation and finite
differences over one solver core."""
from ._accel import backend_name
from .backprop import backprop_gradient, fd_gradient
from .continuous_adjoint import (
    AdjointTrajectory,
    QuadratureRule,
    gradient_integral,
    gradient_section6_variant,
    solve_adjoint,
)
from .core import (
    LossSpec,
    StepRecord,
    TimeGrid,
    Trajectory,
    VectorField,
    Violation,
    make_grid,
    rel_discrepancy,
    validate_problem,
)
from .discrete_adjoint import DiscreteAdjointState, discrete_gradient, solve_discrete_adjoint
from .schemes import SCHEMES, IntegrationError, Scheme, get_scheme, solve_forward, step_once
from .tangent import TangentTrajectory, directional_loss_derivative, solve_tangent, tangent_gradient

__version__ = "0.1.0"
