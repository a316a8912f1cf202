"""Adjoint of the discretised dynamics.

The recursion is the exact transpose of the forward update maps recorded
in a :class:`Trajectory`: staged steps are transposed stage by stage in
reverse order, and multistep rows hand their alpha/beta coefficients to the
multipliers at offsets -k (the shift operator T_k becomes T_{-k}).  Startup
steps are ordinary rows of the same system, so they are transposed too.

There is deliberately no scheme argument: the trajectory's scheme is the
only one the transpose can be taken of.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .backprop import _require_records
from .core import LossSpec, Trajectory, VectorField, as_vector
from .schemes import get_scheme


@dataclass(frozen=True)
class DiscreteAdjointState:
    """``lambdas[n]`` is dL/dz_n; ``multipliers`` are the row multipliers
    (equal to ``lambdas`` up to the leading alpha).  ``stage_covectors`` and
    ``param_covectors`` are the covectors whose parameter VJPs, times h,
    sum to the gradient."""

    scheme_id: str
    token: str
    lambdas: np.ndarray
    multipliers: np.ndarray
    param_covectors: np.ndarray
    stage_covectors: np.ndarray


def solve_discrete_adjoint(field: VectorField, theta, base: Trajectory, loss: LossSpec) -> DiscreteAdjointState:
    _require_records(base)
    theta = as_vector(theta, field.dim_param, "theta")
    scheme = get_scheme(base.scheme_id)
    A, b, _, ms, alphas, betas = scheme.kernel_args()
    G = loss.cotangents(base)
    ks = _kernels.kit(field.vjp_state)
    lam, mu, V, U = ks.discrete_adjoint(
        ks.transpose_stages, field.vjp_state, theta, base.grid.t0, base.grid.h, base.states,
        base.stage_times, base.stage_states, A, b, G, ms, alphas, betas,
    )
    return DiscreteAdjointState(scheme.name, base.token, lam, mu, V, U)


def discrete_gradient(field: VectorField, theta, base: Trajectory, adj: DiscreteAdjointState):
    """dL/dtheta = sum_n h * lambda_n-weighted parameter VJPs."""
    if adj.token != base.token or adj.lambdas.shape != base.states.shape:
        raise ValueError("adjoint state was not built from this trajectory")
    theta = as_vector(theta, field.dim_param, "theta")
    ks = _kernels.kit(field.vjp_param)
    return ks.discrete_gradient(
        field.vjp_param, theta, base.grid.t0, base.grid.h, base.states, base.stage_times,
        base.stage_states, adj.stage_covectors, adj.param_covectors, field.dim_param,
        base.is_multistep,
    )


def transpose_step(field: VectorField, theta, base: Trajectory, n: int, covector):
    """covector @ d z_{n+1} / d z_n for staged step n (or a startup step)."""
    scheme = get_scheme(base.scheme_id)
    if base.is_multistep and n >= base.n_startup:
        raise ValueError("transpose_step applies to staged steps only")
    A, b, _ = scheme.tableau()
    ks = _kernels.kit(field.vjp_state)
    U = np.zeros((len(b), field.dim_state))
    return ks.transpose_stages(field.vjp_state, as_vector(theta), base.grid.h, A, b,
                               base.stage_states[n], base.stage_times[n],
                               as_vector(covector, field.dim_state), U)
