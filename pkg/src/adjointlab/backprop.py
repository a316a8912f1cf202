"""Reference gradients: reverse accumulation through the solver and
central finite differences of the discrete loss."""
from __future__ import annotations

import numpy as np

from . import _kernels
from .core import LossSpec, TimeGrid, Trajectory, VectorField, as_vector
from .schemes import get_scheme, solve_forward


def _require_records(base: Trajectory):
    if base.stage_states is None or base.stage_times is None:
        raise ValueError("trajectory carries no step records")
    scheme = get_scheme(base.scheme_id)
    if scheme.is_multistep and base.node_derivs is None:
        raise ValueError("multistep trajectory is missing node derivatives")
    expected = scheme.steps - 1 if scheme.is_multistep else base.grid.n_steps
    if base.stage_states.shape[0] != expected:
        raise ValueError(f"trajectory holds {base.stage_states.shape[0]} stage records, expected {expected}")


def backprop_gradient(field: VectorField, theta, base: Trajectory, loss: LossSpec,
                      return_node_cotangents=False):
    """dL/dtheta by reverse sweep over every recorded stage evaluation.

    With ``return_node_cotangents`` also returns the (n_steps + 1, N) array
    of accumulated state cotangents, one per node.
    """
    _require_records(base)
    theta = as_vector(theta, field.dim_param, "theta")
    scheme = get_scheme(base.scheme_id)
    A, b, _, ms, alphas, betas = scheme.kernel_args()
    G = loss.cotangents(base)
    ks = _kernels.kit(field.vjp_state, field.vjp_param)
    F_len = base.node_derivs.shape[0] if ms else 0
    grad, zbar = ks.backprop(
        field.vjp_state, field.vjp_param, theta, base.grid.t0, base.grid.h, base.states,
        base.stage_times, base.stage_states, A, b, G, field.dim_param, ms, alphas, betas, F_len,
    )
    if return_node_cotangents:
        return grad, zbar
    return grad


def loss_at(field, theta, z0, grid: TimeGrid, scheme, loss: LossSpec) -> float:
    return loss.value(solve_forward(field, theta, z0, grid, scheme))


def fd_gradient(field: VectorField, theta, z0, grid: TimeGrid, scheme, loss: LossSpec,
                epsilon=1e-6, scaled=True):
    """Central differences of the discrete loss, one coordinate at a time.

    The step for coordinate j is ``epsilon * (1 + |theta_j|)`` unless
    ``scaled`` is false.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    theta = as_vector(theta, field.dim_param, "theta")
    grad = np.empty(field.dim_param)
    for j in range(field.dim_param):
        step = epsilon * (1.0 + abs(theta[j])) if scaled else epsilon
        plus = theta.copy()
        minus = theta.copy()
        plus[j] += step
        minus[j] -= step
        lp = loss_at(field, plus, z0, grid, scheme, loss)
        lm = loss_at(field, minus, z0, grid, scheme, loss)
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise FloatingPointError(f"non-finite loss when perturbing theta[{j}]")
        grad[j] = (lp - lm) / (plus[j] - minus[j])
    return grad
