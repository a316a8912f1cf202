"""Forward sensitivities along a fixed parameter direction.

The perturbation eta(t) of the trajectory under theta -> theta + eps*zeta
obeys eta' = f_z eta + f_theta zeta with eta(t0) = 0.  It is integrated on
the base trajectory's grid with the base scheme, linearising every stage at
its stored stage state, so the result is the exact directional derivative
of the discrete solution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import LossSpec, TimeGrid, Trajectory, VectorField, as_vector
from .schemes import get_scheme


@dataclass(frozen=True)
class TangentTrajectory:
    grid: TimeGrid
    etas: np.ndarray


def solve_tangent(field: VectorField, theta, base: Trajectory, zeta, scheme=None) -> TangentTrajectory:
    if not field.has_jacobians:
        raise ValueError(f"field {field.name!r} provides no dense Jacobians; the tangent pipeline needs them")
    scheme = get_scheme(base.scheme_id if scheme is None else scheme)
    if scheme.name != base.scheme_id:
        raise ValueError(f"tangent scheme {scheme.name!r} differs from the base trajectory's {base.scheme_id!r}")
    theta = as_vector(theta, field.dim_param, "theta")
    zeta = as_vector(zeta, field.dim_param, "zeta")
    A, b, _, ms, alphas, betas = scheme.kernel_args()
    ks = _kernels.kit(field.jac_state, field.jac_param)
    etas = ks.tangent(
        ks.tangent_stages, ks.multistep_combine, field.jac_state, field.jac_param, theta, zeta,
        base.grid.t0, base.grid.h, base.states, base.stage_times, base.stage_states, A, b,
        ms, alphas, betas,
    )
    return TangentTrajectory(base.grid, etas)


def directional_loss_derivative(loss: LossSpec, base: Trajectory, tangent: TangentTrajectory) -> float:
    """sum_i dL/dz(t_i) . eta(t_i)"""
    if tangent.grid != base.grid:
        raise ValueError("tangent and base trajectories live on different grids")
    G = loss.cotangents(base)
    nodes = loss.label_nodes(base.grid)
    return float(sum(G[k] @ tangent.etas[k] for k in np.unique(nodes)))


def tangent_gradient(field: VectorField, theta, base: Trajectory, loss: LossSpec):
    """Full gradient assembled from P directional solves along unit vectors."""
    grad = np.empty(field.dim_param)
    for j in range(field.dim_param):
        e = np.zeros(field.dim_param)
        e[j] = 1.0
        grad[j] = directional_loss_derivative(loss, base, solve_tangent(field, theta, base, e))
    return grad
