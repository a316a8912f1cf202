"""Differentiate-then-discretise gradients.

The adjoint a(t) solves a' = -a f_z backwards from a(t_end) = -dL/dz(t_end);
at earlier label times it is reset, either additively
(a <- a - dL/dz(t_i)) or by overwriting (a <- -dL/dz(t_i)).  The gradient
is the integral -int a f_theta dt, evaluated by node quadrature over the
stored backward solution rather than carried as an extra ODE state.

Sign convention: ``a`` is the negative of the usual costate
(lambda = -a), and every public gradient is dL/dtheta.

The backward scheme is independent of the forward one.  Its stages read
base states at nodes; off-node stages use the forward pass's stored stage
states when both schemes coincide and the nearest node otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .core import LossSpec, TimeGrid, Trajectory, VectorField, as_vector
from .schemes import Scheme, get_scheme

ADDITIVE = "additive"
OVERWRITE = "overwrite"


class Jump(NamedTuple):
    label: int
    node: int
    pre: np.ndarray
    post: np.ndarray
    source: np.ndarray


@dataclass(frozen=True)
class AdjointTrajectory:
    """Backward solution on the base grid.

    ``pre[n]`` is the value reaching node n from above and ``post[n]`` the
    value leaving it downward; they differ only where a reset happened.
    """

    grid: TimeGrid
    pre: np.ndarray
    post: np.ndarray
    jump_log: tuple
    label_nodes: tuple
    reset: str
    backward_scheme: str
    token: str

    @property
    def adjoints(self) -> np.ndarray:
        return self.post


_QUAD_KINDS = ("left-endpoint", "trapezoid", "simpson", "scheme-matched")
_MATCHED = {"euler": "left-endpoint", "heun": "trapezoid", "rk4": "simpson", "ab2": "trapezoid"}


@dataclass(frozen=True)
class QuadratureRule:
    kind: str = "scheme-matched"

    def __post_init__(self):
        if self.kind not in _QUAD_KINDS:
            raise ValueError(f"unknown quadrature {self.kind!r}; choose from {_QUAD_KINDS}")

    def resolve(self, backward_scheme: str) -> str:
        if self.kind != "scheme-matched":
            return self.kind
        return _MATCHED.get(backward_scheme, "trapezoid")

    @staticmethod
    def piece_weights(kind: str, m: int, h: float) -> np.ndarray:
        """Weights for the m + 1 nodes of a piece of m intervals."""
        w = np.zeros(m + 1)
        if kind == "left-endpoint":
            w[:m] = h
        elif kind == "trapezoid" or m == 1:
            w[:] = h
            w[0] = w[-1] = h / 2
        elif kind == "simpson":
            even = m if m % 2 == 0 else m - 3
            for k in range(0, even, 2):
                w[k] += h / 3
                w[k + 1] += 4 * h / 3
                w[k + 2] += h / 3
            if even < m:
                # Simpson 3/8 on the last three intervals
                for off, coef in zip(range(4), (1.0, 3.0, 3.0, 1.0)):
                    w[even + off] += 3 * h / 8 * coef
        else:
            raise ValueError(kind)
        return w

    def weights(self, grid: TimeGrid, backward_scheme: str, breaks=()) -> list:
        """[(p, q, weights)] for the pieces between consecutive break nodes."""
        kind = self.resolve(backward_scheme)
        cuts = sorted({0, grid.n_steps, *(int(k) for k in breaks)})
        return [(p, q, self.piece_weights(kind, q - p, grid.h)) for p, q in zip(cuts, cuts[1:])]


def _stage_sources(fwd: Scheme, bwd_tableau, same_scheme: bool) -> np.ndarray:
    """Which base state each backward stage evaluates f_z at (see kernel)."""
    _, _, cb = bwd_tableau
    src = np.empty(len(cb), dtype=np.int64)
    used = {}
    for i, c in enumerate(cb):
        if c == 0.0:
            src[i] = -1
        elif c == 1.0:
            src[i] = -2
        elif same_scheme and not fwd.is_multistep:
            frac = 1.0 - c
            matches = [j for j, cf in enumerate(fwd.c) if cf == frac]
            k = used.get(frac, 0)
            if k >= len(matches):
                raise ValueError(f"no stored forward stage at fraction {frac} for backward stage {i}")
            src[i] = matches[k]
            used[frac] = k + 1
        else:
            # nearest node; the midpoint goes to the node the step departs from
            src[i] = -1 if c <= 0.5 else -2
    return src


def _solve(field, theta, base: Trajectory, loss: LossSpec, backward_scheme, reset: str) -> AdjointTrajectory:
    if reset not in (ADDITIVE, OVERWRITE):
        raise ValueError(f"reset must be {ADDITIVE!r} or {OVERWRITE!r}")
    theta = as_vector(theta, field.dim_param, "theta")
    bwd = get_scheme(backward_scheme)
    fwd = get_scheme(base.scheme_id)
    same = bwd.name == fwd.name
    tab = bwd.tableau()
    zsrc = _stage_sources(fwd, tab, same)
    grid = base.grid
    if same and not fwd.is_multistep:
        Yf = base.stage_states
    else:
        Yf = np.zeros((grid.n_steps, 1, field.dim_state))
    nodes = loss.label_nodes(grid)
    is_label = np.zeros(grid.n_steps + 1, dtype=np.bool_)
    is_label[nodes] = True
    G = loss.cotangents(base)
    A, b, c, ms, alphas, betas = bwd.kernel_args()
    ks = _kernels.kit(field.vjp_state)
    pre, post = ks.continuous_adjoint(
        ks.backward_stage_step, field.vjp_state, theta, grid.t0, grid.h, base.states, Yf, zsrc,
        A, b, c, ms, alphas, betas, is_label, G, reset == OVERWRITE,
    )
    jumps = tuple(
        Jump(i, int(k), pre[k].copy(), post[k].copy(), G[k].copy())
        for i, k in enumerate(nodes) if k < grid.n_steps
    )
    return AdjointTrajectory(grid, pre, post, jumps, tuple(int(k) for k in nodes), reset, bwd.name, base.token)


def solve_adjoint(field: VectorField, theta, base: Trajectory, loss: LossSpec, backward_scheme,
                  reset: str = ADDITIVE) -> AdjointTrajectory:
    """Backward adjoint sweep; additive resets at earlier label times."""
    return _solve(field, theta, base, loss, backward_scheme, reset)


def _piece_integrals(field, theta, base: Trajectory, adjoint: AdjointTrajectory, rule: QuadratureRule, breaks):
    if adjoint.grid != base.grid or adjoint.token != base.token:
        raise ValueError("adjoint and base trajectory do not share a grid")
    theta = as_vector(theta, field.dim_param, "theta")
    grid = base.grid
    ks = _kernels.kit(field.vjp_param)
    y_post = ks.node_param_vjps(field.vjp_param, theta, grid.t0, grid.h, base.states, adjoint.post, field.dim_param)
    y_pre = ks.node_param_vjps(field.vjp_param, theta, grid.t0, grid.h, base.states, adjoint.pre, field.dim_param)
    out = []
    for p, q, w in rule.weights(grid, adjoint.backward_scheme, breaks):
        vals = y_post[p:q + 1].copy()
        vals[0] = y_pre[p]
        out.append((p, q, w @ vals))
    return out


def gradient_integral(field: VectorField, theta, base: Trajectory, adjoint: AdjointTrajectory,
                      rule=None) -> np.ndarray:
    """dL/dtheta = -int a f_theta dt, split at label nodes."""
    rule = QuadratureRule() if rule is None else _as_rule(rule)
    pieces = _piece_integrals(field, theta, base, adjoint, rule, adjoint.label_nodes)
    total = np.zeros(field.dim_param)
    for _, _, integral in pieces:
        total += integral
    return -total


class WeightedGradient(NamedTuple):
    gradient: np.ndarray
    adjoint: AdjointTrajectory
    double_sum: np.ndarray
    interval_integrals: np.ndarray


def gradient_section6_variant(field: VectorField, theta, base: Trajectory, loss: LossSpec,
                              backward_scheme, rule=None) -> WeightedGradient:
    """Multi-label gradient with overwriting resets and interval weights.

    Interval j = [t_{j-1}, t_j] (t_0 the start time) carries weight
    M - j + 1, so the gradient is -sum_j (M - j + 1) int_j a f_theta dt.
    ``double_sum`` is the same quantity evaluated as
    -sum_i sum_{j <= i} int_j a f_theta dt.
    """
    rule = QuadratureRule() if rule is None else _as_rule(rule)
    adj = _solve(field, theta, base, loss, backward_scheme, OVERWRITE)
    nodes = adj.label_nodes
    pieces = _piece_integrals(field, theta, base, adj, rule, nodes)
    by_end = {q: integral for _, q, integral in pieces}
    M = len(nodes)
    ints = np.array([by_end[k] for k in nodes])
    weighted = np.zeros(field.dim_param)
    for j in range(M):
        weighted += (M - j) * ints[j]
    double = np.zeros(field.dim_param)
    for i in range(M):
        for j in range(i + 1):
            double += ints[j]
    return WeightedGradient(-weighted, adj, -double, ints)


def _as_rule(rule) -> QuadratureRule:
    return rule if isinstance(rule, QuadratureRule) else QuadratureRule(rule)
