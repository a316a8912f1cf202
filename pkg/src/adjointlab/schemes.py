"""Explicit integrators and the forward solve.

Two families: staged one-step methods given by a Butcher tableau, and
explicit linear multistep methods

    sum_{k=0}^{K} alpha_k z_{n+k} = h * sum_{k=0}^{K-1} beta_k f(t_{n+k}, z_{n+k})

whose first K-1 steps are taken by a staged startup scheme.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .core import StepRecord, TimeGrid, Trajectory, VectorField, as_vector


class IntegrationError(RuntimeError):
    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state produced at step {step}")


@dataclass(frozen=True)
class Scheme:
    name: str
    order: int
    A: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None
    alphas: Optional[np.ndarray] = None
    betas: Optional[np.ndarray] = None
    startup: Optional[str] = None

    def __post_init__(self):
        if self.is_multistep:
            if self.startup is None:
                raise ValueError(f"{self.name}: multistep scheme needs a startup scheme")
            if len(self.alphas) != len(self.betas) + 1:
                raise ValueError(f"{self.name}: need K+1 alphas and K betas")
            if self.alphas[-1] == 0.0:
                raise ValueError(f"{self.name}: leading alpha must be nonzero")
            if abs(float(np.sum(self.alphas))) > 1e-14:
                raise ValueError(f"{self.name}: alphas must sum to zero (consistency)")
        else:
            if self.A is None or self.b is None or self.c is None:
                raise ValueError(f"{self.name}: staged scheme needs A, b, c")
            if np.any(np.triu(self.A) != 0.0):
                raise ValueError(f"{self.name}: tableau must be strictly lower triangular")

    @property
    def is_multistep(self) -> bool:
        return self.alphas is not None

    @property
    def steps(self) -> int:
        """K: number of prior nodes a multistep step consumes (1 for staged)."""
        return len(self.betas) if self.is_multistep else 1

    @property
    def stages(self) -> int:
        return len(self.b) if not self.is_multistep else 0

    def tableau(self):
        """Tableau used for staged steps (the startup tableau for multistep)."""
        s = get_scheme(self.startup) if self.is_multistep else self
        return s.A, s.b, s.c

    def kernel_args(self):
        A, b, c = self.tableau()
        if self.is_multistep:
            return A, b, c, True, self.alphas, self.betas
        return A, b, c, False, _DUMMY, _DUMMY


_DUMMY = np.zeros(1)


def _arr(x):
    return np.array(x, dtype=np.float64)


SCHEMES = {
    "euler": Scheme("euler", 1, A=_arr([[0.0]]), b=_arr([1.0]), c=_arr([0.0])),
    "heun": Scheme("heun", 2, A=_arr([[0.0, 0.0], [1.0, 0.0]]), b=_arr([0.5, 0.5]), c=_arr([0.0, 1.0])),
    "rk4": Scheme(
        "rk4", 4,
        A=_arr([[0.0, 0.0, 0.0, 0.0],
                [0.5, 0.0, 0.0, 0.0],
                [0.0, 0.5, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0]]),
        b=_arr([1.0, 2.0, 2.0, 1.0]) / 6.0,
        c=_arr([0.0, 0.5, 0.5, 1.0]),
    ),
    # z_{n+2} - z_{n+1} = h (3/2 f_{n+1} - 1/2 f_n)
    "ab2": Scheme("ab2", 2, alphas=_arr([0.0, -1.0, 1.0]), betas=_arr([-0.5, 1.5]), startup="rk4"),
}


def get_scheme(scheme) -> Scheme:
    if isinstance(scheme, Scheme):
        return scheme
    try:
        return SCHEMES[scheme]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {sorted(SCHEMES)}") from None


def step_once(field: VectorField, theta, scheme, window, t, h, derivs=None):
    """Advance one step from ``window``.

    For a staged scheme ``window`` is the current state (or a (1, N)
    array).  For a multistep scheme it is the (K, N) stack of prior states
    z_n .. z_{n+K-1}; ``derivs`` optionally supplies their f values, which
    are evaluated when omitted.  ``t`` is the time of the last window node.
    Returns ``(next_state, StepRecord)``.
    """
    scheme = get_scheme(scheme)
    theta = as_vector(theta, field.dim_param, "theta")
    ks = _kernels.kit(field.eval)
    window = np.atleast_2d(np.asarray(window, dtype=np.float64))
    if window.shape[1] != field.dim_state:
        raise ValueError(f"window has state dimension {window.shape[1]}, expected {field.dim_state}")
    if not scheme.is_multistep:
        if window.shape[0] != 1:
            raise ValueError("staged schemes take a single-state window")
        z = window[0].copy()
        S = scheme.stages
        Y = np.zeros((S, field.dim_state))
        Kd = np.zeros((S, field.dim_state))
        T = np.zeros(S)
        out = ks.staged_step(field.eval, float(t), z, theta, float(h), scheme.A, scheme.b, scheme.c, Y, Kd, T)
        if not np.all(np.isfinite(out)):
            raise IntegrationError(0)
        return out, StepRecord(0, float(t), float(h), False, z, out, T, Y, Kd)
    K = scheme.steps
    if window.shape[0] != K:
        raise ValueError(f"{scheme.name} needs a window of {K} states, got {window.shape[0]}")
    if derivs is None:
        first = float(t) - (K - 1) * float(h)
        derivs = np.array([np.asarray(field.eval(first + k * h, window[k], theta), dtype=np.float64)
                           for k in range(K)])
    derivs = np.atleast_2d(np.asarray(derivs, dtype=np.float64))
    if derivs.shape != window.shape:
        raise ValueError("derivs must match the window shape")
    out = ks.multistep_combine(window, derivs, scheme.alphas, scheme.betas, float(h))
    if not np.all(np.isfinite(out)):
        raise IntegrationError(0)
    return out, StepRecord(0, float(t), float(h), False, window[-1], out,
                           window_states=window, window_derivs=derivs)


def solve_forward(field: VectorField, theta, z0, grid: TimeGrid, scheme) -> Trajectory:
    scheme = get_scheme(scheme)
    theta = as_vector(theta, field.dim_param, "theta")
    z0 = as_vector(z0, field.dim_state, "z0")
    if scheme.is_multistep and grid.n_steps < scheme.steps:
        raise ValueError(f"{scheme.name} needs at least {scheme.steps} steps, grid has {grid.n_steps}")
    ks = _kernels.kit(field.eval)
    A, b, c, ms, alphas, betas = scheme.kernel_args()
    # overflow surfaces as IntegrationError below, not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        states, T, Y, Kd, F, fail = ks.forward(
            ks.staged_step, ks.multistep_combine, field.eval, z0, theta,
            grid.t0, grid.h, grid.n_steps, A, b, c, ms, alphas, betas,
        )
    if fail >= 0:
        raise IntegrationError(int(fail))
    # z0 is stored exactly as supplied
    states[0] = z0
    return Trajectory(
        grid=grid,
        scheme_id=scheme.name,
        theta=theta.copy(),
        states=states,
        stage_times=T,
        stage_states=Y,
        stage_derivs=Kd,
        node_derivs=F if scheme.is_multistep else None,
    )


def check_same_grid(base: Trajectory, grid: TimeGrid):
    if base.grid != grid:
        raise ValueError(f"grid mismatch: trajectory on {base.grid}, requested {grid}")
