"""Named test problems.

Each zoo entry pairs a jitted vector field with default parameters, an
initial state, a time span and a loss descriptor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .._accel import jit
from ..core import LossSpec, VectorField, as_vector


# -- fields ------------------------------------------------------------------

@jit
def _lin_f(t, z, th):
    return th[0] * z


@jit
def _lin_vjp_z(t, z, th, v):
    return th[0] * v


@jit
def _lin_vjp_p(t, z, th, v):
    out = np.zeros(1)
    out[0] = np.sum(v * z)
    return out


@jit
def _lin_jac_z(t, z, th):
    return th[0] * np.eye(z.shape[0])


@jit
def _lin_jac_p(t, z, th):
    return z.copy().reshape((z.shape[0], 1))


@jit
def _mat_f(t, z, th):
    n = z.shape[0]
    return th.reshape((n, n)) @ z


@jit
def _mat_vjp_z(t, z, th, v):
    n = z.shape[0]
    return v @ th.reshape((n, n))


@jit
def _mat_vjp_p(t, z, th, v):
    return np.outer(v, z).ravel()


@jit
def _mat_jac_z(t, z, th):
    n = z.shape[0]
    return th.reshape((n, n)).copy()


@jit
def _mat_jac_p(t, z, th):
    n = z.shape[0]
    out = np.zeros((n, n * n))
    for i in range(n):
        out[i, i * n:(i + 1) * n] = z
    return out


@jit
def _logi_f(t, z, th):
    return th[0] * z * (1.0 - z / th[1])


@jit
def _logi_vjp_z(t, z, th, v):
    return v * th[0] * (1.0 - 2.0 * z / th[1])


@jit
def _logi_vjp_p(t, z, th, v):
    out = np.zeros(2)
    out[0] = np.sum(v * z * (1.0 - z / th[1]))
    out[1] = np.sum(v * th[0] * z * z) / (th[1] * th[1])
    return out


@jit
def _logi_jac_z(t, z, th):
    out = np.zeros((1, 1))
    out[0, 0] = th[0] * (1.0 - 2.0 * z[0] / th[1])
    return out


@jit
def _logi_jac_p(t, z, th):
    out = np.zeros((1, 2))
    out[0, 0] = z[0] * (1.0 - z[0] / th[1])
    out[0, 1] = th[0] * z[0] * z[0] / (th[1] * th[1])
    return out


@jit
def _decay_f(t, z, th):
    return -z


@jit
def _decay_vjp_z(t, z, th, v):
    return -v


@jit
def _decay_vjp_p(t, z, th, v):
    return np.zeros(th.shape[0])


@jit
def _decay_jac_z(t, z, th):
    return -np.eye(z.shape[0])


@jit
def _decay_jac_p(t, z, th):
    return np.zeros((z.shape[0], th.shape[0]))


def linear_scalar_field():
    return VectorField(1, 1, _lin_f, _lin_vjp_z, _lin_vjp_p, _lin_jac_z, _lin_jac_p, name="theta*z")


def matrix_field(n):
    return VectorField(n, n * n, _mat_f, _mat_vjp_z, _mat_vjp_p, _mat_jac_z, _mat_jac_p, name=f"A(theta)z, N={n}")


def logistic_field():
    return VectorField(1, 2, _logi_f, _logi_vjp_z, _logi_vjp_p, _logi_jac_z, _logi_jac_p, name="logistic")


def decay_field():
    return VectorField(1, 1, _decay_f, _decay_vjp_z, _decay_vjp_p, _decay_jac_z, _decay_jac_p, name="-z")


# -- losses ------------------------------------------------------------------

def make_loss(kind: str, label_times, dim: int) -> LossSpec:
    """``sum``: L = sum_i sum_k z_k(t_i); ``half-square``: L = sum_i |z(t_i)|^2 / 2."""
    if kind == "sum":
        return LossSpec(tuple(label_times),
                        lambda states: float(sum(np.sum(s) for s in states)),
                        lambda i, states: np.ones(dim),
                        name="sum")
    if kind == "half-square":
        return LossSpec(tuple(label_times),
                        lambda states: float(sum(0.5 * s @ s for s in states)),
                        lambda i, states: np.array(states[i], dtype=np.float64),
                        name="half-square")
    raise ValueError(f"unknown loss kind {kind!r}; choose 'sum' or 'half-square'")


LOSS_KINDS = ("sum", "half-square")


# -- problem specs -----------------------------------------------------------

def _exp_series(x, terms=60):
    """exp(x) by a summed Taylor series, independent of math.exp."""
    term = 1.0
    parts = [term]
    for k in range(1, terms):
        term *= x / k
        parts.append(term)
    return math.fsum(parts)


def _linear_scalar_closed_form(spec: "ProblemSpec"):
    """dL/dtheta for f = theta z with a sum loss: sum_i z0 s_i exp(theta s_i)."""
    if spec.loss_kind != "sum":
        return None
    th = float(spec.theta[0])
    z0 = float(np.sum(spec.z0))
    return np.array([math.fsum(z0 * (t - spec.t0) * _exp_series(th * (t - spec.t0)) for t in spec.label_times)])


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    z0: np.ndarray
    theta: np.ndarray
    t0: float
    t_end: float
    loss_kind: str
    label_times: tuple
    seed: Optional[int] = None
    field_factory: Callable = field(default=None, repr=False, compare=False)
    closed_form: Optional[Callable] = field(default=None, repr=False, compare=False)
    description: str = ""

    def build(self):
        """(VectorField, LossSpec, theta, z0) with any seeded perturbation applied."""
        vf = self.field_factory()
        theta, z0 = self.draw()
        loss = make_loss(self.loss_kind, self.label_times, vf.dim_state)
        return vf, loss, theta, z0

    def draw(self):
        theta = as_vector(self.theta, name="theta")
        z0 = as_vector(self.z0, name="z0")
        if self.seed is None:
            return theta, z0
        rng = np.random.default_rng(self.seed)
        theta = theta + 0.1 * (1.0 + np.abs(theta)) * rng.standard_normal(theta.shape)
        z0 = z0 + 0.1 * rng.standard_normal(z0.shape)
        return theta, z0

    def with_overrides(self, **kw) -> "ProblemSpec":
        for key in ("z0", "theta"):
            if kw.get(key) is not None:
                kw[key] = as_vector(kw[key], name=key)
        if kw.get("label_times") is not None:
            kw["label_times"] = tuple(float(t) for t in kw["label_times"])
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def exact_gradient(self):
        """Closed-form dL/dtheta of the continuous problem, when known."""
        if self.closed_form is None or self.seed is not None:
            return None
        return self.closed_form(self)


def _spec(name, factory, z0, theta, loss_kind, labels, closed_form=None, description=""):
    return ProblemSpec(name, np.array(z0, dtype=float), np.array(theta, dtype=float), 0.0, 1.0,
                       loss_kind, tuple(labels), None, factory, closed_form, description)


_ZOO = {
    "linear-scalar": lambda: _spec(
        "linear-scalar", linear_scalar_field, [1.0], [0.3], "sum", [1.0],
        _linear_scalar_closed_form, "f = theta z, L = z(T)"),
    "linear-system": lambda: _spec(
        "linear-system", lambda: matrix_field(3), [1.0, -0.5, 0.25],
        [-0.5, 0.3, 0.1, -0.2, -0.4, 0.5, 0.1, -0.3, -0.6], "half-square", [1.0],
        description="f = A(theta) z, N=3, P=9, L = |z(T)|^2/2"),
    "logistic": lambda: _spec(
        "logistic", logistic_field, [0.5], [1.0, 2.0], "half-square", [1.0],
        description="f = theta1 z (1 - z/theta2), L = z(T)^2/2"),
    "bilinear-2d": lambda: _spec(
        "bilinear-2d", lambda: matrix_field(2), [1.0, 1.0], [-1.0, 1.0, 0.0, -8.0], "half-square", [1.0],
        description="f = W(theta) z, eigenvalues -1 and -8, L = |z(T)|^2/2"),
    "multilabel-linear": lambda: _spec(
        "multilabel-linear", linear_scalar_field, [1.0], [0.3], "sum", [0.5, 1.0],
        _linear_scalar_closed_form, "f = theta z, L = z(0.5) + z(1)"),
    "free-decay": lambda: _spec(
        "free-decay", decay_field, [1.0], [0.7], "half-square", [1.0],
        description="f = -z, independent of theta"),
}


def zoo_names():
    return list(_ZOO)


def zoo(name: str) -> ProblemSpec:
    try:
        return _ZOO[name]()
    except KeyError:
        raise ValueError(f"unknown zoo problem {name!r}; known: {', '.join(_ZOO)}") from None
