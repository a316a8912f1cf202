"""Shared problem types: grids, vector fields, losses, trajectories.

Orientation: states are column vectors of length N; every gradient-like
quantity (adjoints, loss gradients, VJP inputs and outputs) is a row
covector stored as a flat float64 array.  A VJP ``v @ J`` is the only
derivative primitive the reverse pipelines need; dense Jacobians are
optional and only the tangent pipeline consumes them.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import _accel

GRID_TOL = 1e-12


def as_vector(values, length=None, name="vector"):
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if length is not None and arr.shape[0] != length:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {length}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def rel_discrepancy(a, b):
    """||a - b|| / max(||a||, ||b||), with 0 when both vanish."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    diff = np.linalg.norm(a - b)
    if scale == 0.0:
        return float(diff)
    return float(diff / scale)


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t_end: float
    n_steps: int

    @property
    def h(self) -> float:
        return (self.t_end - self.t0) / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_steps + 1) * self.h

    @property
    def span(self) -> float:
        return self.t_end - self.t0

    def node_index(self, t: float) -> int:
        """Index of the node at time ``t``; ``ValueError`` if off grid."""
        tol = GRID_TOL * self.span
        k = int(round((t - self.t0) / self.h))
        if k < 0 or k > self.n_steps or abs(self.t0 + k * self.h - t) > tol:
            raise ValueError(f"time {t!r} is not a node of {self}")
        return k


def make_grid(t0, t_end, n_steps) -> TimeGrid:
    t0 = float(t0)
    t_end = float(t_end)
    if int(n_steps) != n_steps or n_steps < 1:
        raise ValueError(f"n_steps must be a positive integer, got {n_steps!r}")
    if not t_end > t0:
        raise ValueError(f"empty time span [{t0}, {t_end}]")
    return TimeGrid(t0, t_end, int(n_steps))


@dataclass(frozen=True)
class VectorField:
    """Dynamics ``f(t, z, theta)`` with its vector-Jacobian products.

    ``vjp_state(t, z, theta, v)`` returns ``v @ df/dz`` (length N) and
    ``vjp_param(t, z, theta, v)`` returns ``v @ df/dtheta`` (length P).
    ``jac_state``/``jac_param`` return dense (N, N) and (N, P) Jacobians and
    may be omitted.  Callables may be plain Python or numba-jitted; the
    solvers use compiled kernels only when all of them are jitted.
    """

    dim_state: int
    dim_param: int
    eval: Callable
    vjp_state: Callable
    vjp_param: Callable
    jac_state: Optional[Callable] = None
    jac_param: Optional[Callable] = None
    name: str = "field"

    @property
    def has_jacobians(self) -> bool:
        return self.jac_state is not None and self.jac_param is not None

    def pure(self) -> "VectorField":
        """Copy with every callback replaced by its interpreted version."""
        py = _accel.python_impl
        return replace(
            self,
            eval=py(self.eval),
            vjp_state=py(self.vjp_state),
            vjp_param=py(self.vjp_param),
            jac_state=None if self.jac_state is None else py(self.jac_state),
            jac_param=None if self.jac_param is None else py(self.jac_param),
        )


@dataclass(frozen=True)
class LossSpec:
    """Loss over states sampled at ascending label times.

    ``loss_eval(states)`` takes the list of states at the label times and
    returns a float; ``loss_grad(i, states)`` returns dL/dz(t_i) as a
    covector.
    """

    label_times: tuple
    loss_eval: Callable
    loss_grad: Callable
    name: str = "loss"

    def __post_init__(self):
        times = tuple(float(t) for t in self.label_times)
        if not times:
            raise ValueError("a loss needs at least one label time")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"label times must be strictly ascending: {times}")
        object.__setattr__(self, "label_times", times)

    @property
    def n_labels(self) -> int:
        return len(self.label_times)

    def label_nodes(self, grid: TimeGrid) -> np.ndarray:
        nodes = np.array([grid.node_index(t) for t in self.label_times], dtype=np.int64)
        if nodes[0] == 0:
            raise ValueError("label times must lie strictly after t0")
        return nodes

    def value(self, traj: "Trajectory") -> float:
        nodes = self.label_nodes(traj.grid)
        return float(self.loss_eval([traj.states[k] for k in nodes]))

    def cotangents(self, traj: "Trajectory") -> np.ndarray:
        """(n_steps + 1, N) array holding dL/dz at label nodes, zero elsewhere."""
        nodes = self.label_nodes(traj.grid)
        states = [traj.states[k] for k in nodes]
        out = np.zeros_like(traj.states)
        for i, k in enumerate(nodes):
            out[k] += as_vector(self.loss_grad(i, states), traj.states.shape[1], "loss gradient")
        return out


@dataclass(frozen=True)
class StepRecord:
    """Everything one forward step consumed and produced.

    For staged steps the stage arrays are populated; for multistep steps
    ``window_states``/``window_derivs`` hold the K prior nodes and their
    derivative evaluations.
    """

    index: int
    t: float
    h: float
    startup: bool
    z_in: np.ndarray
    z_out: np.ndarray
    stage_times: Optional[np.ndarray] = None
    stage_states: Optional[np.ndarray] = None
    stage_derivs: Optional[np.ndarray] = None
    window_states: Optional[np.ndarray] = None
    window_derivs: Optional[np.ndarray] = None

    @property
    def staged(self) -> bool:
        return self.stage_states is not None


@dataclass(frozen=True)
class Trajectory:
    """Forward solution with stored stage data.

    ``stage_*`` arrays cover every step for staged schemes and only the
    startup steps for multistep schemes; ``node_derivs[n]`` is
    ``f(t_n, z_n)`` for multistep schemes (rows 0..n_steps-1).
    """

    grid: TimeGrid
    scheme_id: str
    theta: np.ndarray
    states: np.ndarray
    stage_times: np.ndarray
    stage_states: np.ndarray
    stage_derivs: np.ndarray
    node_derivs: Optional[np.ndarray] = None

    @property
    def n_startup(self) -> int:
        return self.stage_states.shape[0] if self.node_derivs is not None else 0

    @property
    def is_multistep(self) -> bool:
        return self.node_derivs is not None

    @property
    def token(self) -> str:
        """Content hash identifying this trajectory in reports."""
        import hashlib

        digest = hashlib.sha256()
        digest.update(self.scheme_id.encode())
        for arr in (self.states, self.stage_states, self.theta):
            digest.update(np.ascontiguousarray(arr).tobytes())
        return digest.hexdigest()[:16]

    def record(self, n: int) -> StepRecord:
        if not 0 <= n < self.grid.n_steps:
            raise IndexError(n)
        h = self.grid.h
        t = float(self.grid.nodes[n])
        if not self.is_multistep:
            return StepRecord(n, t, h, False, self.states[n], self.states[n + 1],
                              self.stage_times[n], self.stage_states[n], self.stage_derivs[n])
        if n < self.n_startup:
            return StepRecord(n, t, h, True, self.states[n], self.states[n + 1],
                              self.stage_times[n], self.stage_states[n], self.stage_derivs[n])
        from .schemes import get_scheme

        k = get_scheme(self.scheme_id).steps
        lo = n + 1 - k
        return StepRecord(n, t, h, False, self.states[n], self.states[n + 1],
                          window_states=self.states[lo:n + 1],
                          window_derivs=self.node_derivs[lo:n + 1])

    def save(self, path) -> None:
        arrays = dict(
            grid=np.array([self.grid.t0, self.grid.t_end, self.grid.n_steps], dtype=np.float64),
            scheme_id=np.array(self.scheme_id),
            theta=self.theta,
            states=self.states,
            stage_times=self.stage_times,
            stage_states=self.stage_states,
            stage_derivs=self.stage_derivs,
        )
        if self.node_derivs is not None:
            arrays["node_derivs"] = self.node_derivs
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path) -> "Trajectory":
        with np.load(path) as data:
            t0, t_end, n = data["grid"]
            return cls(
                grid=TimeGrid(float(t0), float(t_end), int(n)),
                scheme_id=str(data["scheme_id"]),
                theta=data["theta"].copy(),
                states=data["states"].copy(),
                stage_times=data["stage_times"].copy(),
                stage_states=data["stage_states"].copy(),
                stage_derivs=data["stage_derivs"].copy(),
                node_derivs=data["node_derivs"].copy() if "node_derivs" in data else None,
            )


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    location: dict = field(default_factory=dict)
    discrepancy: float = 0.0


def _probe_rel(approx, exact):
    diff = float(np.linalg.norm(np.asarray(approx) - np.asarray(exact)))
    scale = max(float(np.linalg.norm(approx)), float(np.linalg.norm(exact)))
    return diff / scale if scale > 1e-8 else diff


def validate_problem(field: VectorField, loss: LossSpec, grid: TimeGrid, *,
                     theta=None, z0=None, n_probes=3, rtol=1e-5, eps=1e-6,
                     seed=0) -> list:
    """Probe a problem definition for inconsistencies.

    Checks label/grid alignment, VJPs against central differences of
    ``field.eval``, dense Jacobians against the VJPs, and the loss gradient
    against central differences of the loss.  Probes are drawn around
    ``theta``/``z0`` when given.  Returns a list of :class:`Violation`;
    an empty list means the problem is valid.
    """
    rng = np.random.default_rng(seed)
    n, p = field.dim_state, field.dim_param
    out = []

    for i, t in enumerate(loss.label_times):
        try:
            k = grid.node_index(t)
        except ValueError:
            out.append(Violation("label off grid", f"label {i} at t={t} is not a grid node",
                                 {"label": i, "t": t}, float("nan")))
            continue
        if k == 0:
            out.append(Violation("label off grid", f"label {i} sits at t0", {"label": i, "t": t}))

    z_center = np.zeros(n) if z0 is None else as_vector(z0, n, "z0")
    th_center = np.zeros(p) if theta is None else as_vector(theta, p, "theta")
    spread = 0.1 if theta is not None else 1.0

    for probe in range(n_probes):
        t = float(rng.uniform(grid.t0, grid.t_end))
        z = z_center + spread * rng.standard_normal(n)
        th = th_center + spread * rng.standard_normal(p)
        v = rng.standard_normal(n)
        where = {"probe": probe, "t": t, "z": z.tolist(), "theta": th.tolist()}

        fd_z = np.empty(n)
        for j in range(n):
            e = np.zeros(n)
            step = eps * (1.0 + abs(z[j]))
            e[j] = step
            fd_z[j] = v @ (np.asarray(field.eval(t, z + e, th)) - np.asarray(field.eval(t, z - e, th))) / (2 * step)
        got = np.asarray(field.vjp_state(t, z, th, v))
        err = _probe_rel(got, fd_z)
        if got.shape != (n,) or not err <= rtol:
            out.append(Violation("vjp_state", "vjp_state disagrees with finite differences", where, err))

        fd_p = np.empty(p)
        for j in range(p):
            e = np.zeros(p)
            step = eps * (1.0 + abs(th[j]))
            e[j] = step
            fd_p[j] = v @ (np.asarray(field.eval(t, z, th + e)) - np.asarray(field.eval(t, z, th - e))) / (2 * step)
        got = np.asarray(field.vjp_param(t, z, th, v))
        err = _probe_rel(got, fd_p)
        if got.shape != (p,) or not err <= rtol:
            out.append(Violation("vjp_param", "vjp_param disagrees with finite differences", where, err))

        if field.has_jacobians:
            jz = np.asarray(field.jac_state(t, z, th))
            jp = np.asarray(field.jac_param(t, z, th))
            u_z = rng.standard_normal(n)
            u_p = rng.standard_normal(p)
            lhs = float(np.asarray(field.vjp_state(t, z, th, v)) @ u_z)
            err = abs(lhs - v @ (jz @ u_z)) / max(abs(lhs), 1e-300)
            if err > 1e-12 and abs(lhs) > 1e-14:
                out.append(Violation("jac_state", "dense state Jacobian disagrees with vjp_state", where, err))
            lhs = float(np.asarray(field.vjp_param(t, z, th, v)) @ u_p)
            err = abs(lhs - v @ (jp @ u_p)) / max(abs(lhs), 1e-300)
            if err > 1e-12 and abs(lhs) > 1e-14:
                out.append(Violation("jac_param", "dense parameter Jacobian disagrees with vjp_param", where, err))

        states = [z_center + spread * rng.standard_normal(n) for _ in loss.label_times]
        for i in range(loss.n_labels):
            g = np.asarray(loss.loss_grad(i, states), dtype=np.float64)
            fd = np.empty(n)
            for j in range(n):
                step = eps * (1.0 + abs(states[i][j]))
                plus = [s.copy() for s in states]
                minus = [s.copy() for s in states]
                plus[i][j] += step
                minus[i][j] -= step
                fd[j] = (loss.loss_eval(plus) - loss.loss_eval(minus)) / (2 * step)
            err = _probe_rel(g, fd)
            if g.shape != (n,) or not err <= rtol:
                out.append(Violation("loss_grad", f"loss gradient at label {i} disagrees with finite differences",
                                     {"probe": probe, "label": i}, err))
    return out
