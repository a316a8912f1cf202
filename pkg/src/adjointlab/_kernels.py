"""Inner loops of every pipeline, written in the numba-compatible subset.

Array conventions: ``states`` is (n_steps + 1, N); stage arrays are
(n_staged, S, N) with stage times (n_staged, S); cotangent/source arrays
have one row per node.  Staged schemes use a Butcher tableau ``(A, b, c)``;
multistep schemes use ``alphas`` (K + 1) and ``betas`` (K) with the startup
tableau passed as ``(A, b, c)``.

Kernels that need another callback-taking routine receive it as an
argument so the caller can hand over matching compiled or interpreted
variants (see :func:`kit`).
"""
import types

import numpy as np

from . import _accel
from ._accel import jit


# -- forward -----------------------------------------------------------------

@jit
def staged_step(f, t, z, theta, h, A, b, c, Y, Kd, T):
    """One explicit Runge-Kutta step; fills stage rows ``Y``, ``Kd``, ``T``."""
    S = b.shape[0]
    for i in range(S):
        y = z.copy()
        for j in range(i):
            if A[i, j] != 0.0:
                y = y + (h * A[i, j]) * Kd[j]
        T[i] = t + c[i] * h
        Y[i, :] = y
        Kd[i, :] = f(T[i], y, theta)
    acc = np.zeros_like(z)
    for i in range(S):
        if b[i] != 0.0:
            acc = acc + b[i] * Kd[i]
    return z + h * acc


@jit
def multistep_combine(Zw, Fw, alphas, betas, h):
    """Solve sum_k alpha_k z_{n+k} = h sum_{k<K} beta_k f_{n+k} for z_{n+K}."""
    K = betas.shape[0]
    acc_f = np.zeros(Zw.shape[1])
    acc_z = np.zeros(Zw.shape[1])
    for k in range(K):
        if betas[k] != 0.0:
            acc_f = acc_f + betas[k] * Fw[k]
        if alphas[k] != 0.0:
            acc_z = acc_z + alphas[k] * Zw[k]
    return (h * acc_f - acc_z) / alphas[K]


@jit
def forward(stepper, combine, f, z0, theta, t0, h, n_steps, A, b, c,
            multistep, alphas, betas):
    """Integrate forward; returns arrays plus the first failing step (-1 if none)."""
    N = z0.shape[0]
    S = b.shape[0]
    states = np.zeros((n_steps + 1, N))
    states[0, :] = z0
    if multistep:
        K = betas.shape[0]
        n_start = min(K - 1, n_steps)
    else:
        K = 1
        n_start = n_steps
    T = np.zeros((n_start, S))
    Y = np.zeros((n_start, S, N))
    Kd = np.zeros((n_start, S, N))
    for n in range(n_start):
        states[n + 1, :] = stepper(f, t0 + n * h, states[n], theta, h, A, b, c, Y[n], Kd[n], T[n])
        if not np.all(np.isfinite(states[n + 1])):
            return states, T, Y, Kd, np.zeros((0, N)), n
    F = np.zeros((n_steps if multistep else 0, N))
    if multistep:
        for m in range(n_start):
            F[m, :] = f(t0 + m * h, states[m], theta)
        for n in range(n_start, n_steps):
            F[n, :] = f(t0 + n * h, states[n], theta)
            lo = n + 1 - K
            states[n + 1, :] = combine(states[lo:n + 1], F[lo:n + 1], alphas, betas, h)
            if not np.all(np.isfinite(states[n + 1])):
                return states, T, Y, Kd, F, n
    return states, T, Y, Kd, F, -1


# -- reverse accumulation ----------------------------------------------------

@jit
def backprop(vjp_z, vjp_p, theta, t0, h, states, T, Y, A, b, G, P,
             multistep, alphas, betas, F_len):
    """Reverse sweep through the recorded program.

    Returns (dL/dtheta, node cotangents).  ``G`` holds dL/dz at label nodes.
    """
    n_steps = states.shape[0] - 1
    N = states.shape[1]
    S = b.shape[0]
    zbar = G.copy()
    thbar = np.zeros(P)
    n_start = Y.shape[0]
    if multistep:
        K = betas.shape[0]
        aK = alphas[K]
        Fbar = np.zeros((F_len, N))
        for n in range(n_steps - 1, n_start - 1, -1):
            w = zbar[n + 1] / aK
            lo = n + 1 - K
            for k in range(K):
                if alphas[k] != 0.0:
                    zbar[lo + k] = zbar[lo + k] - alphas[k] * w
                if betas[k] != 0.0:
                    Fbar[lo + k] = Fbar[lo + k] + (h * betas[k]) * w
            t = t0 + n * h
            zbar[n] = zbar[n] + vjp_z(t, states[n], theta, Fbar[n])
            thbar = thbar + vjp_p(t, states[n], theta, Fbar[n])
        for m in range(n_start - 1, -1, -1):
            t = t0 + m * h
            zbar[m] = zbar[m] + vjp_z(t, states[m], theta, Fbar[m])
            thbar = thbar + vjp_p(t, states[m], theta, Fbar[m])
    kbar = np.zeros((S, N))
    for n in range(n_start - 1, -1, -1):
        out_bar = zbar[n + 1]
        for i in range(S):
            kbar[i, :] = (h * b[i]) * out_bar
        acc = out_bar.copy()
        for i in range(S - 1, -1, -1):
            ybar = vjp_z(T[n, i], Y[n, i], theta, kbar[i])
            thbar = thbar + vjp_p(T[n, i], Y[n, i], theta, kbar[i])
            acc = acc + ybar
            for j in range(i):
                if A[i, j] != 0.0:
                    kbar[j, :] = kbar[j] + (h * A[i, j]) * ybar
        zbar[n] = zbar[n] + acc
    return thbar, zbar


# -- discrete adjoint (transposed scheme) -----------------------------------

@jit
def transpose_stages(vjp_z, theta, h, A, b, Yn, Tn, lam_next, Un):
    """Apply the transposed step map of one staged step to ``lam_next``.

    Stage adjoints run in reverse stage order; the stage covectors whose
    parameter VJPs make up the gradient are written to ``Un``.
    """
    S = b.shape[0]
    N = lam_next.shape[0]
    Lam = np.zeros((S, N))
    for i in range(S - 1, -1, -1):
        u = b[i] * lam_next
        for j in range(i + 1, S):
            if A[j, i] != 0.0:
                u = u + (h * A[j, i]) * Lam[j]
        Un[i, :] = u
        Lam[i, :] = vjp_z(Tn[i], Yn[i], theta, u)
    acc = np.zeros(N)
    for i in range(S):
        acc = acc + Lam[i]
    return lam_next + h * acc


@jit
def discrete_adjoint(tstep, vjp_z, theta, t0, h, states, T, Y, A, b, G,
                     multistep, alphas, betas):
    """Back-substitution through the transposed forward recursion.

    Returns (lambdas, row multipliers mu, beta-weighted multiplier sums V,
    stage covectors U).  ``lambdas[n]`` is the node cotangent dL/dz_n.
    """
    n_steps = states.shape[0] - 1
    N = states.shape[1]
    S = b.shape[0]
    n_start = Y.shape[0]
    lam = np.zeros((n_steps + 1, N))
    mu = np.zeros((n_steps + 1, N))
    V = np.zeros((n_steps + 1, N))
    U = np.zeros((n_start, S, N))
    if multistep:
        K = betas.shape[0]
        aK = alphas[K]
        for j in range(n_steps, -1, -1):
            v = np.zeros(N)
            a = np.zeros(N)
            for m in range(max(K, j + 1), min(n_steps, j + K) + 1):
                k = j - m + K
                v = v + betas[k] * mu[m]
                a = a + alphas[k] * mu[m]
            V[j, :] = v
            rhs = G[j] - a + h * vjp_z(t0 + j * h, states[j], theta, v)
            if j >= K:
                mu[j, :] = rhs / aK
            else:
                if j < n_start:
                    rhs = rhs + tstep(vjp_z, theta, h, A, b, Y[j], T[j], mu[j + 1], U[j])
                mu[j, :] = rhs
            lam[j, :] = rhs
    else:
        lam[n_steps, :] = G[n_steps]
        for n in range(n_steps - 1, -1, -1):
            lam[n, :] = G[n] + tstep(vjp_z, theta, h, A, b, Y[n], T[n], lam[n + 1], U[n])
        mu[:, :] = lam
    return lam, mu, V, U


@jit
def discrete_gradient(vjp_p, theta, t0, h, states, T, Y, U, V, P, multistep):
    """sum over steps of h * (parameter VJP of each transposed row)."""
    grad = np.zeros(P)
    for n in range(U.shape[0]):
        acc = np.zeros(P)
        for i in range(U.shape[1]):
            acc = acc + vjp_p(T[n, i], Y[n, i], theta, U[n, i])
        grad = grad + h * acc
    if multistep:
        acc = np.zeros(P)
        for j in range(states.shape[0]):
            acc = acc + vjp_p(t0 + j * h, states[j], theta, V[j])
        grad = grad + h * acc
    return grad


# -- tangent (forward sensitivity) ------------------------------------------

@jit
def tangent_stages(jac_z, jac_p, theta, h, A, b, Yn, Tn, eta, zeta):
    S = b.shape[0]
    N = eta.shape[0]
    kap = np.zeros((S, N))
    for i in range(S):
        e = eta.copy()
        for j in range(i):
            if A[i, j] != 0.0:
                e = e + (h * A[i, j]) * kap[j]
        kap[i, :] = jac_z(Tn[i], Yn[i], theta) @ e + jac_p(Tn[i], Yn[i], theta) @ zeta
    acc = np.zeros(N)
    for i in range(S):
        if b[i] != 0.0:
            acc = acc + b[i] * kap[i]
    return eta + h * acc


@jit
def tangent(tstages, combine, jac_z, jac_p, theta, zeta, t0, h, states, T, Y, A, b,
            multistep, alphas, betas):
    n_steps = states.shape[0] - 1
    N = states.shape[1]
    etas = np.zeros((n_steps + 1, N))
    n_start = Y.shape[0]
    for n in range(n_start):
        etas[n + 1, :] = tstages(jac_z, jac_p, theta, h, A, b, Y[n], T[n], etas[n], zeta)
    if multistep:
        K = betas.shape[0]
        Phi = np.zeros((n_steps, N))
        for m in range(n_start):
            t = t0 + m * h
            Phi[m, :] = jac_z(t, states[m], theta) @ etas[m] + jac_p(t, states[m], theta) @ zeta
        for n in range(n_start, n_steps):
            t = t0 + n * h
            Phi[n, :] = jac_z(t, states[n], theta) @ etas[n] + jac_p(t, states[n], theta) @ zeta
            lo = n + 1 - K
            etas[n + 1, :] = combine(etas[lo:n + 1], Phi[lo:n + 1], alphas, betas, h)
    return etas


# -- continuous adjoint ------------------------------------------------------

@jit
def backward_stage_step(vjp_z, theta, t_dep, h, a, z_dep, z_arr, Yf, zsrc, A, b, c):
    """One staged step of da/ds = a f_z from t_dep to t_dep - h.

    ``zsrc[i]`` picks the base state used at stage i: -1 the departure
    node, -2 the arrival node, j >= 0 the stored forward stage j.
    """
    S = b.shape[0]
    N = a.shape[0]
    Kb = np.zeros((S, N))
    for i in range(S):
        ai = a.copy()
        for j in range(i):
            if A[i, j] != 0.0:
                ai = ai + (h * A[i, j]) * Kb[j]
        src = zsrc[i]
        if src == -1:
            zi = z_dep
        elif src == -2:
            zi = z_arr
        else:
            zi = Yf[src]
        Kb[i, :] = vjp_z(t_dep - c[i] * h, zi, theta, ai)
    acc = np.zeros(N)
    for i in range(S):
        if b[i] != 0.0:
            acc = acc + b[i] * Kb[i]
    return a + h * acc


@jit
def continuous_adjoint(bstep, vjp_z, theta, t0, h, states, Yf, zsrc, A, b, c,
                       multistep, alphas, betas, is_label, G, overwrite):
    """Integrate the adjoint ODE from t_end to t0 with resets at labels.

    Returns (a_pre, a_post): the value arriving at each node from above and
    the value leaving it downward (they differ only at reset nodes).
    """
    n_steps = states.shape[0] - 1
    N = states.shape[1]
    a_pre = np.zeros((n_steps + 1, N))
    a_post = np.zeros((n_steps + 1, N))
    a = np.zeros(N)
    if is_label[n_steps]:
        a = -G[n_steps]
    a_pre[n_steps, :] = a
    a_post[n_steps, :] = a
    K = betas.shape[0] if multistep else 1
    g = np.zeros((n_steps + 1, N))
    have_g = np.zeros(n_steps + 1, dtype=np.bool_)
    since = 0
    for n in range(n_steps, 0, -1):
        t_dep = t0 + n * h
        if multistep and since >= K - 1:
            acc_g = np.zeros(N)
            acc_a = np.zeros(N)
            for k in range(K):
                m = n + K - 1 - k
                if not have_g[m]:
                    g[m, :] = vjp_z(t0 + m * h, states[m], theta, a_post[m])
                    have_g[m] = True
                if betas[k] != 0.0:
                    acc_g = acc_g + betas[k] * g[m]
                if alphas[k] != 0.0:
                    acc_a = acc_a + alphas[k] * a_post[m]
            a = (h * acc_g - acc_a) / alphas[K]
        else:
            a = bstep(vjp_z, theta, t_dep, h, a, states[n], states[n - 1], Yf[n - 1], zsrc, A, b, c)
        since += 1
        a_pre[n - 1, :] = a
        if is_label[n - 1]:
            if overwrite:
                a = -G[n - 1]
            else:
                a = a - G[n - 1]
            since = 0
        a_post[n - 1, :] = a
    return a_pre, a_post


@jit
def node_param_vjps(vjp_p, theta, t0, h, states, covecs, P):
    """Row n: covecs[n] @ df/dtheta evaluated at node n."""
    out = np.zeros((states.shape[0], P))
    for n in range(states.shape[0]):
        out[n, :] = vjp_p(t0 + n * h, states[n], theta, covecs[n])
    return out


_NAMES = (
    "staged_step", "multistep_combine", "forward", "backprop", "transpose_stages",
    "discrete_adjoint", "discrete_gradient", "tangent_stages", "tangent",
    "backward_stage_step", "continuous_adjoint", "node_param_vjps",
)


def kit(*callbacks):
    """Namespace of kernels matching the compiled-ness of ``callbacks``."""
    fast = all(_accel.is_jitted(cb) for cb in callbacks)
    g = globals()
    return types.SimpleNamespace(
        jitted=fast,
        **{name: g[name] if fast else _accel.python_impl(g[name]) for name in _NAMES},
    )
