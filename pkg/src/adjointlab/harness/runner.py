"""Experiment execution: one forward solve per grid, every requested
gradient method on top of it, then discrepancies, slope fits and
assertion checks."""
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

import numpy as np

from ..backprop import backprop_gradient, fd_gradient
from ..continuous_adjoint import QuadratureRule, gradient_integral, gradient_section6_variant, solve_adjoint
from ..core import make_grid, rel_discrepancy
from ..discrete_adjoint import discrete_gradient, solve_discrete_adjoint
from ..schemes import solve_forward
from ..tangent import tangent_gradient
from .config import ConfigError, ExperimentSpec, load_config

log = logging.getLogger(__name__)

ROUNDOFF_FLOOR = 1e-13

EXIT_PASS = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2


@dataclass
class MethodResult:
    key: str
    method: str
    n_steps: int
    gradient: Optional[np.ndarray] = None
    error: Optional[str] = None
    trajectory: Optional[str] = None
    extras: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.gradient is not None


@dataclass
class GradientReport:
    experiment: str
    stem: str
    problem: str
    forward_scheme: str
    grids: tuple
    methods: tuple
    theta: np.ndarray
    z0: np.ndarray
    closed_form: Optional[np.ndarray]
    results: dict = field(default_factory=dict)
    trajectories: dict = field(default_factory=dict)
    discrepancies: dict = field(default_factory=dict)
    slopes: dict = field(default_factory=dict)
    assertions: list = field(default_factory=list)
    runtimes: dict = field(default_factory=dict)

    def result(self, key, n) -> MethodResult:
        return self.results[(key, n)]

    def gradient(self, key, n):
        res = self.results.get((key, n))
        return None if res is None else res.gradient

    def discrepancy(self, a, b, n):
        ga, gb = self.gradient(a, n), self.gradient(b, n)
        if ga is None or gb is None:
            return None
        return rel_discrepancy(ga, gb)

    @property
    def errors(self) -> list:
        return [r for r in self.results.values() if r.error is not None]

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.assertions)


def fit_slope(hs, discs, floor=ROUNDOFF_FLOOR) -> dict:
    """Least squares of log(discrepancy) on log(h), dropping points below ``floor``."""
    pts = [(h, d) for h, d in zip(hs, discs) if d is not None and np.isfinite(d) and d >= floor]
    out = {"slope": None, "intercept": None, "residual": None,
           "n_points": len(pts), "excluded": len(hs) - len(pts)}
    if len(pts) < 2:
        return out
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    X = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    out.update(slope=float(coef[0]), intercept=float(coef[1]),
               residual=float(np.sqrt(np.mean(resid ** 2))))
    return out


def _compute(ms, vf, loss, theta, z0, grid, scheme, base, fd_eps):
    """Gradient for one method on one grid; returns (gradient, token, extras)."""
    if ms.name == "backprop":
        return backprop_gradient(vf, theta, base, loss), base.token, {}
    if ms.name == "discrete_adjoint":
        adj = solve_discrete_adjoint(vf, theta, base, loss)
        return discrete_gradient(vf, theta, base, adj), adj.token, {}
    if ms.name == "tangent":
        return tangent_gradient(vf, theta, base, loss), base.token, {}
    if ms.name == "fd":
        return fd_gradient(vf, theta, z0, grid, scheme, loss, epsilon=fd_eps), None, {}
    rule = QuadratureRule(ms.quadrature)
    if ms.name == "cont_adjoint":
        adj = solve_adjoint(vf, theta, base, loss, ms.backward_scheme)
        return gradient_integral(vf, theta, base, adj, rule), adj.token, {}
    if ms.name == "cont_adjoint_weighted":
        res = gradient_section6_variant(vf, theta, base, loss, ms.backward_scheme, rule)
        extras = {
            "double_sum": res.double_sum,
            "consistency": rel_discrepancy(res.gradient, res.double_sum),
            "interval_integrals": res.interval_integrals,
        }
        return res.gradient, res.adjoint.token, extras
    raise ValueError(f"unknown method {ms.name!r}")


def run_experiment(spec: ExperimentSpec, out_dir=None) -> GradientReport:
    """Run every method of ``spec`` on every grid; write the report if ``out_dir`` is given."""
    prob = spec.problem
    vf, loss, theta, z0 = prob.build()
    keys = tuple(m.key for m in spec.methods)
    report = GradientReport(
        experiment=spec.name, stem=spec.stem, problem=prob.name, forward_scheme=spec.forward_scheme,
        grids=spec.grids, methods=keys, theta=theta, z0=z0, closed_form=prob.exact_gradient(),
        runtimes={k: 0.0 for k in keys},
    )
    for n in spec.grids:
        grid = make_grid(prob.t0, prob.t_end, n)
        try:
            base = solve_forward(vf, theta, z0, grid, spec.forward_scheme)
        except Exception as exc:  # recorded, not raised
            msg = f"forward solve failed: {type(exc).__name__}: {exc}"
            for ms in spec.methods:
                report.results[(ms.key, n)] = MethodResult(ms.key, ms.name, n, error=msg)
            report.trajectories[n] = None
            continue
        report.trajectories[n] = base.token
        for ms in spec.methods:
            res = MethodResult(ms.key, ms.name, n)
            start = time.perf_counter()
            try:
                g, token, extras = _compute(ms, vf, loss, theta, z0, grid, spec.forward_scheme, base, spec.fd_epsilon)
                if not np.all(np.isfinite(g)):
                    raise FloatingPointError("non-finite gradient")
                res.gradient, res.trajectory, res.extras = np.asarray(g, dtype=np.float64), token, extras
            except Exception as exc:  # recorded, not raised
                res.error = f"{type(exc).__name__}: {exc}"
                log.debug("method %s failed on %d steps", ms.key, n, exc_info=True)
            report.runtimes[ms.key] += time.perf_counter() - start
            report.results[(ms.key, n)] = res

    fd_keys = [m.key for m in spec.methods if m.name == "fd"]
    for n in spec.grids:
        pairs = {}
        for i, a in enumerate(keys):
            for b in keys[i + 1:]:
                pairs[(a, b)] = report.discrepancy(a, b, n)
        report.discrepancies[n] = pairs
        for ms in spec.methods:
            res = report.results[(ms.key, n)]
            if ms.name == "cont_adjoint_weighted" and res.ok:
                fd = report.gradient(fd_keys[0], n) if fd_keys else None
                res.extras["deviation_vs_fd"] = None if fd is None else rel_discrepancy(res.gradient, fd)

    hs = [(prob.t_end - prob.t0) / n for n in spec.grids]
    finest = max(spec.grids)
    fd_ref = report.gradient(fd_keys[0], finest) if fd_keys else None
    for key in keys:
        fits = {}
        if "backprop" in keys and key != "backprop":
            fits["backprop"] = fit_slope(hs, [report.discrepancy(key, "backprop", n) for n in spec.grids])
        if fd_ref is not None:
            discs = [None if report.gradient(key, n) is None else rel_discrepancy(report.gradient(key, n), fd_ref)
                     for n in spec.grids]
            fits["fd_finest"] = fit_slope(hs, discs)
        report.slopes[key] = fits

    report.assertions = [evaluate_assertion(a.kind, a.params, report) for a in spec.assertions]
    if out_dir is not None:
        from .report import write_report

        write_report(report, out_dir)
    return report


def _rel_to(g, ref):
    return None if g is None else rel_discrepancy(g, ref)


def evaluate_assertion(kind, params, report: GradientReport) -> dict:
    out = {"kind": kind, **params}
    observed = None
    passed = False
    if kind == "max_discrepancy":
        grids = params.get("grids", report.grids)
        observed = [report.discrepancy(params["a"], params["b"], n) for n in grids]
        passed = all(v is not None and v <= params["tol"] for v in observed)
    elif kind == "min_discrepancy":
        n = params.get("grid", min(report.grids))
        observed = report.discrepancy(params["a"], params["b"], n)
        passed = observed is not None and observed >= params["tol"]
    elif kind == "slope":
        fit = report.slopes.get(params["method"], {}).get(params["reference"])
        observed = None if fit is None else fit["slope"]
        passed = observed is not None and abs(observed - params["expected"]) <= params["tol"]
    elif kind == "close":
        ref = report.closed_form if params["reference"] == "closed_form" else np.atleast_1d(np.asarray(params["value"], float))
        grids = params.get("grids", report.grids)
        methods = report.methods if params["method"] == "*" else (params["method"],)
        if ref is None:
            observed = "no closed form for this problem"
        else:
            observed = {m: [_rel_to(report.gradient(m, n), ref) for n in grids] for m in methods}
            passed = all(v is not None and v <= params["rtol"] for vals in observed.values() for v in vals)
    elif kind == "max_norm":
        grids = params.get("grids", report.grids)
        methods = report.methods if params["method"] == "*" else (params["method"],)
        observed = {m: [None if report.gradient(m, n) is None else float(np.linalg.norm(report.gradient(m, n)))
                        for n in grids] for m in methods}
        passed = all(v is not None and v <= params["tol"] for vals in observed.values() for v in vals)
    elif kind == "weighted_consistency":
        key = params.get("method")
        if key is None:
            key = next((m for m in report.methods if m.startswith("cont_adjoint_weighted")), None)
        observed = [None if (key, n) not in report.results or not report.result(key, n).ok
                    else report.result(key, n).extras["consistency"] for n in report.grids]
        passed = key is not None and all(v is not None and v <= params["tol"] for v in observed)
    out["observed"] = observed
    out["passed"] = bool(passed)
    return out


@dataclass
class SuiteResult:
    exit_code: int
    out_dir: str
    reports: list
    error: Optional[str] = None


def run_suite(config_path, out_dir, threads=1, seed=None) -> SuiteResult:
    """Run every experiment of a config file; exit 0 iff all assertions pass."""
    from .report import write_meta, write_report, write_summary

    try:
        specs = load_config(config_path, global_seed=seed)
    except ConfigError as exc:
        return SuiteResult(EXIT_CONFIG, str(out_dir), [], str(exc))
    os.makedirs(out_dir, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    wall = time.perf_counter()
    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        reports = list(pool.map(run_experiment, specs))
    for rep in reports:
        write_report(rep, out_dir)
    write_summary(reports, out_dir, os.path.basename(str(config_path)))
    write_meta(reports, out_dir, started=started, wall=time.perf_counter() - wall,
               threads=threads, seed=seed)
    code = EXIT_PASS if all(r.passed for r in reports) else EXIT_ASSERTION
    return SuiteResult(code, str(out_dir), reports)
