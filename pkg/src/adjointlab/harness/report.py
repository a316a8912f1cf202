"""Report files.

Per experiment ``<stem>.json`` (full structured report) and ``<stem>.csv``
(one row per method and grid); per suite ``summary.json``/``summary.csv``.
Everything that varies between identical runs (timestamps, runtimes) goes
to ``meta.json`` so the other files are byte-reproducible.

JSON report fields
------------------
experiment, problem, forward_scheme, grids, methods, theta, z0,
closed_form, trajectories (n_steps -> token), results (list of
{method, kind, n_steps, gradient, error, trajectory, extras}),
discrepancies (list of {n_steps, a, b, value}), slopes
(method -> reference -> {slope, intercept, residual, n_points, excluded}),
assertions (list with observed values and passed flags), passed.
"""
from __future__ import annotations

import csv
import json
import os
import threading

import numpy as np

from .._accel import backend_name

_write_lock = threading.Lock()


def _clean(x):
    """JSON-ready copy: arrays to lists, non-finite floats to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def report_dict(rep) -> dict:
    results = []
    for key in rep.methods:
        for n in rep.grids:
            r = rep.result(key, n)
            results.append({
                "method": key, "kind": r.method, "n_steps": n, "gradient": r.gradient,
                "error": r.error, "trajectory": r.trajectory, "extras": r.extras,
            })
    discs = [{"n_steps": n, "a": a, "b": b, "value": v}
             for n in rep.grids for (a, b), v in rep.discrepancies[n].items()]
    return _clean({
        "experiment": rep.experiment,
        "problem": rep.problem,
        "forward_scheme": rep.forward_scheme,
        "grids": list(rep.grids),
        "methods": list(rep.methods),
        "theta": rep.theta,
        "z0": rep.z0,
        "closed_form": rep.closed_form,
        "trajectories": {str(n): rep.trajectories.get(n) for n in rep.grids},
        "results": results,
        "discrepancies": discs,
        "slopes": rep.slopes,
        "assertions": rep.assertions,
        "passed": rep.passed,
    })


def _fmt(v):
    return "" if v is None else repr(float(v))


def csv_rows(rep):
    P = len(rep.theta)
    header = ["problem", "method", "n_steps"] + [f"grad_{j}" for j in range(P)] + ["discrepancy_vs_backprop"]
    rows = [header]
    for key in rep.methods:
        for n in rep.grids:
            g = rep.gradient(key, n)
            comps = [_fmt(x) for x in g] if g is not None else [""] * P
            rows.append([rep.problem, key, str(n)] + comps + [_fmt(rep.discrepancy(key, "backprop", n))])
    return rows


def _write_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def write_report(rep, out_dir) -> tuple:
    os.makedirs(out_dir, exist_ok=True)
    jpath = os.path.join(out_dir, f"{rep.stem}.json")
    cpath = os.path.join(out_dir, f"{rep.stem}.csv")
    with _write_lock:
        _write_json(jpath, report_dict(rep))
        _write_csv(cpath, csv_rows(rep))
    return jpath, cpath


def write_summary(reports, out_dir, config_name) -> None:
    exps = [{
        "experiment": r.experiment,
        "report": f"{r.stem}.json",
        "passed": r.passed,
        "n_errors": len(r.errors),
        "assertions": [{"kind": a["kind"], "passed": a["passed"]} for a in r.assertions],
    } for r in reports]
    summary = {"config": config_name, "passed": all(r.passed for r in reports), "experiments": exps}
    rows = [["experiment", "assertion", "kind", "passed"]]
    for r in reports:
        for i, a in enumerate(r.assertions):
            rows.append([r.experiment, str(i), a["kind"], "pass" if a["passed"] else "FAIL"])
    with _write_lock:
        _write_json(os.path.join(out_dir, "summary.json"), _clean(summary))
        _write_csv(os.path.join(out_dir, "summary.csv"), rows)


def write_meta(reports, out_dir, *, started, wall, threads, seed) -> None:
    meta = {
        "started": started,
        "wall_seconds": wall,
        "backend": backend_name(),
        "threads": threads,
        "seed": seed,
        "runtimes": {r.experiment: r.runtimes for r in reports},
    }
    with _write_lock:
        _write_json(os.path.join(out_dir, "meta.json"), _clean(meta))
