"""Experiment configuration files.

A config is a YAML document::

    schema_version: 1
    experiments:
      - name: rk4-vs-euler-adjoint
        problem: linear-scalar        # zoo name
        theta: [0.3]                  # optional overrides of the zoo defaults
        z0: [1.0]
        t_span: [0.0, 1.0]
        loss: {kind: sum, labels: [1.0]}
        seed: 4                       # optional: randomise theta and z0
        forward_scheme: rk4
        grids: [10, 20, 40]
        backward_scheme: rk4          # default for continuous methods
        quadrature: scheme-matched
        methods:
          - backprop
          - {name: cont_adjoint, backward_scheme: euler}
        assertions:
          - {kind: slope, method: "cont_adjoint[euler]", reference: backprop,
             expected: 1.0, tol: 0.3}

Errors raise :class:`ConfigError` naming the offending field and its line.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

import yaml

from ..continuous_adjoint import QuadratureRule
from ..schemes import SCHEMES
from .zoo import LOSS_KINDS, ProblemSpec, zoo

SCHEMA_VERSION = 1

CONTINUOUS = ("cont_adjoint", "cont_adjoint_weighted")
METHODS = ("cont_adjoint", "cont_adjoint_weighted", "discrete_adjoint", "backprop", "fd", "tangent")
ASSERTION_KINDS = ("max_discrepancy", "min_discrepancy", "slope", "close", "max_norm", "weighted_consistency")


class ConfigError(ValueError):
    pass


class _LineDict(dict):
    lines: dict


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = _LineDict()
    out.lines = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        out[key] = loader.construct_object(value_node, deep=True)
        out.lines[key] = key_node.start_mark.line + 1
    out.lines["__self__"] = node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)
# YAML 1.1 reads 1e-6 and 1.0e200 as strings; accept the 1.2 exponent forms
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*(?:\.[0-9_]*)?|\.[0-9_]+)[eE][-+]?[0-9]+$"),
    list("-+0123456789."),
)


@dataclass(frozen=True)
class MethodSpec:
    name: str
    backward_scheme: Optional[str] = None
    quadrature: Optional[str] = None
    key: str = ""


@dataclass(frozen=True)
class AssertionSpec:
    kind: str
    params: dict


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    problem: ProblemSpec
    forward_scheme: str
    grids: tuple
    methods: tuple
    fd_epsilon: float = 1e-6
    assertions: tuple = field(default_factory=tuple)
    output: str = ""

    @property
    def stem(self) -> str:
        return self.output or self.name


def _where(d, key, path):
    line = getattr(d, "lines", {}).get(key) or getattr(d, "lines", {}).get("__self__")
    loc = f"{path}.{key}" if key is not None else path
    return f"{loc} (line {line})" if line else loc


def _fail(d, key, path, msg):
    raise ConfigError(f"{_where(d, key, path)}: {msg}")


def _number_list(d, key, path, length=None):
    val = d[key]
    if not isinstance(val, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in val):
        _fail(d, key, path, "expected a list of numbers")
    if length is not None and len(val) != length:
        _fail(d, key, path, f"expected {length} entries, got {len(val)}")
    return [float(x) for x in val]


def _check_keys(d, allowed, path):
    for key in d:
        if key not in allowed:
            _fail(d, key, path, f"unknown field (allowed: {', '.join(sorted(allowed))})")


def _parse_method(entry, path, default_bwd, default_quad):
    if isinstance(entry, str):
        name, bwd, quad, ident, src = entry, None, None, None, None
    elif isinstance(entry, dict):
        _check_keys(entry, {"name", "backward_scheme", "quadrature", "id"}, path)
        if "name" not in entry:
            _fail(entry, None, path, "method table needs a 'name'")
        name = entry["name"]
        bwd = entry.get("backward_scheme")
        quad = entry.get("quadrature")
        ident = entry.get("id")
        src = entry
    else:
        raise ConfigError(f"{path}: expected a method name or table")
    if name not in METHODS:
        raise ConfigError(f"{path}: unknown method {name!r} (choose from {', '.join(METHODS)})")
    if name not in CONTINUOUS:
        for key, val in (("backward_scheme", bwd), ("quadrature", quad)):
            if val is not None:
                _fail(src, key, path, f"{name} takes no {key}: its scheme is the forward scheme")
    if bwd is not None and bwd not in SCHEMES:
        _fail(src, "backward_scheme", path, f"unknown scheme {bwd!r}")
    if quad is not None:
        try:
            QuadratureRule(quad)
        except ValueError as exc:
            _fail(src, "quadrature", path, str(exc))
    if ident is None:
        tags = [x for x in (bwd, quad) if x is not None]
        ident = f"{name}[{'/'.join(tags)}]" if tags else name
    if name in CONTINUOUS:
        bwd = bwd or default_bwd
        quad = quad or default_quad
    return MethodSpec(name, bwd, quad, ident)


_EXPERIMENT_KEYS = {
    "name", "problem", "theta", "z0", "t_span", "loss", "seed", "forward_scheme", "grids",
    "methods", "backward_scheme", "quadrature", "fd_epsilon", "assertions", "output",
}

_ASSERTION_PARAMS = {
    "max_discrepancy": ({"a", "b", "tol"}, {"grids"}),
    "min_discrepancy": ({"a", "b", "tol"}, {"grid"}),
    "slope": ({"method", "reference", "expected", "tol"}, set()),
    "close": ({"method", "reference", "rtol"}, {"grids", "value"}),
    "max_norm": ({"method", "tol"}, {"grids"}),
    "weighted_consistency": ({"tol"}, {"method"}),
}


def _parse_assertion(entry, path):
    if not isinstance(entry, dict) or "kind" not in entry:
        raise ConfigError(f"{path}: assertion must be a table with a 'kind'")
    kind = entry["kind"]
    if kind not in _ASSERTION_PARAMS:
        _fail(entry, "kind", path, f"unknown assertion kind {kind!r} (choose from {', '.join(ASSERTION_KINDS)})")
    required, optional = _ASSERTION_PARAMS[kind]
    _check_keys(entry, required | optional | {"kind"}, path)
    for key in sorted(required):
        if key not in entry:
            _fail(entry, None, path, f"{kind} assertion needs '{key}'")
    if kind == "slope" and entry["reference"] not in ("backprop", "fd_finest"):
        _fail(entry, "reference", path, "slope reference must be 'backprop' or 'fd_finest'")
    if kind == "close" and entry["reference"] not in ("closed_form", "value"):
        _fail(entry, "reference", path, "close reference must be 'closed_form' or 'value'")
    if kind == "close" and entry["reference"] == "value" and "value" not in entry:
        _fail(entry, None, path, "close with reference 'value' needs 'value'")
    return AssertionSpec(kind, {k: v for k, v in entry.items() if k != "kind"})


def _parse_experiment(d, path, global_seed):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: experiment must be a table")
    _check_keys(d, _EXPERIMENT_KEYS, path)
    for key in ("name", "problem", "forward_scheme", "grids", "methods"):
        if key not in d:
            _fail(d, None, path, f"missing required field '{key}'")
    name = d["name"]
    if not isinstance(name, str) or not name or any(ch in name for ch in "/\\"):
        _fail(d, "name", path, "name must be a non-empty string without path separators")
    try:
        problem = zoo(d["problem"])
    except ValueError as exc:
        _fail(d, "problem", path, str(exc))
    fwd = d["forward_scheme"]
    if fwd not in SCHEMES:
        _fail(d, "forward_scheme", path, f"unknown scheme {fwd!r} (choose from {', '.join(SCHEMES)})")

    grids = d["grids"]
    if not isinstance(grids, list) or not grids or not all(isinstance(n, int) and not isinstance(n, bool) and n >= 1 for n in grids):
        _fail(d, "grids", path, "expected a non-empty list of positive integers")
    if len(set(grids)) != len(grids):
        _fail(d, "grids", path, "grid sizes must be distinct")

    over = {}
    if "theta" in d:
        over["theta"] = _number_list(d, "theta", path, len(problem.theta))
    if "z0" in d:
        over["z0"] = _number_list(d, "z0", path, len(problem.z0))
    if "t_span" in d:
        t0, t1 = _number_list(d, "t_span", path, 2)
        if not t1 > t0:
            _fail(d, "t_span", path, "t_span must be increasing")
        over["t0"], over["t_end"] = t0, t1
    if "loss" in d:
        loss = d["loss"]
        lpath = f"{path}.loss"
        if not isinstance(loss, dict):
            _fail(d, "loss", path, "expected a table with 'kind' and/or 'labels'")
        _check_keys(loss, {"kind", "labels"}, lpath)
        if "kind" in loss:
            if loss["kind"] not in LOSS_KINDS:
                _fail(loss, "kind", lpath, f"unknown loss kind {loss['kind']!r}")
            over["loss_kind"] = loss["kind"]
        if "labels" in loss:
            labels = _number_list(loss, "labels", lpath)
            if not labels:
                _fail(loss, "labels", lpath, "need at least one label time")
            over["label_times"] = labels
    if "seed" in d:
        seed = d["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            _fail(d, "seed", path, "seed must be a non-negative integer")
        if global_seed is not None:
            import numpy as np

            seed = int(np.random.SeedSequence([int(global_seed), seed]).generate_state(1)[0])
        over["seed"] = seed
    problem = problem.with_overrides(**over)

    labels = problem.label_times
    if any(b <= a for a, b in zip(labels, labels[1:])):
        _fail(d, "loss", path, "label times must be strictly ascending")
    if not all(problem.t0 < t <= problem.t_end for t in labels):
        _fail(d, "loss", path, "label times must lie in (t0, t_end]")
    span = problem.t_end - problem.t0
    for n in grids:
        h = span / n
        for t in labels:
            k = round((t - problem.t0) / h)
            if abs(problem.t0 + k * h - t) > 1e-12 * span:
                _fail(d, "grids", path, f"label time {t} is not a node of the {n}-step grid")
    if SCHEMES[fwd].is_multistep and min(grids) < SCHEMES[fwd].steps:
        _fail(d, "grids", path, f"{fwd} needs at least {SCHEMES[fwd].steps} steps")

    default_bwd = d.get("backward_scheme", fwd)
    if default_bwd not in SCHEMES:
        _fail(d, "backward_scheme", path, f"unknown scheme {default_bwd!r}")
    default_quad = d.get("quadrature", "scheme-matched")
    try:
        QuadratureRule(default_quad)
    except ValueError as exc:
        _fail(d, "quadrature", path, str(exc))

    if not isinstance(d["methods"], list) or not d["methods"]:
        _fail(d, "methods", path, "expected a non-empty list")
    methods = [_parse_method(m, f"{path}.methods[{i}]", default_bwd, default_quad)
               for i, m in enumerate(d["methods"])]
    keys = [m.key for m in methods]
    if len(set(keys)) != len(keys):
        _fail(d, "methods", path, f"duplicate method ids: {keys}")

    fd_eps = d.get("fd_epsilon", 1e-6)
    if not isinstance(fd_eps, (int, float)) or not fd_eps > 0:
        _fail(d, "fd_epsilon", path, "fd_epsilon must be positive")

    assertions = d.get("assertions", [])
    if not isinstance(assertions, list):
        _fail(d, "assertions", path, "expected a list")
    parsed = tuple(_parse_assertion(a, f"{path}.assertions[{i}]") for i, a in enumerate(assertions))
    output = d.get("output", "")
    if not isinstance(output, str) or any(ch in output for ch in "/\\") or output.startswith("."):
        _fail(d, "output", path, "output must be a plain file stem")
    return ExperimentSpec(name, problem, fwd, tuple(grids), tuple(methods), float(fd_eps), parsed, output)


def parse_config(text: str, source="<config>", global_seed=None) -> list:
    """Parse config text into a list of :class:`ExperimentSpec`."""
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{source}: YAML syntax error at {where}: {exc.problem}") from None
    if doc is None:
        doc = _LineDict()
        doc.lines = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    _check_keys(doc, {"schema_version", "experiments"}, source)
    if doc.get("schema_version") != SCHEMA_VERSION:
        _fail(doc, "schema_version", source, f"schema_version must be {SCHEMA_VERSION}")
    exps = doc.get("experiments", []) or []
    if not isinstance(exps, list):
        _fail(doc, "experiments", source, "expected a list")
    out = [_parse_experiment(e, f"experiments[{i}]", global_seed) for i, e in enumerate(exps)]
    names = [e.stem for e in out]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        _fail(doc, "experiments", source, f"duplicate experiment names or outputs: {dupes}")
    return out


def load_config(path, global_seed=None) -> list:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config(text, str(path), global_seed)
