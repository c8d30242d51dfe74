"""YAML experiment configuration: documented key set, defaults and validation.

Every key is optional; omitted keys take the defaults in ``SCHEMA``.  Errors
name the file and line of the offending key.  The config hash covers the
effective configuration (defaults filled, seed override applied) with keys
sorted, so reordering keys does not change it; ``threads`` and ``cache`` do
not affect results and are left out of the hash.

Sections and keys::

    seed: 0
    threads: 1
    coefficients: {b: "constant:0", sigma: "constant:1"}
    initial_law: {name: normal, <law parameters>}
    grid: {dx: 0.02, dt: null, domain: null, T: 1.0, csv_time_stride: null}
    kernel: {s: 0.0, y: [0.0], times: null, mollifier_width: null, bounds_window: 4.0}
    simulate: {n: 200, dt: 0.01, T: null, observe_every: 10}
    chaos: {p: 2, n_list: [50, 100, 200, 400, 800], replications: 200, dt: 0.01,
            T: null, bootstrap: 1000}
    clt: {n: 2000, replications: 2000, dt: 0.01, observables: [...]}
    identity: {n: 200, t: 0.5, dts: [0.01, 0.005, 0.0025], replications: 16, gamma: {...}}
    wasserstein: {p: 2, n_list: [100, 1000, 10000], replications: 500}
    cache: {enabled: true, dir: null}

An observable is ``{kind: G|H, t: <time>, label: <name>, gamma: <bump>}``
and a bump is ``{type: bump, center, half_width, amplitude, rate}``.
"""

import hashlib
import json
from dataclasses import dataclass

import yaml

from .errors import ConfigurationError

DEFAULT_GAMMA = {"type": "bump", "center": 0.3, "half_width": 1.5, "amplitude": 1.0, "rate": 0.5}


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _pos(v):
    return _num(v) and v > 0


def _posint(v):
    return isinstance(v, int) and not isinstance(v, bool) and v > 0


def _opt(check):
    return lambda v: v is None or check(v)


def _list(check, min_len=1):
    return lambda v: isinstance(v, list) and len(v) >= min_len and all(check(x) for x in v)


def _interval(v):
    return isinstance(v, list) and len(v) == 2 and all(_num(x) for x in v) and v[0] < v[1]


def _coeff(v):
    return isinstance(v, str) or _num(v)


# key -> (check, default, description of the expected value)
SCHEMA = {
    "seed": (lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 0, 0, "non-negative integer"),
    "threads": (_posint, 1, "positive integer"),
    "coefficients": {
        "b": (_coeff, "constant:0", "coefficient spec string or number"),
        "sigma": (_coeff, "constant:1", "coefficient spec string or number"),
    },
    "initial_law": None,  # free-form: name plus parameters, validated by the law factory
    "grid": {
        "dx": (_pos, 0.02, "positive number"),
        "dt": (_opt(_pos), None, "positive number or null"),
        "domain": (_opt(_interval), None, "[lo, hi] with lo < hi, or null"),
        "T": (_pos, 1.0, "positive number"),
        "csv_time_stride": (_opt(_posint), None, "positive integer or null"),
    },
    "kernel": {
        "s": (lambda v: _num(v) and v >= 0, 0.0, "non-negative number"),
        "y": (_list(_num), [0.0], "list of numbers"),
        "times": (_opt(_list(_pos)), None, "list of positive numbers or null"),
        "mollifier_width": (_opt(_pos), None, "positive number or null"),
        "bounds_window": (_pos, 4.0, "positive number"),
    },
    "simulate": {
        "n": (_posint, 200, "positive integer"),
        "dt": (_pos, 0.01, "positive number"),
        "T": (_opt(_pos), None, "positive number or null"),
        "observe_every": (_posint, 10, "positive integer"),
    },
    "chaos": {
        "p": (lambda v: _num(v) and v >= 1, 2, "number >= 1"),
        "n_list": (_list(_posint, 2), [50, 100, 200, 400, 800], "list of positive integers"),
        "replications": (lambda v: _posint(v) and v >= 2, 200, "integer >= 2"),
        "dt": (_pos, 0.01, "positive number"),
        "T": (_opt(_pos), None, "positive number or null"),
        "bootstrap": (_posint, 1000, "positive integer"),
    },
    "clt": {
        "n": (_posint, 2000, "positive integer"),
        "replications": (lambda v: _posint(v) and v >= 8, 2000, "integer >= 8"),
        "dt": (_pos, 0.01, "positive number"),
        "observables": (_list(lambda o: isinstance(o, dict)),
                        [{"kind": "G", "t": 0.0, "label": "G_t0", "gamma": DEFAULT_GAMMA},
                         {"kind": "G", "t": 0.5, "label": "G_t0.5", "gamma": DEFAULT_GAMMA}],
                        "list of observable mappings"),
    },
    "identity": {
        "n": (_posint, 200, "positive integer"),
        "t": (_pos, 0.5, "positive number"),
        "dts": (_list(_pos, 2), [0.01, 0.005, 0.0025], "list of positive numbers"),
        "replications": (_posint, 16, "positive integer"),
        "gamma": (lambda v: isinstance(v, dict), DEFAULT_GAMMA, "bump mapping"),
    },
    "wasserstein": {
        "p": (lambda v: _num(v) and v >= 1, 2, "number >= 1"),
        "n_list": (_list(_posint, 2), [100, 1000, 10000], "list of positive integers"),
        "replications": (lambda v: _posint(v) and v >= 2, 500, "integer >= 2"),
    },
    "cache": {
        "enabled": (lambda v: isinstance(v, bool), True, "true or false"),
        "dir": (_opt(lambda v: isinstance(v, str)), None, "path or null"),
    },
}

UNHASHED = ("threads", "cache")


def _line_map(node, source, path=(), out=None):
    """``{key path: 1-based line}`` for every node of a composed YAML document."""
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            if path + (key,) in out:
                raise ConfigurationError(f"{source}:{k.start_mark.line + 1}: duplicate key {key!r}")
            _line_map(v, source, path + (key,), out)
            out[path + (key,)] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_map(v, source, path + (i,), out)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration; ``data`` holds every section with defaults filled."""

    data: dict
    source: str = "<config>"

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self):
        return self.data["seed"]

    def hashed(self):
        return {k: v for k, v in self.data.items() if k not in UNHASHED}

    @property
    def hash(self):
        text = json.dumps(self.hashed(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _fail(source, lines, path, msg):
    line = None
    for k in range(len(path), -1, -1):
        if path[:k] in lines:
            line = lines[path[:k]]
            break
    where = f"{source}:{line}" if line else source
    raise ConfigurationError(f"{where}: {msg}")


def _check_gamma(g, source, lines, path):
    allowed = {"type", "center", "half_width", "amplitude", "rate"}
    for k in g:
        if k not in allowed:
            _fail(source, lines, path + (k,), f"unknown test-function key {k!r}")
    if g.get("type", "bump") != "bump":
        _fail(source, lines, path + ("type",), "only 'bump' test functions are supported")
    for k in allowed - {"type"}:
        if k in g and not _num(g[k]):
            _fail(source, lines, path + (k,), f"{k} must be a number")
    if "half_width" in g and g["half_width"] <= 0:
        _fail(source, lines, path + ("half_width",), "half_width must be positive")
    return {**DEFAULT_GAMMA, **g}


def parse_config(text, source="<config>", seed=None):
    """Parse and validate YAML text; ``seed`` overrides the configured seed."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigurationError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    raw = {} if raw is None else raw
    lines = _line_map(root, source) if root is not None else {}
    if not isinstance(raw, dict):
        _fail(source, lines, (), "top level must be a mapping")
    data = {}
    for key, value in raw.items():
        if key not in SCHEMA:
            _fail(source, lines, (key,), f"unknown key {key!r}; expected one of {sorted(SCHEMA)}")
    for key, spec in SCHEMA.items():
        value = raw.get(key)
        if spec is None:
            if value is None:
                value = {"name": "normal"}
            if not isinstance(value, dict) or not isinstance(value.get("name", "normal"), str):
                _fail(source, lines, (key,), "initial_law must be a mapping with a 'name'")
            data[key] = {"name": "normal", **value}
        elif isinstance(spec, dict):
            if value is None:
                value = {}
            if not isinstance(value, dict):
                _fail(source, lines, (key,), f"section {key!r} must be a mapping")
            section = {}
            for sub, v in value.items():
                if sub not in spec:
                    _fail(source, lines, (key, sub),
                          f"unknown key {key}.{sub}; expected one of {sorted(spec)}")
            for sub, (check, default, desc) in spec.items():
                v = value.get(sub, default)
                if not check(v):
                    _fail(source, lines, (key, sub), f"{key}.{sub} must be {desc}, got {v!r}")
                section[sub] = v
            data[key] = section
        else:
            check, default, desc = spec
            v = raw.get(key, default)
            if not check(v):
                _fail(source, lines, (key,), f"{key} must be {desc}, got {v!r}")
            data[key] = v
    data["identity"]["gamma"] = _check_gamma(data["identity"]["gamma"], source, lines, ("identity", "gamma"))
    obs = []
    for i, o in enumerate(data["clt"]["observables"]):
        path = ("clt", "observables", i)
        for k in o:
            if k not in ("kind", "t", "label", "gamma"):
                _fail(source, lines, path + (k,), f"unknown observable key {k!r}")
        kind = o.get("kind", "G")
        if kind not in ("G", "H"):
            _fail(source, lines, path + ("kind",), "observable kind must be G or H")
        t = o.get("t", 0.0)
        if not (_num(t) and t >= 0):
            _fail(source, lines, path + ("t",), "observable time must be a non-negative number")
        gamma = _check_gamma(o.get("gamma", {}), source, lines, path + ("gamma",))
        obs.append({"kind": kind, "t": t, "label": str(o.get("label", f"{kind}{i}")), "gamma": gamma})
    data["clt"]["observables"] = obs
    if seed is not None:
        if seed < 0:
            raise ConfigurationError("--seed must be non-negative")
        data["seed"] = int(seed)
    T = data["grid"]["T"]
    for sec, key in (("simulate", "T"), ("chaos", "T")):
        if data[sec][key] is None:
            data[sec][key] = T
        if data[sec][key] > T + 1e-12:
            _fail(source, lines, (sec, key), f"{sec}.T exceeds grid.T = {T}")
    for i, o in enumerate(obs):
        if o["t"] > T + 1e-12:
            _fail(source, lines, ("clt", "observables", i, "t"), f"observable time exceeds grid.T = {T}")
    if data["identity"]["t"] > T + 1e-12:
        _fail(source, lines, ("identity", "t"), f"identity.t exceeds grid.T = {T}")
    return ExperimentConfig(data=data, source=source)


def load_config(path, seed=None):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, source=str(path), seed=seed)
