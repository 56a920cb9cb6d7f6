"""Experiment configuration: INI files with sections [system], [run], [output].

The schema is strict: unknown sections or keys are rejected with the line
they appear on, the seed is mandatory, and physics parameters (family,
energy, potential and metric data) have no defaults. Structured values
(matrices, vectors, bounds) are written as JSON.

Example::

    [system]
    family = mechanical
    n = 2
    potential = harmonic
    potential.k = 1.0
    energy = 1.0
    q_bounds = [[-2, 2], [-2, 2]]

    [run]
    seed = 7
    sample_count = 16
"""

import configparser
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import systems as sysmod
from .entropy import EntropyConfig
from .errors import ConfigError
from .jacobi import JacobiConfig

COMMANDS = ("curvature", "lyapunov", "bound", "verify")
PROPERTIES = ("pairing", "riccati", "trace", "oracle", "symplecticity")
FAULTS = ("none", "non_symplectic")

POTENTIAL_PARAMS = {
    "zero": ((), ()),
    "constant": (("c",), ()),
    "harmonic": (("k",), ()),
    "quadratic": (("a",), ("b",)),
    "linear": (("b",), ()),
    "polynomial": (("a",), ("b", "cubic", "quartic")),
    "trig": (("wavevectors", "amplitudes"), ("phases",)),
    "cosine": (("amplitudes", "period"), ()),
    "pendulum": (("strength",), ()),
}
METRICS = ("euclidean", "hyperbolic", "sphere")
FAMILIES = ("mechanical", "geodesic2d", "mechanical_on_metric")

SYSTEM_KEYS = {"family", "n", "potential", "metric", "periods", "energy", "q_bounds"}
RUN_KEYS = {
    # key: (parser, commands that require it)
    "seed": ("int", COMMANDS),
    "sample_count": ("int", ("curvature", "lyapunov", "bound")),
    "T": ("float", ("lyapunov", "bound")),
    "dt": ("float", ("lyapunov", "bound")),
    "scheme": ("str", ()),
    "renorm_interval": ("float", ()),
    "transient": ("float", ()),
    "stencil_h": ("float", ()),
    "richardson_tol": ("float", ()),
    "curvature_tol": ("float", ()),
    "curvature_source": ("str", ()),
    "exclusion_cap": ("float", ()),
    "clamp_rel": ("float", ()),
    "clamp_abs": ("float", ()),
    "rprime_count": ("int", ()),
    "riccati_tol": ("float", ()),
    "batch_size": ("int", ()),
    "history_every": ("int", ()),
    "properties": ("list", ("verify",)),
    "inject_fault": ("str", ()),
}
OUTPUT_KEYS = {"dir": "str"}
POSITIVE = {"T", "dt", "renorm_interval", "stencil_h", "richardson_tol", "curvature_tol", "clamp_rel",
            "riccati_tol", "batch_size", "sample_count", "history_every"}


@dataclass
class ExperimentConfig:
    command: str
    system: dict
    run: dict
    output: dict = field(default_factory=dict)
    source: str = ""

    @property
    def seed(self):
        return self.run["seed"]

    def resolved(self):
        """Plain-data view recorded in reports."""
        return {"command": self.command, "system": self.system, "run": self.run, "output": self.output}

    def entropy_config(self):
        r = self.run
        jac = JacobiConfig(
            h=r.get("stencil_h", JacobiConfig.h),
            richardson_tol=r.get("richardson_tol", JacobiConfig.richardson_tol),
            curvature_tol=r.get("curvature_tol", JacobiConfig.curvature_tol),
            scheme=r.get("scheme"),
        )
        kw = dict(jacobi=jac, scheme=r.get("scheme"))
        for key in ("T", "dt", "renorm_interval", "transient", "curvature_source", "exclusion_cap", "clamp_rel",
                    "clamp_abs", "riccati_tol"):
            if key in r:
                kw[key] = r[key]
        return EntropyConfig(**kw)


def _line_of(text, section, key=None):
    """1-based line of ``[section]`` (or of ``key`` inside it) in the raw text."""
    current = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if key is None and current == section:
                return i
            continue
        if key is not None and current == section and "=" in line:
            if line.split("=", 1)[0].strip() == key:
                return i
    return None


def _parse_value(kind, raw, where):
    try:
        if kind == "int":
            v = int(raw)
        elif kind == "float":
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError("non-finite")
        elif kind == "list":
            v = [s.strip() for s in raw.split(",") if s.strip()]
        elif kind == "json":
            v = json.loads(raw)
        else:
            v = raw.strip()
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind} ({exc})", where.line) from None
    return v


class _Where(str):
    line = None


def _where(text, section, key):
    w = _Where(f"[{section}] {key}")
    w.line = _line_of(text, section, key)
    return w


def parse_config(text, command):
    """Parse INI ``text`` for ``command``; raises ConfigError with line numbers."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",), strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"malformed config: {exc.message if hasattr(exc, 'message') else exc}", line) from None
    allowed = {"system", "run", "output"}
    for sec in parser.sections():
        if sec not in allowed:
            raise ConfigError(f"unknown section [{sec}]", _line_of(text, sec))
    if "run" not in parser:
        raise ConfigError("missing [run] section")
    run = _parse_run(parser["run"], text, command)
    system = {}
    if "system" in parser:
        system = _parse_system(parser["system"], text)
    elif command != "verify":
        raise ConfigError("missing [system] section")
    output = {}
    if "output" in parser:
        for key, raw in parser["output"].items():
            if key not in OUTPUT_KEYS:
                raise ConfigError(f"unknown key {key!r} in [output]", _line_of(text, "output", key))
            output[key] = raw.strip()
    cfg = ExperimentConfig(command, system, run, output, text)
    _validate(cfg, text)
    return cfg


def load_config(path, command):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, command)


def _parse_run(section, text, command):
    run = {}
    for key, raw in section.items():
        if key not in RUN_KEYS:
            raise ConfigError(f"unknown key {key!r} in [run]", _line_of(text, "run", key))
        kind, _ = RUN_KEYS[key]
        w = _where(text, "run", key)
        v = _parse_value(kind, raw, w)
        if key in POSITIVE and not v > 0:
            raise ConfigError(f"{w} must be positive", w.line)
        run[key] = v
    for key, (_, needed) in RUN_KEYS.items():
        if command in needed and key not in run:
            raise ConfigError(f"[run] {key} is required for {command}", _line_of(text, "run"))
    if "curvature_source" in run and run["curvature_source"] not in ("pipeline", "closed_form"):
        raise ConfigError("curvature_source must be pipeline or closed_form",
                          _line_of(text, "run", "curvature_source"))
    if "scheme" in run and run["scheme"] not in ("stormer_verlet", "implicit_midpoint"):
        raise ConfigError("scheme must be stormer_verlet or implicit_midpoint", _line_of(text, "run", "scheme"))
    if "properties" in run:
        if not run["properties"]:
            raise ConfigError("empty property suite", _line_of(text, "run", "properties"))
        for p in run["properties"]:
            if p not in PROPERTIES:
                raise ConfigError(f"unknown property {p!r}; choose from {PROPERTIES}",
                                  _line_of(text, "run", "properties"))
    if run.get("inject_fault", "none") not in FAULTS:
        raise ConfigError(f"inject_fault must be one of {FAULTS}", _line_of(text, "run", "inject_fault"))
    if "T" in run and not run["T"] > run.get("renorm_interval", 0.5):
        raise ConfigError("T must exceed renorm_interval", _line_of(text, "run", "T"))
    if "transient" in run and "T" in run and not run["transient"] < run["T"]:
        raise ConfigError("transient must be shorter than T", _line_of(text, "run", "transient"))
    if "exclusion_cap" in run and not 0 <= run["exclusion_cap"] <= 1:
        raise ConfigError("exclusion_cap must lie in [0, 1]", _line_of(text, "run", "exclusion_cap"))
    if "clamp_abs" in run and run["clamp_abs"] < 0:
        raise ConfigError("clamp_abs must be nonnegative", _line_of(text, "run", "clamp_abs"))
    if "transient" in run and run["transient"] < 0:
        raise ConfigError("transient must be nonnegative", _line_of(text, "run", "transient"))
    return run


def _parse_system(section, text):
    out = {}
    for key, raw in section.items():
        base = key.split(".", 1)[0]
        w = _where(text, "system", key)
        if base not in SYSTEM_KEYS:
            raise ConfigError(f"unknown key {key!r} in [system]", w.line)
        if "." in key and base not in ("potential", "metric"):
            raise ConfigError(f"unknown key {key!r} in [system]", w.line)
        if key in ("family", "potential", "metric"):
            out[key] = raw.strip()
        elif key == "n":
            out[key] = _parse_value("int", raw, w)
        elif key == "energy":
            out[key] = _parse_value("float", raw, w)
        else:
            out[key] = _parse_value("json", raw, w)
    return out


def _validate(cfg, text):
    s = cfg.system
    if not s:
        return

    def need(key):
        if key not in s:
            raise ConfigError(f"[system] {key} is required", _line_of(text, "system"))

    need("family")
    need("energy")
    fam = s["family"]
    if fam not in FAMILIES:
        raise ConfigError(f"family must be one of {FAMILIES}", _line_of(text, "system", "family"))
    if fam in ("mechanical", "mechanical_on_metric"):
        need("potential")
    if fam in ("geodesic2d", "mechanical_on_metric"):
        need("metric")
        if s["metric"] not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}", _line_of(text, "system", "metric"))
        if "n" in s and s["n"] != 2:
            raise ConfigError("metric families are two-dimensional", _line_of(text, "system", "n"))
    if fam == "mechanical":
        need("n")
        if s["n"] < 1:
            raise ConfigError("n must be >= 1", _line_of(text, "system", "n"))
    if fam == "geodesic2d" and "potential" in s:
        raise ConfigError("geodesic2d takes no potential", _line_of(text, "system", "potential"))
    if "potential" in s:
        kind = s["potential"]
        if kind not in POTENTIAL_PARAMS:
            raise ConfigError(f"potential must be one of {tuple(POTENTIAL_PARAMS)}",
                              _line_of(text, "system", "potential"))
        required, optional = POTENTIAL_PARAMS[kind]
        given = {k.split(".", 1)[1] for k in s if k.startswith("potential.")}
        for k in required:
            if k not in given:
                raise ConfigError(f"[system] potential.{k} is required for potential = {kind}",
                                  _line_of(text, "system", "potential"))
        for k in given - set(required) - set(optional):
            raise ConfigError(f"unknown key 'potential.{k}' for potential = {kind}",
                              _line_of(text, "system", f"potential.{k}"))
    for k in s:
        if k.startswith("metric."):
            raise ConfigError(f"unknown key {k!r}: built-in metrics take no parameters",
                              _line_of(text, "system", k))
    try:
        system = build_system(s)
    except (ValueError, TypeError, IndexError) as exc:
        raise ConfigError(f"invalid system parameters: {exc}", _line_of(text, "system")) from None
    bounds = s.get("q_bounds")
    if bounds is not None and (not isinstance(bounds, list) or len(bounds) != system.n):
        raise ConfigError(f"q_bounds needs one entry per coordinate ({system.n})", _line_of(text, "system", "q_bounds"))
    for i, period in enumerate(system.periods):
        b = bounds[i] if bounds is not None else None
        if b is None and period is None:
            raise ConfigError(f"coordinate q{i} needs a q_bounds entry (it is not periodic)",
                              _line_of(text, "system", "q_bounds") or _line_of(text, "system"))
        if b is not None and not (isinstance(b, list) and len(b) == 2 and b[0] < b[1]):
            raise ConfigError(f"q_bounds entry {i} must be [low, high] with low < high",
                              _line_of(text, "system", "q_bounds"))


def _potential(s, n):
    kind = s["potential"]
    par = {k.split(".", 1)[1]: v for k, v in s.items() if k.startswith("potential.")}
    if kind == "zero":
        return sysmod.zero_potential(n)
    if kind == "constant":
        return sysmod.constant_potential(n, float(par["c"]))
    if kind == "harmonic":
        return sysmod.harmonic_potential(n, float(par["k"]))
    if kind == "quadratic":
        return sysmod.quadratic_potential(np.asarray(par["a"], float), par.get("b"))
    if kind == "linear":
        return sysmod.linear_potential(par["b"])
    if kind == "polynomial":
        return sysmod.polynomial_potential(np.asarray(par["a"], float), par.get("b"), par.get("cubic"),
                                           par.get("quartic"))
    if kind == "trig":
        return sysmod.trig_potential(par["wavevectors"], par["amplitudes"], par.get("phases"))
    if kind == "cosine":
        return sysmod.cosine_potential(par["amplitudes"], float(par["period"]))
    if kind == "pendulum":
        return sysmod.pendulum_potential(float(par["strength"]))
    raise ConfigError(f"unknown potential {kind!r}")


def _metric(name):
    return {"euclidean": sysmod.euclidean_metric, "hyperbolic": sysmod.hyperbolic_metric,
            "sphere": sysmod.sphere_metric}[name]()


def build_system(s):
    """HamiltonianSystem from a parsed [system] dict (picklable input)."""
    fam = s["family"]
    periods = s.get("periods")
    if periods is not None:
        periods = tuple(None if p is None else float(p) for p in periods)
    if fam == "mechanical":
        pot = _potential(s, s["n"])
        if pot.n != s["n"]:
            raise ValueError(f"potential dimension {pot.n} does not match n = {s['n']}")
        return sysmod.mechanical(pot, periods=periods)
    metric = _metric(s["metric"])
    if fam == "geodesic2d":
        return sysmod.geodesic2d(metric, periods=periods)
    pot = _potential(s, 2)
    if pot.n != 2:
        raise ValueError("metric families need a two-dimensional potential")
    return sysmod.mechanical_on_metric(metric, pot, periods=periods)


def build_level_set(s):
    system = build_system(s)
    bounds = s.get("q_bounds")
    if bounds is not None:
        bounds = tuple(None if b is None else (float(b[0]), float(b[1])) for b in bounds)
    return sysmod.level_set(system, s["energy"], q_bounds=bounds)
