"""YAML run configuration: schema, defaults, validation and the built-in
field kinds used for ``N(x)``, ``gamma(x)`` and test functions."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from .core_types import (
    Box,
    DistributionLaw,
    Particle,
    get_shape,
    make_plane_wave,
)
from .errors import ValidationError

SCENARIOS = ("single", "multi", "effective", "converge", "nrcheck", "lemma3")
SOLVERS = ("auto", "direct", "iterative", "krylov")

DEFAULTS: dict[str, Any] = {
    "scenario": None,
    "seed": 0,
    "physics": {
        "k": 1.0,
        "amplitude": [1.0, 0.0, 0.0],
        "direction": [0.0, 0.0, 1.0],
        "omega": 1.0,
        "mu": 1.0,
    },
    "particle": {
        "center": [0.0, 0.0, 0.0],
        "radius": 0.05,
        "gamma": 1.0,
        "kappa": 1.0,
        "shape": "constant",
    },
    "particles": [],
    "law": {
        "kappa": 1.0,
        "domain": {"lo": [0.0, 0.0, 0.0], "hi": [1.0, 1.0, 1.0]},
        "density": {"kind": "constant", "value": 1.0},
        "gamma": {"kind": "constant", "value": 30.0},
        "a": 0.05,
    },
    "numerics": {
        "n_r": 24,
        "n_theta": 24,
        "n_phi": 48,
        "mesh": 24,
        "solver": "auto",
        "tol": 1e-12,
        "oracle": False,
        "oracle_cells": 12,
        "field_h": False,
    },
    "probes": [[0.5, 0.5, 1.5]],
    "a_sequence": [0.05, 0.025],
    "function": {"kind": "constant", "value": 1.0},
    "nrcheck": {
        "omega": 2.0,
        "index": None,
        "coefficient": None,
        "wave_speed": 1.0,
    },
    "output": {"dir": "out", "format": "json", "name": "report"},
}

# keys whose value is free-form (validated by dedicated parsers)
_OPEN = {"particles", "probes", "a_sequence", "function", "density", "gamma", "index", "coefficient"}


def _merge(defaults: dict, given: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ValidationError(f"unknown config key {where!r}")
        if isinstance(defaults[key], dict) and key not in _OPEN:
            if not isinstance(value, dict):
                raise ValidationError(f"config section {where!r} must be a mapping")
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = value
    return out


def parse_complex(value, name: str = "value") -> complex:
    """Numbers, ``{re, im}`` mappings or ``[re, im]`` pairs."""
    if isinstance(value, dict):
        extra = set(value) - {"re", "im"}
        if extra:
            raise ValidationError(f"{name}: unexpected keys {sorted(extra)}")
        return complex(float(value.get("re", 0.0)), float(value.get("im", 0.0)))
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return complex(value)
    raise ValidationError(f"{name}: expected a number or {{re, im}}, got {value!r}")


def _vector(value, name: str, dtype=float) -> np.ndarray:
    try:
        if dtype is complex:
            v = np.array([parse_complex(c, name) for c in value])
        else:
            v = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name}: {exc}") from exc
    if v.shape != (3,):
        raise ValidationError(f"{name} must have three components")
    return v


# ---------------------------------------------------------------- built-ins

def _kind_constant(spec, name):
    value = parse_complex(spec.get("value", 1.0), name)
    return lambda x: np.full(np.shape(x)[:-1], value)


def _kind_gaussian_bump(spec, name):
    amp = parse_complex(spec.get("amplitude", 1.0), name)
    base = parse_complex(spec.get("base", 0.0), name)
    center = _vector(spec.get("center", [0.5, 0.5, 0.5]), f"{name}.center")
    width = float(spec.get("width", 0.15))
    if width <= 0:
        raise ValidationError(f"{name}.width must be positive")
    return lambda x: base + amp * np.exp(-np.sum((np.asarray(x) - center) ** 2, axis=-1) / (2 * width**2))


def _kind_polynomial(spec, name):
    """``terms: [[coefficient, [i, j, k]], ...]`` meaning ``sum c x^i y^j z^k``."""
    terms = []
    for t in spec.get("terms", []):
        if not (isinstance(t, (list, tuple)) and len(t) == 2 and len(t[1]) == 3):
            raise ValidationError(f"{name}.terms entries must be [coefficient, [i, j, k]]")
        powers = [int(p) for p in t[1]]
        if min(powers) < 0:
            raise ValidationError(f"{name}: negative power in {t}")
        terms.append((parse_complex(t[0], name), powers))

    def f(x):
        x = np.asarray(x, float)
        out = np.zeros(x.shape[:-1], complex)
        for c, (i, j, k) in terms:
            out = out + c * x[..., 0] ** i * x[..., 1] ** j * x[..., 2] ** k
        return out

    return f


FIELD_KINDS: dict[str, tuple[Callable, set]] = {
    "constant": (_kind_constant, {"value"}),
    "gaussian-bump": (_kind_gaussian_bump, {"amplitude", "base", "center", "width"}),
    "polynomial": (_kind_polynomial, {"terms"}),
}


def build_field(spec, name: str, real: bool = False) -> Callable:
    """Field closure from a built-in field description; a bare number means constant."""
    if not isinstance(spec, dict):
        spec = {"kind": "constant", "value": spec}
    kind = spec.get("kind")
    if kind not in FIELD_KINDS:
        raise ValidationError(f"{name}: unknown kind {kind!r}; choose from {sorted(FIELD_KINDS)}")
    make, keys = FIELD_KINDS[kind]
    extra = set(spec) - keys - {"kind"}
    if extra:
        raise ValidationError(f"{name}: unknown keys {sorted(extra)} for kind {kind!r}")
    f = make(spec, name)
    if real:
        return lambda x: np.real(f(x))
    return f


def build_laurent(spec, name: str) -> Callable[[float], complex]:
    """``terms: {power: coefficient}`` meaning ``sum c omega^power``."""
    if not isinstance(spec, dict) or set(spec) != {"terms"} or not isinstance(spec["terms"], dict):
        raise ValidationError(f"{name} must be a mapping with a 'terms' mapping of power -> coefficient")
    terms = [(int(p), parse_complex(c, name)) for p, c in spec["terms"].items()]
    return lambda w: sum(c * w**p for p, c in terms)


# ----------------------------------------------------------------- config

@dataclass
class RunConfig:
    """Resolved configuration; ``raw`` holds the echo written to reports."""

    raw: dict

    @property
    def scenario(self) -> str:
        return self.raw["scenario"]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def physics(self) -> dict:
        return self.raw["physics"]

    @property
    def numerics(self) -> dict:
        return self.raw["numerics"]

    @property
    def k(self) -> float:
        return float(self.physics["k"])

    def incident(self):
        return make_plane_wave(
            _vector(self.physics["amplitude"], "physics.amplitude", complex),
            _vector(self.physics["direction"], "physics.direction"),
            self.k,
        )

    def _particle(self, spec: dict, name: str) -> Particle:
        d = _merge(DEFAULTS["particle"], spec, name)
        return Particle(
            _vector(d["center"], f"{name}.center"),
            float(d["radius"]),
            parse_complex(d["gamma"], f"{name}.gamma"),
            float(d["kappa"]),
            get_shape(d["shape"]),
        )

    def particle(self) -> Particle:
        return self._particle(self.raw["particle"], "particle")

    def particle_list(self) -> list[Particle]:
        return [self._particle(p, f"particles[{i}]") for i, p in enumerate(self.raw["particles"])]

    def law(self) -> DistributionLaw:
        law = self.raw["law"]
        dom = law["domain"]
        if set(dom) - {"lo", "hi"}:
            raise ValidationError("law.domain accepts only 'lo' and 'hi'")
        box = Box(_vector(dom["lo"], "law.domain.lo"), _vector(dom["hi"], "law.domain.hi"))
        return DistributionLaw(box, build_field(law["density"], "law.density", real=True), float(law["kappa"]))

    def gamma_field(self) -> Callable:
        return build_field(self.raw["law"]["gamma"], "law.gamma")

    def probes(self) -> np.ndarray:
        p = np.asarray(self.raw["probes"], float).reshape(-1, 3) if self.raw["probes"] else np.zeros((0, 3))
        if not np.all(np.isfinite(p)):
            raise ValidationError("probes must be finite")
        return p

    def a_sequence(self) -> list[float]:
        seq = [float(a) for a in self.raw["a_sequence"]]
        if not seq or min(seq) <= 0:
            raise ValidationError("a_sequence must be a non-empty list of positive radii")
        return seq

    def validate(self) -> None:
        """Re-check the physical preconditions the chosen scenario relies on."""
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if not (self.k > 0 and np.isfinite(self.k)):
            raise ValidationError(f"physics.k must be positive, got {self.k}")
        for key in ("omega", "mu"):
            if not float(self.physics[key]) > 0:
                raise ValidationError(f"physics.{key} must be positive")
        self.incident()
        num = self.numerics
        if num["solver"] not in SOLVERS:
            raise ValidationError(f"numerics.solver must be one of {SOLVERS}")
        for key in ("n_r", "n_theta", "n_phi", "mesh", "oracle_cells"):
            if int(num[key]) < 1:
                raise ValidationError(f"numerics.{key} must be a positive integer")
        if not float(num["tol"]) > 0:
            raise ValidationError("numerics.tol must be positive")
        out = self.raw["output"]
        if out["format"] not in ("json", "csv"):
            raise ValidationError("output.format must be json or csv")
        self.probes()
        scen = self.scenario
        if scen == "single":
            self.particle()
        elif scen == "multi":
            if self.raw["particles"]:
                self.particle_list()
            else:
                self.law()
                self.gamma_field()
        elif scen in ("effective", "converge", "lemma3"):
            self.law()
            self.gamma_field()
            if scen != "effective":
                self.a_sequence()
            if scen == "lemma3":
                build_field(self.raw["function"], "function")
        elif scen == "nrcheck":
            nr = self.raw["nrcheck"]
            if (nr["index"] is None) == (nr["coefficient"] is None):
                raise ValidationError("nrcheck needs exactly one of 'index' or 'coefficient'")
            spec = nr["index"] if nr["index"] is not None else nr["coefficient"]
            build_laurent(spec, "nrcheck")
            if not float(nr["omega"]) > 0:
                raise ValidationError("nrcheck.omega must be positive")


def _yaml_error(exc: yaml.YAMLError, path) -> ValidationError:
    mark = getattr(exc, "problem_mark", None)
    problem = getattr(exc, "problem", None) or str(exc)
    if mark is not None:
        return ValidationError(f"{path}: parse error at line {mark.line + 1}, column {mark.column + 1}: {problem}")
    return ValidationError(f"{path}: parse error: {problem}")


def config_from_dict(data: dict, where: str = "config") -> RunConfig:
    if not isinstance(data, dict):
        raise ValidationError(f"{where}: top level must be a mapping")
    if "scenario" not in data:
        raise ValidationError(f"{where}: missing required key 'scenario'")
    cfg = RunConfig(_merge(DEFAULTS, data, ""))
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise _yaml_error(exc, path) from exc
    return config_from_dict(data, str(path))
