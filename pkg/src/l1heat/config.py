"""Experiment configuration: YAML schema, validation, initial-data builders, manifests.

Schema (all sections optional except ``nonlinearity`` and ``initial_data``)::

    experiment: solve            # classify | solve | compare | continuous_dependence | global_envelope | sweep
    seed: 0                      # drives the ``random`` initial-data shape
    output: runs/example
    grid: {dim: 1, half_width: 20.0, points: 512}
    nonlinearity: {builtin: power, params: {p: 1.5}}    # or {expr: "pow(abs(u), 0.5)*u"}
    initial_data:                # summed; each term takes a sign (+1 / -1)
      - {shape: gaussian, mass: 0.5, width: 1.0, center: [-2.0], sign: 1}
    second_data: [...]           # psi for compare / continuous_dependence
    numerics: {tol: 1.0e-8, max_iter: 40, steps: 128, t_end: null, substeps: 8, reference: false}
    global_envelope: {amplification: 2.0, smallness: 1.0e-2, horizon: 10.0}
    sweep: {parameter: p, values: [1.5, 2.0], experiment: classify}
"""
from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .field import GridField, GridSpec
from .nonlinearity import ExpressionSyntaxError, NonlinearityError, from_source

EXPERIMENTS = ("classify", "solve", "compare", "continuous_dependence", "global_envelope", "sweep")
SHAPES = ("gaussian", "bump", "spike", "random")


class ConfigError(ValueError):
    """A configuration problem, naming the offending field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"config error in '{field_name}': {message}")
        self.field = field_name


@dataclass(frozen=True)
class GridConfig:
    dim: int = 1
    half_width: float = 20.0
    points: int = 512

    def spec(self) -> GridSpec:
        return GridSpec(self.dim, self.half_width, self.points)


@dataclass(frozen=True)
class Numerics:
    tol: float = 1e-8
    max_iter: int = 40
    steps: int = 128
    t_end: float | None = None  # default: half the guaranteed horizon
    substeps: int = 8
    reference: bool = False


@dataclass(frozen=True)
class GlobalSettings:
    amplification: float = 2.0
    smallness: float = 1e-2
    horizon: float = 10.0


@dataclass(frozen=True)
class SweepSettings:
    parameter: str = "p"
    values: tuple = ()
    experiment: str = "classify"


@dataclass(frozen=True)
class ExperimentConfig:
    nonlinearity: dict
    initial_data: tuple
    experiment: str = "solve"
    seed: int = 0
    output: str = "runs/out"
    grid: GridConfig = field(default_factory=GridConfig)
    numerics: Numerics = field(default_factory=Numerics)
    second_data: tuple = ()
    global_envelope: GlobalSettings = field(default_factory=GlobalSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)

    # -- construction ------------------------------------------------------------
    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "expected a mapping")
        known = {"nonlinearity", "initial_data", "experiment", "seed", "output", "grid", "numerics",
                 "second_data", "global_envelope", "sweep"}
        for key in raw:
            if key not in known:
                raise ConfigError(key, f"unknown key; expected one of {sorted(known)}")
        if "nonlinearity" not in raw:
            raise ConfigError("nonlinearity", "missing")
        cfg = cls(
            nonlinearity=dict(raw["nonlinearity"] or {}),
            initial_data=tuple(_data_terms(raw.get("initial_data"), "initial_data")),
            experiment=str(raw.get("experiment", "solve")),
            seed=_int(raw.get("seed", 0), "seed"),
            output=str(raw.get("output", "runs/out")),
            grid=_section(GridConfig, raw.get("grid"), "grid"),
            numerics=_section(Numerics, raw.get("numerics"), "numerics"),
            second_data=tuple(_data_terms(raw.get("second_data") or [], "second_data", allow_empty=True)),
            global_envelope=_section(GlobalSettings, raw.get("global_envelope"), "global_envelope"),
            sweep=_section(SweepSettings, raw.get("sweep"), "sweep", tuple_fields=("values",)),
        )
        cfg.validate()
        return cfg

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"not valid YAML: {exc}") from None
        return cls.from_dict(raw or {})

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_yaml(Path(path).read_text())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["initial_data"] = [dict(t) for t in self.initial_data]
        d["second_data"] = [dict(t) for t in self.second_data]
        d["sweep"]["values"] = list(self.sweep.values)
        return _plain(d)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        for key, value in changes.items():
            set_path(d, key, value)
        return ExperimentConfig.from_dict(d)

    # -- validation --------------------------------------------------------------
    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError("experiment", f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.seed < 0:
            raise ConfigError("seed", "must be nonnegative")
        g = self.grid
        if g.dim not in (1, 2, 3):
            raise ConfigError("grid.dim", f"must be 1, 2 or 3, got {g.dim}")
        if not (g.half_width > 0 and math.isfinite(g.half_width)):
            raise ConfigError("grid.half_width", "must be positive and finite")
        if g.points < 8 or g.points & (g.points - 1):
            raise ConfigError("grid.points", f"must be a power of two >= 8, got {g.points}")
        try:
            from_source(self.nonlinearity, dim=self.grid.dim)
        except (NonlinearityError, ExpressionSyntaxError) as exc:
            raise ConfigError("nonlinearity", str(exc)) from None
        except TypeError as exc:
            raise ConfigError("nonlinearity", str(exc)) from None
        num = self.numerics
        if not (0 < num.tol < 1):
            raise ConfigError("numerics.tol", "must lie in (0, 1)")
        if not (1 <= num.max_iter <= 1000):
            raise ConfigError("numerics.max_iter", "must lie in [1, 1000]")
        if not (4 <= num.steps <= 4096):
            raise ConfigError("numerics.steps", "must lie in [4, 4096]")
        if num.t_end is not None and not (num.t_end > 0 and math.isfinite(num.t_end)):
            raise ConfigError("numerics.t_end", "must be positive and finite")
        if not (1 <= num.substeps <= 256):
            raise ConfigError("numerics.substeps", "must lie in [1, 256]")
        g = self.global_envelope
        if not g.amplification > 1:
            raise ConfigError("global_envelope.amplification", "must exceed 1")
        if not g.smallness > 0:
            raise ConfigError("global_envelope.smallness", "must be positive")
        if not g.horizon > 0:
            raise ConfigError("global_envelope.horizon", "must be positive")
        for name, terms in (("initial_data", self.initial_data), ("second_data", self.second_data)):
            for i, term in enumerate(terms):
                _validate_term(term, f"{name}[{i}]", self.grid.dim)
        if self.experiment in ("compare", "continuous_dependence") and not self.second_data:
            raise ConfigError("second_data", f"required by the {self.experiment} experiment")
        if self.experiment == "sweep":
            s = self.sweep
            if not s.values:
                raise ConfigError("sweep.values", "must list at least one value")
            if s.experiment not in EXPERIMENTS or s.experiment == "sweep":
                raise ConfigError("sweep.experiment", f"must be one of {EXPERIMENTS[:-1]}")
            for v in s.values:
                try:
                    self.sweep_point(v)
                except ConfigError as exc:
                    raise ConfigError("sweep.values", f"value {v!r}: {exc}") from None

    # -- derived objects -----------------------------------------------------------
    def spec(self) -> GridSpec:
        return self.grid.spec()

    def build_nonlinearity(self):
        return from_source(self.nonlinearity, dim=self.grid.dim)

    def build_data(self, which: str = "initial_data") -> GridField:
        terms = self.initial_data if which == "initial_data" else self.second_data
        return build_initial_data(self.spec(), terms, self.seed)

    def sweep_point(self, value) -> "ExperimentConfig":
        """The base experiment with the swept parameter set to ``value``.

        ``parameter`` is a nonlinearity parameter name, or a dotted config path.
        """
        d = self.to_dict()
        d["experiment"] = self.sweep.experiment
        d["sweep"] = asdict(SweepSettings())
        d["sweep"]["values"] = []
        param = self.sweep.parameter
        if "." in param:
            set_path(d, param, value)
        else:
            if "builtin" not in d["nonlinearity"]:
                raise ConfigError("sweep.parameter", "bare parameter names need a builtin nonlinearity")
            d["nonlinearity"].setdefault("params", {})[param] = value
        return ExperimentConfig.from_dict(d)


# -- helpers ----------------------------------------------------------------------------

def _int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigError(name, f"expected an integer, got {value!r}")
    return int(value)


def _section(cls, raw, name: str, tuple_fields: tuple = ()):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(name, "expected a mapping")
    fields_ = cls.__dataclass_fields__
    for key in raw:
        if key not in fields_:
            raise ConfigError(f"{name}.{key}", f"unknown key; expected one of {sorted(fields_)}")
    values = {}
    for key, value in raw.items():
        default = fields_[key].default
        if key in tuple_fields:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{name}.{key}", "expected a list")
            value = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{name}.{key}", f"expected true/false, got {value!r}")
        elif isinstance(default, int):
            value = _int(value, f"{name}.{key}")
        elif isinstance(default, float) or (default is None and key == "t_end"):
            if value is not None:
                try:
                    value = float(value)
                except (TypeError, ValueError):
                    raise ConfigError(f"{name}.{key}", f"expected a number, got {value!r}") from None
        elif isinstance(default, str):
            value = str(value)
        values[key] = value
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from None


def _data_terms(raw, name: str, allow_empty: bool = False) -> list[dict]:
    if raw is None:
        raise ConfigError(name, "missing")
    if isinstance(raw, dict):
        raw = [raw]
    if not isinstance(raw, list) or (not raw and not allow_empty):
        raise ConfigError(name, "expected a non-empty list of shapes")
    out = []
    for i, term in enumerate(raw):
        if not isinstance(term, dict):
            raise ConfigError(f"{name}[{i}]", "expected a mapping")
        out.append(dict(term))
    return out


_SHAPE_KEYS = {
    "gaussian": {"mass", "amplitude", "width", "center", "sign"},
    "bump": {"amplitude", "radius", "center", "sign"},
    "spike": {"mass", "center", "sign"},
    "random": {"mass", "components", "width", "spread", "sign"},
}


def _validate_term(term: dict, where: str, dim: int) -> None:
    shape = term.get("shape")
    if shape not in SHAPES:
        raise ConfigError(f"{where}.shape", f"unknown shape {shape!r}; expected one of {SHAPES}")
    for key in term:
        if key != "shape" and key not in _SHAPE_KEYS[shape]:
            raise ConfigError(f"{where}.{key}", f"not a parameter of {shape}")
    if term.get("sign", 1) not in (1, -1):
        raise ConfigError(f"{where}.sign", "must be 1 or -1")
    if shape == "gaussian" and ("mass" in term) == ("amplitude" in term):
        raise ConfigError(where, "gaussian needs exactly one of mass / amplitude")
    for key in ("mass", "amplitude", "width", "radius", "spread"):
        if key in term:
            v = term[key]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(f"{where}.{key}", f"must be a positive number, got {v!r}")
    if "components" in term and (not isinstance(term["components"], int) or term["components"] < 1):
        raise ConfigError(f"{where}.components", "must be a positive integer")
    if "center" in term:
        c = term["center"]
        c = [c] if isinstance(c, (int, float)) else c
        if not isinstance(c, (list, tuple)) or len(c) != dim:
            raise ConfigError(f"{where}.center", f"expected {dim} coordinates")


def _center(term: dict, dim: int) -> np.ndarray:
    c = term.get("center", [0.0] * dim)
    c = [c] if isinstance(c, (int, float)) else c
    return np.asarray(c, dtype=float)


def build_initial_data(spec: GridSpec, terms, seed: int = 0) -> GridField:
    """Sum of signed shapes sampled on the grid.

    gaussian: normal density of standard deviation ``width`` scaled to ``mass`` (or peak ``amplitude``);
    bump: smooth compact bump ``amplitude * exp(1 - 1/(1 - r^2/radius^2))``;
    spike: all of ``mass`` on the lattice point nearest ``center``;
    random: ``components`` Gaussians with seeded centers and weights, total ``mass``.
    """
    rng = np.random.default_rng(seed)
    n = spec.dim
    total = np.zeros(spec.shape)
    for term in terms:
        shape = term["shape"]
        sign = float(term.get("sign", 1))
        if shape == "gaussian":
            w = float(term.get("width", 1.0))
            r2 = spec.radius_squared(_center(term, n))
            profile = np.exp(-r2 / (2 * w * w))
            if "mass" in term:
                profile *= term["mass"] / (2 * np.pi * w * w) ** (n / 2)
            else:
                profile *= term["amplitude"]
        elif shape == "bump":
            rad = float(term.get("radius", 1.0))
            z = spec.radius_squared(_center(term, n)) / (rad * rad)
            profile = np.zeros(spec.shape)
            inside = z < 1
            profile[inside] = float(term.get("amplitude", 1.0)) * np.exp(1.0 - 1.0 / (1.0 - z[inside]))
        elif shape == "spike":
            profile = np.zeros(spec.shape)
            profile[spec.index_of(_center(term, n))] = float(term.get("mass", 1.0)) / spec.cell_volume
        else:  # random
            k = int(term.get("components", 3))
            w = float(term.get("width", 1.0))
            spread = float(term.get("spread", spec.half_width / 4))
            centers = rng.uniform(-spread, spread, size=(k, n))
            weights = rng.uniform(0.2, 1.0, size=k)
            weights *= float(term.get("mass", 1.0)) / weights.sum()
            profile = np.zeros(spec.shape)
            for c, m in zip(centers, weights):
                profile += m * np.exp(-spec.radius_squared(c) / (2 * w * w)) / (2 * np.pi * w * w) ** (n / 2)
        total += sign * profile
    return GridField(spec, total)


def set_path(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        if not isinstance(cur.get(k), dict):
            cur[k] = {}
        cur = cur[k]
    cur[keys[-1]] = value


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return copy.copy(obj)
