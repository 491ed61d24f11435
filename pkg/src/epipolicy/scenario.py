"""Scenario files: parsing, validation and model construction.

A scenario is one YAML mapping (``schema_version: 1``)::

    schema_version: 1
    name: seir_tau3000
    seed: 0
    model: seir                  # seir | epicast-lite | surrogate:<artifact dir>
    initial_state: {population: 3.0e6, exposed: 1}
    menu: {preset: seir}
    optimizer: {tau: 3000, d: 14, k: 21, k_s: 35, horizon_total: 600}
    output_dir: runs/seir_tau3000

Optional sections: ``model_options`` (keyword arguments of the model class),
``sweep`` (``parameter`` + ``values``), ``surrogate`` (``labels``, ``design``,
``fit``) and ``oracle`` (``budget``, ``random_instances``).
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .epicast import STATE_FIELDS, EpicastLite, EpicastState
from .npi import NpiMenu, menu_from_config
from .optimizer import OptimizerConfig
from .seir import EpidemicState, SeirModel

SCHEMA_VERSION = 1
MODEL_KINDS = ("seir", "epicast-lite", "surrogate")
SWEEP_PARAMETERS = ("tau", "trans_prob", "compliance")
_TOP_LEVEL = {"schema_version", "name", "seed", "model", "model_options", "initial_state", "menu",
              "optimizer", "output_dir", "sweep", "surrogate", "oracle"}


class ConfigError(ValueError):
    """A scenario file that does not parse or validate; the message names the field."""


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    model_kind: str
    surrogate_path: Path | None
    model_options: Mapping[str, Any]
    initial_state: Mapping[str, Any]
    menu: NpiMenu
    optimizer: OptimizerConfig
    output_dir: Path
    raw: Mapping[str, Any]
    source: Path | None = None

    @property
    def sha256(self) -> str:
        """Hash of the canonical (sorted-key) form of the parsed mapping."""
        text = yaml.safe_dump(dict(self.raw), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()

    def section(self, key: str) -> dict:
        return dict(self.raw.get(key) or {})


def parse_tau(value) -> float:
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity", ".inf"):
        return math.inf
    try:
        tau = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"optimizer.tau: expected a number or 'inf', got {value!r}") from None
    return tau


def _optimizer(cfg: Mapping[str, Any]) -> OptimizerConfig:
    if "tau" not in cfg:
        raise ConfigError("optimizer.tau: required field missing")
    known = {f.name for f in dataclasses.fields(OptimizerConfig)}
    extra = set(cfg) - known
    if extra:
        raise ConfigError(f"optimizer: unknown field(s) {sorted(extra)}")
    kwargs = dict(cfg)
    kwargs["tau"] = parse_tau(cfg["tau"])
    for key in ("d", "k", "k_s", "horizon_total"):
        if key in kwargs:
            if isinstance(kwargs[key], bool) or not isinstance(kwargs[key], int):
                raise ConfigError(f"optimizer.{key}: expected an integer, got {kwargs[key]!r}")
    try:
        return OptimizerConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"optimizer: {exc}") from None


def _check_state(kind: str, state: Mapping[str, Any]):
    if kind == "seir":
        allowed = {"population", "exposed", "infected", "removed"}
        if "population" not in state:
            raise ConfigError("initial_state.population: required field missing")
    else:
        allowed = set(STATE_FIELDS) | {"population"}
        missing = [f for f in STATE_FIELDS if f not in state]
        if missing:
            raise ConfigError(f"initial_state.{missing[0]}: required field missing")
    extra = set(state) - allowed
    if extra:
        raise ConfigError(f"initial_state: unknown field(s) {sorted(extra)} for model {kind}")
    for key, value in state.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"initial_state.{key}: expected a number, got {value!r}")


def from_mapping(raw: Mapping[str, Any], source: Path | None = None) -> Scenario:
    if not isinstance(raw, Mapping):
        raise ConfigError("scenario: top level must be a mapping")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")
    extra = set(raw) - _TOP_LEVEL
    if extra:
        raise ConfigError(f"scenario: unknown field(s) {sorted(extra)}")
    for key in ("model", "initial_state", "menu", "optimizer"):
        if key not in raw:
            raise ConfigError(f"{key}: required field missing")

    model = str(raw["model"])
    kind, _, path = model.partition(":")
    if kind not in MODEL_KINDS or (kind == "surrogate") != bool(path):
        raise ConfigError(f"model: expected one of seir, epicast-lite, surrogate:<dir>; got {model!r}")
    surrogate_path = None
    if kind == "surrogate":
        surrogate_path = Path(path)
        if not surrogate_path.is_absolute() and source is not None and not surrogate_path.exists():
            surrogate_path = source.parent / surrogate_path

    state = raw["initial_state"]
    if not isinstance(state, Mapping):
        raise ConfigError("initial_state: expected a mapping")
    _check_state(kind, state)
    if not isinstance(raw["menu"], Mapping):
        raise ConfigError("menu: expected a mapping")
    try:
        menu = menu_from_config(raw["menu"])
    except ValueError as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith("menu") else f"menu: {msg}") from None
    if not isinstance(raw["optimizer"], Mapping):
        raise ConfigError("optimizer: expected a mapping")
    opt = _optimizer(raw["optimizer"])

    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed: expected a non-negative integer, got {seed!r}")
    name = str(raw.get("name") or (source.stem if source else "scenario"))
    out = Path(raw.get("output_dir") or Path("runs") / name)
    options = raw.get("model_options") or {}
    if not isinstance(options, Mapping):
        raise ConfigError("model_options: expected a mapping")
    sweep = raw.get("sweep")
    if sweep is not None:
        if not isinstance(sweep, Mapping) or sweep.get("parameter") not in SWEEP_PARAMETERS:
            raise ConfigError(f"sweep.parameter: expected one of {SWEEP_PARAMETERS}")
        if not isinstance(sweep.get("values"), list) or not sweep["values"]:
            raise ConfigError("sweep.values: expected a non-empty list")
        if sweep["parameter"] != "tau" and kind == "seir":
            raise ConfigError(f"sweep.parameter: {sweep['parameter']} needs an epicast-lite or surrogate model")
    return Scenario(name, seed, kind, surrogate_path, dict(options), dict(state), menu, opt, out,
                    copy.deepcopy(dict(raw)), source)


def load(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    return from_mapping(raw, path)


def with_overrides(scenario: Scenario, **changes) -> Scenario:
    """Re-validate after patching ``initial_state`` / ``optimizer`` fields.

    ``tau`` goes to the optimizer section, anything else to the initial state.
    """
    raw = copy.deepcopy(dict(scenario.raw))
    for key, value in changes.items():
        section = "optimizer" if key == "tau" else "initial_state"
        raw[section] = dict(raw[section], **{key: value})
    out = from_mapping(raw, scenario.source)
    return dataclasses.replace(out, surrogate_path=scenario.surrogate_path, output_dir=scenario.output_dir)


def initial_state(scenario: Scenario):
    s = scenario.initial_state
    try:
        if scenario.model_kind == "seir":
            return EpidemicState.from_counts(s["population"], s.get("exposed", 0.0),
                                             s.get("infected", 0.0), s.get("removed", 0.0))
        return EpicastState(*(float(s[f]) for f in STATE_FIELDS), population=float(s.get("population", 1e7)))
    except ValueError as exc:
        raise ConfigError(f"initial_state: {exc}") from None


def build_model(scenario: Scenario):
    """The model named by the scenario; surrogate artifacts must cover the menu."""
    opts = dict(scenario.model_options)
    try:
        if scenario.model_kind == "seir":
            return SeirModel(**opts)
        if scenario.model_kind == "epicast-lite":
            return EpicastLite(**opts)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model_options: {exc}") from None

    from .surrogate import SurrogateRejected, UntrainedNpi, load_dir, surrogate_as_model

    path = scenario.surrogate_path
    if path is None or not path.is_dir():
        raise ConfigError(f"model: surrogate artifact directory {path} does not exist")
    try:
        return surrogate_as_model(load_dir(path), scenario.menu, **opts)
    except (UntrainedNpi, SurrogateRejected) as exc:
        raise ConfigError(f"model: {exc}") from None
