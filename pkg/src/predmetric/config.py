"""Experiment configuration: one JSON document per experiment.

Parsing is strict: unknown keys are errors and the master seed is
mandatory.  Sequences are stored as tuples so that
``ExperimentConfig.from_dict(cfg.to_dict()) == cfg``.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigError

MAX_SEED = 2 ** 64 - 1


def _freeze(value):
    if isinstance(value, (list, tuple)):
        return tuple(_freeze(v) for v in value)
    if isinstance(value, dict):
        return {k: _freeze(v) for k, v in value.items()}
    return value


def _thaw(value):
    if isinstance(value, tuple):
        return [_thaw(v) for v in value]
    if isinstance(value, dict):
        return {k: _thaw(v) for k, v in value.items()}
    return value


def _check_number(value, path, kind):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    if kind is int:
        if isinstance(value, float):
            if not value.is_integer():
                raise ConfigError(f"{path}: expected an integer, got {value!r}")
            value = int(value)
    else:
        value = float(value)
    return value


def _convert(value, hint, path):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(value, inner[0], path)
    if dataclasses.is_dataclass(hint):
        return _parse(hint, value, path)
    if hint is int or hint is float:
        return _check_number(value, path, hint)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        item = args[0]
        return tuple(_convert(v, item, f"{path}[{i}]") for i, v in enumerate(value))
    if hint is Any:
        return _freeze(value)
    if origin is dict or hint is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object, got {value!r}")
        return _freeze(value)
    raise ConfigError(f"{path}: unsupported field type {hint!r}")  # pragma: no cover


def _parse(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {unknown}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        sub = f"{path}.{f.name}" if path else f.name
        if f.name in data:
            kwargs[f.name] = _convert(data[f.name], hints[f.name], sub)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(f"{sub}: required key missing")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def _dump(obj):
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if value is None:
            continue
        out[f.name] = _dump(value) if dataclasses.is_dataclass(value) else _thaw(value)
    return out


class _Section:
    @classmethod
    def from_dict(cls, data, path: str = ""):
        return _parse(cls, data, path)

    def to_dict(self) -> dict:
        return _dump(self)


@dataclass
class ModelConfig(_Section):
    """``family`` is normal, location_scale or poisson; other keys per family."""

    family: str
    s: Optional[tuple[float, ...]] = None
    cov_x: Optional[tuple[tuple[float, ...], ...]] = None
    cov_y: Optional[tuple[tuple[float, ...], ...]] = None
    base_x: Any = None
    base_y: Any = None

    def __post_init__(self):
        if self.family not in ("normal", "location_scale", "poisson"):
            raise ValueError(f"unknown family {self.family!r}")


@dataclass
class ProbeConfig(_Section):
    points: tuple[tuple[float, ...], ...] = ()
    low: Optional[tuple[float, ...]] = None
    high: Optional[tuple[float, ...]] = None
    n_random: int = 0


@dataclass
class SimConfig(_Section):
    theta: tuple[float, ...]
    N: tuple[int, ...] = (100,)
    replicates: int = 10_000
    kl_scheme: str = "auto"
    kl_nodes: int = 128
    kl_draws: int = 0
    predictive_method: str = "auto"
    reference: int = -1


@dataclass
class Figure1Config(_Section):
    b_ratio: float = 1.0
    c: tuple[float, ...] = (0.0, 1.0)
    kappa: float = 1.0
    rho_max: float = 6.0
    n_rho: int = 121

    def __post_init__(self):
        if not (self.rho_max > 0 and self.n_rho >= 2):
            raise ValueError("figure1 needs rho_max > 0 and n_rho >= 2")


@dataclass
class CheckConfig(_Section):
    n_points: int = 10
    n_priors: int = 5
    n_datasets: int = 5
    # negative control: multiply the data-model metric by (1 + e |theta|^2)
    # without touching its connections, which must break the duality check
    corrupt_metric: float = 0.0


@dataclass
class ExperimentConfig(_Section):
    seed: int
    model: Optional[ModelConfig] = None
    chart: str = "reference"
    priors: tuple[dict, ...] = ()
    theta: Optional[tuple[float, ...]] = None
    probes: ProbeConfig = field(default_factory=ProbeConfig)
    sim: Optional[SimConfig] = None
    figure1: Figure1Config = field(default_factory=Figure1Config)
    check: CheckConfig = field(default_factory=CheckConfig)
    out: Optional[str] = None

    def __post_init__(self):
        if not 0 <= self.seed <= MAX_SEED:
            raise ValueError(f"seed must lie in [0, 2^64 - 1], got {self.seed}")
        for p in self.priors:
            if "name" not in p:
                raise ValueError("every prior needs a 'name'")

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return ExperimentConfig.from_dict(data)


# ----------------------------------------------------------------------------
# Builders
# ----------------------------------------------------------------------------

def build_pair(model: Optional[ModelConfig]):
    """ModelPair described by ``model`` (SpecError on invalid parameters)."""
    from .models import (LocationScalePairSpec, NormalPairSpec, PoissonPairSpec, builtin_location_scale,
                         builtin_normal, builtin_poisson)

    if model is None:
        raise ConfigError("this command needs a 'model' section")
    fam = model.family
    given = {k for k in ("s", "cov_x", "cov_y", "base_x", "base_y") if getattr(model, k) is not None}
    allowed = {"normal": {"cov_x", "cov_y"}, "location_scale": {"base_x", "base_y"}, "poisson": {"s"}}[fam]
    if given - allowed:
        raise ConfigError(f"model: keys {sorted(given - allowed)} do not apply to family {fam!r}")
    if fam == "normal":
        if model.cov_x is None:
            raise ConfigError("model: normal family needs cov_x")
        cov_y = model.cov_y if model.cov_y is not None else model.cov_x
        return builtin_normal(NormalPairSpec(_thaw(model.cov_x), _thaw(cov_y)))
    if fam == "poisson":
        if model.s is None:
            raise ConfigError("model: poisson family needs s")
        return builtin_poisson(PoissonPairSpec(model.s))
    return builtin_location_scale(LocationScalePairSpec(_thaw(model.base_x) or "normal",
                                                        _thaw(model.base_y) or "normal"))


def build_priors(pair, priors) -> list:
    from .priors import build_prior, volume_element_prior

    if not priors:
        return [volume_element_prior(pair)]
    return [build_prior(pair, _thaw(p)) for p in priors]


def build_chart(pair, name: str):
    """The pair's reference chart or one of the isometry charts."""
    from .models import location_scale_params, poisson_xi_chart, upper_half_plane_chart

    if name == "reference":
        return pair.chart
    if name == "upper-half-plane" and pair.family == "location_scale":
        return upper_half_plane_chart(*location_scale_params(pair))
    if name == "xi" and pair.family == "poisson":
        return poisson_xi_chart(pair.y_model.s)
    raise ConfigError(f"chart {name!r} is not available for family {pair.family!r}")
