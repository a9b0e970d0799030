"""Experiment configuration schema, presets and override handling."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .autodiff import canonical_activation
from .errors import ConfigurationError
from .materials import PROPERTY_NAMES, PhysicalConstants, spec_from_dict
from .mms import canonical_quantity, TABLE_QUANTITIES


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class CombConfig(_Strict):
    length: float = 6.44e-3
    width: float = 2.32e-3
    height: float = 2.0e-4
    spine_width: float = 1.16e-3
    n_teeth: int = Field(4, ge=1)
    tooth_width: Optional[float] = None
    dirichlet_from: float = 1.16e-3
    n_interior: int = Field(2228, ge=1)
    n_boundary: int = Field(4043, ge=1)
    times_per_point: int = Field(1, ge=1)


class ShapeConfig(_Strict):
    kind: Literal["cube", "box", "coating", "comb", "point-cloud"] = "cube"
    extents: list[list[float]] = Field(default_factory=lambda: [[0.0, 1.0]] * 3)
    grid: Optional[list[int]] = None
    size_ratio: float = 10.0
    faces: Optional[dict[str, Literal["dirichlet", "neumann"]]] = None
    comb: CombConfig = Field(default_factory=CombConfig)
    path: Optional[str] = None
    sample_seed: int = 0

    @field_validator("extents")
    @classmethod
    def _extents(cls, v):
        if len(v) != 3 or any(len(e) != 2 or not e[1] > e[0] for e in v):
            raise ValueError("extents must be three [lo, hi] pairs with hi > lo")
        return v

    @field_validator("grid")
    @classmethod
    def _grid(cls, v):
        if v is not None and (len(v) != 3 or min(v) < 1):
            raise ValueError("grid must be three positive counts")
        return v

    @model_validator(mode="after")
    def _kind_fields(self):
        if self.kind == "point-cloud" and not self.path:
            raise ValueError("point-cloud shapes need 'path'")
        if self.kind == "coating" and not self.size_ratio >= 1.0:
            raise ValueError("size_ratio must be >= 1")
        return self


class TimeConfig(_Strict):
    t0: float = 0.0
    tf: float = 1.0
    dt: float = Field(0.1, gt=0.0)

    @model_validator(mode="after")
    def _order(self):
        if self.tf < self.t0:
            raise ValueError("tf must not precede t0")
        return self


class ConstantsConfig(_Strict):
    kappa0: float = 60.0
    rho0: float = 2555.0
    c0: float = 500.0
    E0: float = 1.25e11
    T0: float = 100.0
    nu: float = 0.28
    alpha: float = 0.02


class MaterialConfig(_Strict):
    case: Literal["case1", "case2", "case3", "homogeneous", "custom"] = "case1"
    properties: Optional[dict[str, dict[str, Any]]] = None
    constants: ConstantsConfig = Field(default_factory=ConstantsConfig)
    check: bool = True

    @model_validator(mode="after")
    def _custom(self):
        PhysicalConstants(**self.constants.model_dump())
        if self.case == "custom":
            if not self.properties or set(self.properties) != set(PROPERTY_NAMES):
                raise ValueError(f"custom materials need properties {list(PROPERTY_NAMES)}")
            for name, d in self.properties.items():
                spec_from_dict(name, d)
        return self


class ArchitectureConfig(_Strict):
    hidden_layers: int = Field(4, ge=1)
    neurons: int = Field(15, ge=1)
    activation: str = "swish"
    input_normalization: Literal["isotropic", "per-axis"] = "isotropic"

    @field_validator("activation")
    @classmethod
    def _act(cls, v):
        return canonical_activation(v)


class OptimizerConfig(_Strict):
    lr: float = Field(1e-3, gt=0.0)
    lr_final: float = Field(1e-4, gt=0.0)
    schedule: Literal["cosine", "constant"] = "cosine"
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)


class BalancingConfig(_Strict):
    enabled: bool = True
    period: int = Field(20, ge=1)
    epsilon: float = Field(1e-12, gt=0.0)
    smoothing: Optional[float] = Field(None, ge=0.0, lt=1.0)


class EvaluationConfig(_Strict):
    times: list[float] = Field(default_factory=lambda: [0.95])
    quantities: list[str] = Field(default_factory=lambda: list(TABLE_QUANTITIES))
    test_grid: int = Field(11, ge=1)
    pointwise: bool = True

    @field_validator("quantities")
    @classmethod
    def _q(cls, v):
        return [canonical_quantity(q) for q in v]


class ExperimentConfig(_Strict):
    name: str = "experiment"
    shape: ShapeConfig = Field(default_factory=ShapeConfig)
    time: TimeConfig = Field(default_factory=TimeConfig)
    material: MaterialConfig = Field(default_factory=MaterialConfig)
    architecture: ArchitectureConfig = Field(default_factory=ArchitectureConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    balancing: BalancingConfig = Field(default_factory=BalancingConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    iterations: int = Field(2000, ge=0)
    seed: int = 0
    checkpoint_every: int = Field(0, ge=0)
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _times(self):
        for t in self.evaluation.times:
            if not self.time.t0 <= t <= self.time.tf:
                raise ValueError(f"evaluation time {t} outside [{self.time.t0}, {self.time.tf}]")
        return self

    def digest(self) -> str:
        """Stable hash of every field (used to tag run metadata)."""
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


PRESETS: dict[str, dict] = {
    "cube": {
        "name": "cube",
        "shape": {"kind": "cube", "grid": [9, 9, 9]},
        "time": {"t0": 0.0, "tf": 1.0, "dt": 0.1},
        "material": {"case": "case1"},
        "architecture": {"hidden_layers": 4, "neurons": 15, "activation": "swish"},
        "iterations": 2000,
        "evaluation": {"times": [0.95]},
    },
    "coating": {
        "name": "coating",
        "shape": {"kind": "coating", "grid": [9, 9, 4], "size_ratio": 10.0},
        "time": {"t0": 0.0, "tf": 1.0, "dt": 0.1},
        "material": {"case": "case1"},
        "architecture": {"hidden_layers": 3, "neurons": 15, "activation": "swish"},
        "iterations": 2000,
        "evaluation": {"times": [0.95]},
    },
    "comb": {
        "name": "comb",
        "shape": {"kind": "comb"},
        "time": {"t0": 0.0, "tf": 2.0, "dt": 0.2},
        "material": {"case": "case2"},
        "architecture": {"hidden_layers": 3, "neurons": 15, "activation": "swish"},
        "iterations": 2000,
        "evaluation": {"times": [0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 1.9, 2.0],
                       "quantities": ["σ11", "σ22", "σ33", "σ12", "σ13", "σ23", "T,1", "T,2", "T,3"]},
    },
    "submarine": {
        "name": "submarine",
        "shape": {"kind": "point-cloud", "path": "submarine_points.csv"},
        "time": {"t0": 0.0, "tf": 1.0, "dt": 0.2},
        "material": {"case": "case3"},
        "architecture": {"hidden_layers": 10, "neurons": 25, "activation": "mish"},
        "iterations": 3000,
        "evaluation": {"times": [0.9]},
    },
}


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def validate_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(_format_errors(exc)) from None
    except ConfigurationError as exc:
        raise ConfigurationError(str(exc)) from None


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])


def read_config_data(path) -> dict:
    """YAML (or JSON) file contents; a metadata file's ``config`` block is unwrapped."""
    path = Path(path)
    if not path.exists():
        if str(path) in PRESETS:
            return preset(str(path))
        raise ConfigurationError(f"config file {path} does not exist")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    base = data.pop("preset", None)
    if base:
        merged = preset(base)
        _deep_update(merged, data)
        data = merged
    return data


def _deep_update(dst: dict, src: dict) -> dict:
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _deep_update(dst[k], v)
        else:
            dst[k] = v
    return dst


def parse_value(text: str):
    """YAML scalar parsing with float fallback for forms like ``1e5``."""
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError:
        return text
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def _leaf_paths(model: type[BaseModel], prefix=()) -> list[tuple[str, ...]]:
    out = []
    for name, f in model.model_fields.items():
        ann = f.annotation
        if isinstance(ann, type) and issubclass(ann, BaseModel):
            out += _leaf_paths(ann, prefix + (name,))
        else:
            out.append(prefix + (name,))
    return out


def resolve_key(key: str) -> tuple[str, ...]:
    """Dotted path, or a leaf name that is unique across the schema."""
    if "." in key:
        return tuple(key.split("."))
    matches = [p for p in _leaf_paths(ExperimentConfig) if p[-1] == key]
    if len(matches) == 1:
        return matches[0]
    if not matches:
        raise ConfigurationError(f"unknown config field {key!r}")
    options = ", ".join(".".join(m) for m in matches)
    raise ConfigurationError(f"ambiguous config field {key!r}; use one of {options}")


def apply_override(data: dict, key: str, value) -> dict:
    path = resolve_key(key)
    node = data
    for part in path[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"cannot set {key}: {part} is not a section")
    node[path[-1]] = parse_value(value) if isinstance(value, str) else value
    return data


def load_config(path_or_data, overrides: list[str] | None = None, **sets) -> ExperimentConfig:
    data = read_config_data(path_or_data) if not isinstance(path_or_data, dict) else copy.deepcopy(path_or_data)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} must look like key=value")
        key, value = item.split("=", 1)
        apply_override(data, key.strip(), value.strip())
    for key, value in sets.items():
        apply_override(data, key, value)
    return validate_config(data)


def dump_config(cfg: ExperimentConfig) -> dict:
    return cfg.model_dump(mode="json")
