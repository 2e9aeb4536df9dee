"""Experiment spec files.

A spec is sectioned key-value text, TOML or the equivalent JSON object::

    [data]
    path = "ETTm1.csv"
    split = [0.7, 0.1, 0.2]        # fractions, or
    split_counts = [34560, 11520, 11520]
    columns = []                   # optional subset of variate columns

    [model]
    input_len = 96
    pred_len = 96
    num_scales = 3
    num_layers = 2
    d_model = 16
    case = 1                       # optional ablation case 1-10

    [train]
    learning_rate = 0.01
    batch_size = 128
    epochs = 10

    [metrics]
    seasonal_period = 1

    [output]
    dir = "runs/ettm1"

Any key can be overridden from the environment as
``TIMEMIXER_<SECTION>_<KEY>`` (e.g. ``TIMEMIXER_TRAIN_EPOCHS=2``); values are
parsed as JSON when possible and otherwise taken as strings. Relative data
paths resolve against the current working directory.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Tuple

from .data import WindowSpec
from .decomposition import DecompositionConfig
from .exceptions import ConfigError
from .metrics import MetricsConfig
from .model import ABLATION_CASES, AblationConfig, ModelConfig, parse_case
from .training import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

ENV_PREFIX = "TIMEMIXER_"
SECTIONS = ("data", "model", "train", "metrics", "output")

_MODEL_KEYS = {"input_len", "pred_len", "num_scales", "num_layers", "d_model", "d_ff",
               "ensemble", "dropout_rate"}
_DECOMP_KEYS = {"decomposition": "method", "kernel": "kernel", "top_k_frequencies": "top_k_frequencies"}
_ABLATION_KEYS = {f.name for f in fields(AblationConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_METRIC_KEYS = {f.name for f in fields(MetricsConfig)}


@dataclass(frozen=True)
class DataSection:
    path: str = ""
    split: Optional[Tuple[float, float, float]] = (0.7, 0.1, 0.2)
    split_counts: Optional[Tuple[int, int, int]] = None
    columns: Tuple[str, ...] = ()

    def split_kwargs(self) -> dict:
        if self.split_counts is not None:
            return {"counts": tuple(self.split_counts)}
        return {"fractions": tuple(self.split)}


@dataclass(frozen=True)
class ExperimentSpec:
    data: DataSection
    model: ModelConfig
    train: TrainConfig
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    output_dir: str = "runs"
    source: str = ""

    def model_config(self, channels: int, case=None) -> ModelConfig:
        cfg = replace(self.model, channels=channels)
        return cfg.with_case(case) if case is not None else cfg

    def window_spec(self) -> WindowSpec:
        return WindowSpec(self.model.input_len, self.model.pred_len)

    def with_overrides(self, **train_overrides) -> "ExperimentSpec":
        train_overrides = {k: v for k, v in train_overrides.items() if v is not None}
        return replace(self, train=replace(self.train, **train_overrides))


def _parse_scalar(text: str):
    try:
        return json.loads(text)
    except ValueError:
        lowered = text.strip().lower()
        if lowered in ("true", "false"):
            return lowered == "true"
        return text


def apply_env_overrides(raw: dict, env: Mapping[str, str]) -> dict:
    raw = {k: dict(v) for k, v in raw.items()}
    for key, value in env.items():
        if not key.startswith(ENV_PREFIX):
            continue
        section, _, name = key[len(ENV_PREFIX):].lower().partition("_")
        if section in SECTIONS and name:
            raw.setdefault(section, {})[name] = _parse_scalar(value)
    return raw


def shipped_specs() -> list:
    return sorted(p.stem for p in resources.files("timemixer").joinpath("configs").iterdir()
                  if p.name.endswith(".toml"))


def resolve_spec_path(name) -> Path:
    """A file path, or the name of a shipped spec such as ``etth1``."""
    path = Path(name)
    if path.exists():
        return path
    shipped = resources.files("timemixer").joinpath("configs", f"{str(name).lower()}.toml")
    if shipped.is_file():
        return Path(str(shipped))
    raise ConfigError(f"spec file not found: {name} (shipped specs: {', '.join(shipped_specs())})")


def read_spec_file(path: Path) -> dict:
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() == ".json":
            raw = json.loads(text)
        else:
            raw = tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: cannot parse spec: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: spec must be a table of sections")
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown section(s) {sorted(unknown)}; expected {SECTIONS}")
    return raw


def _take(section: dict, allowed, where: str) -> dict:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in [{where}]")
    return section


def build_spec(raw: dict, source: str = "") -> ExperimentSpec:
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"{source or 'spec'}: unknown section(s) {sorted(unknown)}; expected {SECTIONS}")
    data_raw = _take(dict(raw.get("data", {})), {f.name for f in fields(DataSection)}, "data")
    if "split" in data_raw and data_raw["split"] is not None:
        data_raw["split"] = tuple(float(v) for v in data_raw["split"])
    if data_raw.get("split_counts") is not None:
        data_raw["split_counts"] = tuple(int(v) for v in data_raw["split_counts"])
    if "columns" in data_raw:
        data_raw["columns"] = tuple(data_raw["columns"] or ())
    data = DataSection(**data_raw)
    if not data.path:
        raise ConfigError("[data] path is required")

    model_raw = dict(raw.get("model", {}))
    if "dropout" in model_raw:
        model_raw["dropout_rate"] = model_raw.pop("dropout")
    case = model_raw.pop("case", None)
    _take(model_raw, _MODEL_KEYS | set(_DECOMP_KEYS) | _ABLATION_KEYS, "model")
    decomp = DecompositionConfig(**{_DECOMP_KEYS[k]: model_raw.pop(k) for k in list(model_raw)
                                    if k in _DECOMP_KEYS})
    ablation_raw = {k: model_raw.pop(k) for k in list(model_raw) if k in _ABLATION_KEYS}
    if case is not None:
        if ablation_raw:
            raise ConfigError("[model] give either case or individual ablation flags, not both")
        ablation = ABLATION_CASES[parse_case(case)]
    else:
        ablation = AblationConfig(**ablation_raw)
    # channels are only known once the data is read; 1 is a placeholder that
    # still lets the P/M and decomposition checks run up front
    model = ModelConfig(channels=1, decomposition=decomp, ablation=ablation, **model_raw)

    train = TrainConfig(**_take(dict(raw.get("train", {})), _TRAIN_KEYS, "train"))
    metrics = MetricsConfig(**_take(dict(raw.get("metrics", {})), _METRIC_KEYS, "metrics"))
    output = _take(dict(raw.get("output", {})), {"dir"}, "output")
    return ExperimentSpec(data, model, train, metrics, output.get("dir", "runs"), source)


def load_spec(name, env: Optional[Mapping[str, str]] = None) -> ExperimentSpec:
    path = resolve_spec_path(name)
    raw = read_spec_file(path)
    raw = apply_env_overrides(raw, os.environ if env is None else env)
    try:
        return build_spec(raw, str(path))
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
