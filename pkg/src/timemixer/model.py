"""The multiscale mixing forecaster.

Data flow for an input window ``x[B, P, C]``:

1. ``downsample_multiscale``: scale ``m`` is ``x`` average-pooled ``m`` times
   with window 2, length ``P // 2**m``.
2. ``embed``: a per-time-step linear map ``C -> d_model`` shared by all scales.
3. ``num_layers`` past-mixing blocks. Each decomposes every scale into
   seasonal and trend parts, mixes seasonal parts fine-to-coarse and trend
   parts coarse-to-fine with two-layer temporal MLPs, recombines, applies a
   per-layer feed-forward over the feature axis and adds the block input.
4. Future multipredictor head: per scale, a temporal linear map
   ``P // 2**m -> F`` then a feature projection ``d_model -> C``; the
   per-scale forecasts are summed (or averaged).

Temporal layers are stored as left-multiplication matrices ``W[T_out, T_in]``
with bias ``b[T_out, 1]``, which applies the same map to every feature column.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Iterator, List, Optional

import numpy as np

from .decomposition import DecompositionConfig, series_decomp
from .exceptions import ConfigError, ShapeError
from .tensor import Tensor, add, avg_pool_1d, dropout, gelu, linear, temporal_linear

DIRECTIONS = ("bottom_up", "top_down", "none")
ENSEMBLES = ("sum", "average")


@dataclass(frozen=True)
class AblationConfig:
    use_decomposition: bool = True
    use_fmm: bool = True
    seasonal_mixing: str = "bottom_up"
    trend_mixing: str = "top_down"
    undecomposed_mixing: str = "none"

    def __post_init__(self):
        for name in ("seasonal_mixing", "trend_mixing", "undecomposed_mixing"):
            value = getattr(self, name)
            if value not in DIRECTIONS:
                raise ConfigError(f"{name} must be one of {DIRECTIONS}, got {value!r}")


# Ablation table cases 1..10. Directions that a case does not use are left at
# "none" so each case maps to exactly one AblationConfig value.
ABLATION_CASES: Dict[int, AblationConfig] = {
    1: AblationConfig(True, True, "bottom_up", "top_down", "none"),
    2: AblationConfig(True, False, "bottom_up", "top_down", "none"),
    3: AblationConfig(True, True, "none", "top_down", "none"),
    4: AblationConfig(True, True, "bottom_up", "none", "none"),
    5: AblationConfig(True, True, "top_down", "top_down", "none"),
    6: AblationConfig(True, True, "bottom_up", "bottom_up", "none"),
    7: AblationConfig(True, True, "top_down", "bottom_up", "none"),
    8: AblationConfig(False, True, "none", "none", "bottom_up"),
    9: AblationConfig(False, True, "none", "none", "top_down"),
    10: AblationConfig(False, True, "none", "none", "none"),
}

CASE_SYMBOLS = "①②③④⑤⑥⑦⑧⑨⑩"


def parse_case(token) -> int:
    """Accept ``3``, ``"3"`` or ``"③"``."""
    text = str(token).strip()
    if text in CASE_SYMBOLS:
        return CASE_SYMBOLS.index(text) + 1
    try:
        case = int(text)
    except ValueError:
        raise ConfigError(f"unknown ablation case {token!r}") from None
    if case not in ABLATION_CASES:
        raise ConfigError(f"unknown ablation case {token!r}; valid cases are 1-10")
    return case


@dataclass(frozen=True)
class ModelConfig:
    input_len: int = 96
    pred_len: int = 96
    channels: int = 7
    num_scales: int = 3
    num_layers: int = 2
    d_model: int = 16
    d_ff: Optional[int] = None
    decomposition: DecompositionConfig = field(default_factory=DecompositionConfig)
    ensemble: str = "sum"
    ablation: AblationConfig = field(default_factory=AblationConfig)
    dropout_rate: float = 0.0

    def __post_init__(self):
        for name in ("input_len", "pred_len", "channels", "num_layers", "d_model"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.num_scales < 0:
            raise ConfigError(f"num_scales must be >= 0, got {self.num_scales}")
        if self.input_len // 2 ** self.num_scales < 1:
            raise ConfigError(
                f"input_len P={self.input_len} is too short for num_scales M={self.num_scales}: "
                f"P // 2**M must be at least 1")
        if self.d_ff is not None and self.d_ff < 1:
            raise ConfigError(f"d_ff must be positive, got {self.d_ff}")
        if self.ensemble not in ENSEMBLES:
            raise ConfigError(f"ensemble must be one of {ENSEMBLES}, got {self.ensemble!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.ablation.use_decomposition:
            self.decomposition.check_length(self.scale_lengths[-1])

    @property
    def hidden_ff(self) -> int:
        return self.d_ff if self.d_ff is not None else 4 * self.d_model

    @property
    def scale_lengths(self) -> List[int]:
        return [self.input_len // 2 ** m for m in range(self.num_scales + 1)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        raw = dict(raw)
        if isinstance(raw.get("decomposition"), dict):
            raw["decomposition"] = DecompositionConfig(**raw["decomposition"])
        if isinstance(raw.get("ablation"), dict):
            raw["ablation"] = AblationConfig(**raw["ablation"])
        return cls(**raw)

    def with_case(self, case) -> "ModelConfig":
        return replace(self, ablation=ABLATION_CASES[parse_case(case)])


def downsample_multiscale(x, num_scales: int) -> List[Tensor]:
    """``[x, pool(x), pool(pool(x)), ...]`` with window-2 average pooling on axis -2."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    length = x.shape[-2]
    if length // 2 ** num_scales < 1:
        raise ConfigError(f"input length {length} cannot be downsampled {num_scales} times")
    scales = [x]
    for _ in range(num_scales):
        scales.append(avg_pool_1d(scales[-1], window=2, stride=2, axis=-2))
    return scales


def _mixing_pairs(direction: str, num_scales: int):
    """(source, target) scale pairs in the order the updates run."""
    if direction == "bottom_up":
        return [(m - 1, m) for m in range(1, num_scales + 1)]
    if direction == "top_down":
        return [(m + 1, m) for m in range(num_scales - 1, -1, -1)]
    return []


class TimeMixerModel:
    """Parameter container plus forward semantics.

    Parameters live in ``self.params`` (insertion-ordered ``name -> Tensor``);
    their names and shapes are a pure function of the config.
    """

    def __init__(self, config: ModelConfig, params: Dict[str, Tensor]):
        self.config = config
        self.params = params
        self.training = False
        self._dropout_rng = np.random.default_rng(0)
        expected = parameter_shapes(config)
        if list(expected) != list(params):
            raise ConfigError("parameter names do not match the model config")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ShapeError(f"parameter {name} has shape {params[name].shape}, expected {shape}")

    # -- bookkeeping ------------------------------------------------------
    def named_parameters(self) -> Iterator[tuple]:
        return iter(self.params.items())

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def train(self, mode: bool = True, seed: Optional[int] = None):
        self.training = mode
        if seed is not None:
            self._dropout_rng = np.random.default_rng(seed)
        return self

    def eval(self):
        return self.train(False)

    # -- building blocks ------------------------------------------------------
    def embed(self, scales: List[Tensor]) -> List[Tensor]:
        c = self.config.channels
        w, b = self.params["embedding.weight"], self.params["embedding.bias"]
        out = []
        for x in scales:
            if x.shape[-1] != c:
                raise ShapeError(f"expected {c} channels, got input of shape {x.shape}")
            h = linear(x, w, b)
            out.append(dropout(h, self.config.dropout_rate, self._dropout_rng, self.training))
        return out

    def _temporal_mlp(self, prefix: str, x: Tensor) -> Tensor:
        p = self.params
        h = gelu(temporal_linear(p[prefix + ".w1"], x, p[prefix + ".b1"]))
        return temporal_linear(p[prefix + ".w2"], h, p[prefix + ".b2"])

    def _mix(self, parts: List[Tensor], direction: str, prefix: str) -> List[Tensor]:
        parts = list(parts)
        for src, dst in _mixing_pairs(direction, self.config.num_scales):
            parts[dst] = add(parts[dst], self._temporal_mlp(f"{prefix}.{direction}.{dst}", parts[src]))
        return parts

    def _feed_forward(self, layer: int, x: Tensor) -> Tensor:
        p = self.params
        key = f"layers.{layer}.ffn"
        h = gelu(linear(x, p[key + ".w1"], p[key + ".b1"]))
        return linear(h, p[key + ".w2"], p[key + ".b2"])

    def pdm_block(self, features: List[Tensor], layer: int) -> List[Tensor]:
        cfg = self.config
        ab = cfg.ablation
        if len(features) != cfg.num_scales + 1:
            raise ShapeError(f"expected {cfg.num_scales + 1} scales, got {len(features)}")
        base = f"layers.{layer}"
        if ab.use_decomposition:
            parts = [series_decomp(x, cfg.decomposition) for x in features]
            seasons = self._mix([s for s, _ in parts], ab.seasonal_mixing, base + ".season")
            trends = self._mix([t for _, t in parts], ab.trend_mixing, base + ".trend")
            mixed = [add(s, t) for s, t in zip(seasons, trends)]
        else:
            mixed = self._mix(features, ab.undecomposed_mixing, base + ".mixed")
        return [add(x, self._feed_forward(layer, h)) for x, h in zip(features, mixed)]

    def _predictor(self, m: int, x: Tensor) -> Tensor:
        p = self.params
        key = f"predict.{m}"
        h = temporal_linear(p[key + ".temporal.weight"], x, p[key + ".temporal.bias"])
        return linear(h, p[key + ".projection.weight"], p[key + ".projection.bias"])

    def encode(self, x) -> List[Tensor]:
        x = x if isinstance(x, Tensor) else Tensor(x)
        cfg = self.config
        if x.ndim != 3 or x.shape[1] != cfg.input_len or x.shape[2] != cfg.channels:
            raise ShapeError(
                f"expected input [B, {cfg.input_len}, {cfg.channels}], got {list(x.shape)}")
        feats = self.embed(downsample_multiscale(x, cfg.num_scales))
        for layer in range(cfg.num_layers):
            feats = self.pdm_block(feats, layer)
        return feats

    def fmm_head(self, features: List[Tensor]) -> Tensor:
        preds = self._head_terms(features)
        out = preds[0]
        for term in preds[1:]:
            out = add(out, term)
        if self.config.ensemble == "average":
            out = out / float(len(preds))
        return out

    def _head_terms(self, features: List[Tensor]) -> List[Tensor]:
        used = range(len(features)) if self.config.ablation.use_fmm else range(1)
        return [self._predictor(m, features[m]) for m in used]

    def forward(self, x) -> Tensor:
        return self.fmm_head(self.encode(x))

    __call__ = forward

    def per_scale_predictions(self, x) -> List[Tensor]:
        """Each scale's forecast before ensembling (one entry when FMM is off)."""
        return self._head_terms(self.encode(x))


def parameter_shapes(cfg: ModelConfig) -> Dict[str, tuple]:
    """Ordered ``name -> shape`` map fully determined by the config."""
    lengths = cfg.scale_lengths
    d, c = cfg.d_model, cfg.channels
    shapes: Dict[str, tuple] = {"embedding.weight": (c, d), "embedding.bias": (d,)}
    ab = cfg.ablation
    if ab.use_decomposition:
        streams = [("season", ab.seasonal_mixing), ("trend", ab.trend_mixing)]
    else:
        streams = [("mixed", ab.undecomposed_mixing)]
    for layer in range(cfg.num_layers):
        for stream, direction in streams:
            for src, dst in _mixing_pairs(direction, cfg.num_scales):
                key = f"layers.{layer}.{stream}.{direction}.{dst}"
                shapes[key + ".w1"] = (lengths[dst], lengths[src])
                shapes[key + ".b1"] = (lengths[dst], 1)
                shapes[key + ".w2"] = (lengths[dst], lengths[dst])
                shapes[key + ".b2"] = (lengths[dst], 1)
        key = f"layers.{layer}.ffn"
        shapes[key + ".w1"] = (d, cfg.hidden_ff)
        shapes[key + ".b1"] = (cfg.hidden_ff,)
        shapes[key + ".w2"] = (cfg.hidden_ff, d)
        shapes[key + ".b2"] = (d,)
    for m in range(cfg.num_scales + 1 if ab.use_fmm else 1):
        key = f"predict.{m}"
        shapes[key + ".temporal.weight"] = (cfg.pred_len, lengths[m])
        shapes[key + ".temporal.bias"] = (cfg.pred_len, 1)
        shapes[key + ".projection.weight"] = (d, c)
        shapes[key + ".projection.bias"] = (c,)
    return shapes


def fan_in(name: str, shape: tuple) -> int:
    """Input width of a weight: left-multiplied temporal maps read columns."""
    temporal = name.endswith("temporal.weight") or (name.startswith("layers.") and ".ffn." not in name)
    return shape[1] if temporal else shape[0]


def is_bias(name: str) -> bool:
    return name.endswith(".bias") or name.endswith(".b1") or name.endswith(".b2")


def init_parameters(cfg: ModelConfig, seed: int = 0) -> TimeMixerModel:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero."""
    rng = np.random.default_rng(seed)
    params: Dict[str, Tensor] = {}
    for name, shape in parameter_shapes(cfg).items():
        if is_bias(name):
            data = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(fan_in(name, shape))
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return TimeMixerModel(cfg, params)
