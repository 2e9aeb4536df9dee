"""Losses, Adam, the epoch loop and multi-seed aggregation."""

from __future__ import annotations

import contextlib
import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .data import SeriesDataset, WindowSpec, window_arrays
from .exceptions import ConfigError, DataError, ShapeError, TrainingDivergedError
from .metrics import MetricsConfig, MetricsReport, evaluate_windows
from .model import TimeMixerModel
from .tensor import Tensor, abs as tabs, add, backward, div, mean, no_grad, square, sub

logger = logging.getLogger(__name__)

LOSSES = ("mse", "smape")
LR_DECAYS = ("none", "halve_per_epoch")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 128
    epochs: int = 10
    loss: str = "mse"
    seed: int = 0
    deterministic: bool = True
    lr_decay: str = "none"
    grad_clip: Optional[float] = None
    patience: Optional[int] = None
    keep_best: bool = False
    eval_batch_size: int = 512

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {getattr(self, name)}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch sizes must be positive")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.lr_decay not in LR_DECAYS:
            raise ConfigError(f"lr_decay must be one of {LR_DECAYS}, got {self.lr_decay!r}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive, got {self.grad_clip}")
        if self.patience is not None and self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")

    def to_dict(self) -> dict:
        return asdict(self)


# -- losses ------------------------------------------------------------------

def _check_pair(pred: Tensor, target) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"loss shape mismatch: pred {pred.shape} vs target {target.shape}")
    return target


def mse_loss(pred: Tensor, target) -> Tensor:
    target = _check_pair(pred, target)
    return mean(square(sub(pred, target)))


def smape_loss(pred: Tensor, target, eps: float = 1e-8) -> Tensor:
    """``200/N * sum |t - p| / (|t| + |p| + eps)``; a 0/0 term contributes 0."""
    target = _check_pair(pred, target)
    num = tabs(sub(target, pred))
    den = add(add(tabs(target), tabs(pred)), eps)
    return mean(div(num, den)) * 200.0


LOSS_FUNCTIONS: Dict[str, Callable] = {"mse": mse_loss, "smape": smape_loss}


# -- optimizer -------------------------------------------------------------------

@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params])


def adam_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on ``params``.

    A missing gradient is treated as zero (moments still decay).
    """
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for i, p in enumerate(params):
        g = grads[i] if grads[i] is not None else np.zeros(p.shape)
        m, v = state.m[i], state.v[i]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state = AdamState.zeros_like(self.params)

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state,
                  self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad ** 2).sum()) for p in params if p.grad is not None))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


# -- loop --------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    wall_seconds: float


@dataclass
class History:
    records: List[EpochRecord] = field(default_factory=list)

    def losses(self) -> List[tuple]:
        return [(r.train_loss, r.val_loss) for r in self.records]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "wall_seconds"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), f"{r.wall_seconds:.3f}"])


@contextlib.contextmanager
def deterministic_threads(enabled: bool):
    """Pin BLAS to one thread so floating summation order never varies."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


def predict_array(model: TimeMixerModel, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Forward pass over ``x[n, P, C]`` in batches, without recording a tape."""
    out = np.empty((x.shape[0], model.config.pred_len, model.config.channels))
    was_training = model.training
    model.eval()
    with no_grad():
        for lo in range(0, x.shape[0], batch_size):
            out[lo:lo + batch_size] = model(Tensor(x[lo:lo + batch_size])).data
    model.training = was_training
    return out


def _split_loss(model, xs, ys, loss_name, batch_size) -> float:
    if xs.shape[0] == 0:
        return float("nan")
    pred = predict_array(model, xs, batch_size)
    with no_grad():
        return float(LOSS_FUNCTIONS[loss_name](Tensor(pred), ys).data)


def window_spec_for(model: TimeMixerModel) -> WindowSpec:
    return WindowSpec(model.config.input_len, model.config.pred_len)


def train(model: TimeMixerModel, dataset: SeriesDataset, cfg: TrainConfig,
          log: Optional[Callable[[str], None]] = None) -> tuple:
    """Fit ``model`` on the training windows of ``dataset``; returns ``(model, history)``.

    Windows are reshuffled each epoch with a generator seeded by
    ``(seed, epoch)``. Without ``keep_best`` the final-epoch weights are
    returned; ``patience`` stops after that many epochs without a
    validation improvement.
    """
    spec = window_spec_for(model)
    if dataset.num_channels != model.config.channels:
        raise ShapeError(f"dataset has {dataset.num_channels} channels, model expects {model.config.channels}")
    train_x, train_y = window_arrays(dataset, spec, "train")
    val_x, val_y = window_arrays(dataset, spec, "val")
    if train_x.shape[0] == 0:
        raise DataError(f"training split too short for one window of length "
                        f"{spec.input_len}+{spec.pred_len}")
    loss_fn = LOSS_FUNCTIONS[cfg.loss]
    params = model.parameters()
    state = AdamState.zeros_like(params)
    history = History()
    best_val, best_params, stale = math.inf, None, 0
    n = train_x.shape[0]

    with deterministic_threads(cfg.deterministic):
        for epoch in range(cfg.epochs):
            started = time.perf_counter()
            lr = cfg.learning_rate * (0.5 ** epoch if cfg.lr_decay == "halve_per_epoch" else 1.0)
            order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
            model.train(True, seed=cfg.seed * 100003 + epoch)
            total, count = 0.0, 0
            for batch_index, lo in enumerate(range(0, n, cfg.batch_size)):
                idx = order[lo:lo + cfg.batch_size]
                pred = model(Tensor(train_x[idx]))
                loss = loss_fn(pred, train_y[idx])
                value = float(loss.data)
                if not math.isfinite(value):
                    raise TrainingDivergedError(
                        f"non-finite training loss {value} at epoch {epoch}, batch {batch_index}")
                model.zero_grad()
                backward(loss)
                if cfg.grad_clip is not None:
                    clip_grad_norm(params, cfg.grad_clip)
                adam_step(params, [p.grad for p in params], state, lr, cfg.beta1, cfg.beta2, cfg.epsilon)
                total += value * idx.size
                count += idx.size
            model.eval()
            val_loss = _split_loss(model, val_x, val_y, cfg.loss, cfg.eval_batch_size)
            record = EpochRecord(epoch + 1, total / count, val_loss, time.perf_counter() - started)
            history.records.append(record)
            if log:
                log(f"epoch {record.epoch}: train {record.train_loss:.6f} val {record.val_loss:.6f} "
                    f"({record.wall_seconds:.1f}s)")
            if math.isfinite(val_loss) and val_loss < best_val:
                best_val, stale = val_loss, 0
                if cfg.keep_best:
                    best_params = [p.data.copy() for p in params]
            else:
                stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                break

    if cfg.keep_best and best_params is not None:
        for p, data in zip(params, best_params):
            p.data = data
    model.zero_grad()
    return model, history


def evaluate(model: TimeMixerModel, dataset: SeriesDataset, split: str = "test",
             metrics_cfg: MetricsConfig = MetricsConfig(), batch_size: int = 512) -> Dict[str, float]:
    """Metrics on every window of ``split``, in the scaled (z-score) space."""
    xs, ys = window_arrays(dataset, window_spec_for(model), split)
    if xs.shape[0] == 0:
        raise DataError(f"{split} split is too short for a single window")
    return evaluate_windows(ys, predict_array(model, xs, batch_size), metrics_cfg)


def multi_seed_run(run: Callable[[int], Dict[str, float]], seeds: Sequence[int]) -> MetricsReport:
    """Call ``run(seed)`` for every seed; mean and sample std per metric."""
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("multi_seed_run needs at least one seed")
    return MetricsReport.aggregate([run(s) for s in seeds], seeds)
