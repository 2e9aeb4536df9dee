"""Forecast accuracy metrics and the spectral forecastability score.

Conventions:

* MSE, MAE and RMSE average over every element of the inputs.
* MAPE and SMAPE are percentages, ``100/N * sum`` and ``200/N * sum``.
  MAPE skips zero targets (and logs how many); SMAPE adds ``SMAPE_EPS`` to
  the denominator so a term with ``y == y_hat == 0`` contributes 0.
* MASE scales the forecast error by the mean absolute seasonal difference
  of the *true horizon*, ``mean |y_j - y_{j-s}|`` for ``j = s..F-1``.
  Multivariate inputs ``[F, C]`` are scored per channel and averaged.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional

import numpy as np

from .exceptions import MetricError

logger = logging.getLogger(__name__)

SMAPE_EPS = 1e-8
METRIC_KEYS = ("mse", "mae", "rmse", "mape", "smape", "mase", "owa", "forecastability")


def _pair(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise MetricError(f"shape mismatch: y_true {y_true.shape} vs y_pred {y_pred.shape}")
    if y_true.size == 0:
        raise MetricError("empty inputs")
    return y_true, y_pred


def mse(y_true, y_pred) -> float:
    y_true, y_pred = _pair(y_true, y_pred)
    return float(np.mean((y_true - y_pred) ** 2))


def mae(y_true, y_pred) -> float:
    y_true, y_pred = _pair(y_true, y_pred)
    return float(np.mean(np.abs(y_true - y_pred)))


def rmse(y_true, y_pred) -> float:
    return math.sqrt(mse(y_true, y_pred))


def mape(y_true, y_pred) -> float:
    y_true, y_pred = _pair(y_true, y_pred)
    keep = y_true != 0
    skipped = int(y_true.size - keep.sum())
    if not keep.any():
        raise MetricError("MAPE is undefined: every target is zero")
    if skipped:
        logger.warning("MAPE: skipped %d zero-valued target(s) of %d", skipped, y_true.size)
    err = np.abs(y_true[keep] - y_pred[keep]) / np.abs(y_true[keep])
    return float(100.0 * err.sum() / keep.sum())


def smape(y_true, y_pred) -> float:
    y_true, y_pred = _pair(y_true, y_pred)
    num = np.abs(y_true - y_pred)
    den = np.abs(y_true) + np.abs(y_pred) + SMAPE_EPS
    return float(200.0 * np.sum(num / den) / y_true.size)


def _mase_1d(y_true: np.ndarray, y_pred: np.ndarray, s: int) -> float:
    scale = np.mean(np.abs(y_true[s:] - y_true[:-s]))
    if scale == 0.0:
        raise MetricError(f"MASE is undefined: the true horizon has zero lag-{s} variation "
                          f"(constant seasonal pattern)")
    return float(np.mean(np.abs(y_true - y_pred)) / scale)


def mase(y_true, y_pred, s: int = 1) -> float:
    """MASE over a horizon ``[F]`` or ``[F, C]`` (channels averaged)."""
    y_true, y_pred = _pair(y_true, y_pred)
    if s < 1:
        raise MetricError(f"seasonal period must be >= 1, got {s}")
    if y_true.shape[0] <= s:
        raise MetricError(f"MASE needs horizon F > s, got F={y_true.shape[0]}, s={s}")
    if y_true.ndim == 1:
        return _mase_1d(y_true, y_pred, s)
    flat_t = y_true.reshape(y_true.shape[0], -1)
    flat_p = y_pred.reshape(y_pred.shape[0], -1)
    return float(np.mean([_mase_1d(flat_t[:, c], flat_p[:, c], s) for c in range(flat_t.shape[1])]))


def owa(smape_value: float, mase_value: float, naive2_smape: Optional[float],
        naive2_mase: Optional[float]) -> float:
    if naive2_smape is None or naive2_mase is None:
        raise MetricError("OWA needs Naive2 reference values: supply naive2_smape and naive2_mase")
    if naive2_smape <= 0 or naive2_mase <= 0:
        raise MetricError(f"Naive2 references must be positive, got smape={naive2_smape}, mase={naive2_mase}")
    return 0.5 * (smape_value / naive2_smape + mase_value / naive2_mase)


def forecastability(series) -> float:
    """One minus the normalized spectral entropy of ``series``.

    The power spectrum over bins ``1..T//2`` (the constant bin is excluded)
    is normalized to a distribution ``p``; the entropy is divided by
    ``ln K`` (``K`` bins) so the score lies in ``[0, 1]``. A zero-energy
    series scores 0 with a warning.
    """
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    if x.size < 4:
        raise MetricError(f"forecastability needs at least 4 points, got {x.size}")
    power = np.abs(np.fft.rfft(x))[1:] ** 2
    total = power.sum()
    if total <= 0.0:
        logger.warning("forecastability: series has no non-constant energy; returning 0")
        return 0.0
    p = power / total
    nz = p[p > 0]
    entropy = float(-(nz * np.log(nz)).sum() / math.log(power.size))
    return min(1.0, max(0.0, 1.0 - entropy))


@dataclass(frozen=True)
class MetricsConfig:
    seasonal_period: int = 1
    naive2_smape: Optional[float] = None
    naive2_mase: Optional[float] = None

    def __post_init__(self):
        if self.seasonal_period < 1:
            raise MetricError(f"seasonal_period must be >= 1, got {self.seasonal_period}")


def evaluate_windows(y_true: np.ndarray, y_pred: np.ndarray,
                     cfg: MetricsConfig = MetricsConfig()) -> Dict[str, float]:
    """Score stacked forecasts ``[n_windows, F, C]``.

    Pointwise metrics pool every element. MASE is averaged over windows,
    skipping windows whose true horizon has no lag-``s`` variation. OWA is
    reported only when Naive2 references are configured.
    """
    y_true, y_pred = _pair(y_true, y_pred)
    out = {"mse": mse(y_true, y_pred), "mae": mae(y_true, y_pred)}
    out["rmse"] = math.sqrt(out["mse"])
    if np.any(y_true != 0):
        out["mape"] = mape(y_true, y_pred)
    out["smape"] = smape(y_true, y_pred)
    s = cfg.seasonal_period
    if y_true.ndim == 3 and y_true.shape[1] > s:
        scores = []
        for t, p in zip(y_true, y_pred):
            try:
                scores.append(mase(t, p, s))
            except MetricError:
                continue
        if len(scores) < y_true.shape[0]:
            logger.warning("MASE: skipped %d degenerate window(s)", y_true.shape[0] - len(scores))
        if scores:
            out["mase"] = float(np.mean(scores))
    if "mase" in out and cfg.naive2_smape is not None and cfg.naive2_mase is not None:
        out["owa"] = owa(out["smape"], out["mase"], cfg.naive2_smape, cfg.naive2_mase)
    return out


@dataclass
class MetricsReport:
    """Named metric values, optionally with per-seed spread."""

    values: Dict[str, float]
    std: Dict[str, float] = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    per_seed: list = field(default_factory=list)

    def __post_init__(self):
        for key, value in self.values.items():
            if not math.isfinite(value):
                raise MetricError(f"metric {key} is not finite: {value}")

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def aggregate(cls, reports: Iterable[Mapping[str, float]], seeds=()) -> "MetricsReport":
        """Mean and sample standard deviation (ddof=1; 0 for one seed) per metric."""
        reports = [dict(r.values if isinstance(r, MetricsReport) else r) for r in reports]
        if not reports:
            raise MetricError("need at least one report to aggregate")
        keys = [k for k in reports[0] if all(k in r for r in reports)]
        mean, std = {}, {}
        for k in keys:
            vals = np.array([r[k] for r in reports], dtype=np.float64)
            mean[k] = float(vals.mean())
            std[k] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        return cls(mean, std, list(seeds), reports)

    def to_dict(self) -> dict:
        ordered = lambda d: {k: d[k] for k in sorted(d, key=_key_order)}  # noqa: E731
        out = {"metrics": ordered(self.values)}
        if self.std:
            out["std"] = ordered(self.std)
        if self.seeds:
            out["seeds"] = list(self.seeds)
        if self.per_seed:
            out["per_seed"] = [ordered(r) for r in self.per_seed]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _key_order(key: str):
    return (METRIC_KEYS.index(key) if key in METRIC_KEYS else len(METRIC_KEYS), key)
