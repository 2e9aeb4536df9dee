"""Independent reference implementations used as test oracles.

Nothing here imports the package's numerical code; each function is a
direct, slow transcription of the defining formula.
"""

from __future__ import annotations

import cmath
import math
from typing import Callable, Dict, List

import numpy as np

FD_STEP = 1e-5


def central_difference(f: Callable[[], float], array: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """d f / d array by central differences, perturbing ``array`` in place."""
    grad = np.zeros_like(array)
    flat, gflat = array.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        up = f()
        flat[i] = old - step
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * step)
    return grad


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


# -- metrics as plain loops ------------------------------------------------------------

def mse_loop(t, p):
    return sum((a - b) ** 2 for a, b in zip(t, p)) / len(t)


def mae_loop(t, p):
    return sum(abs(a - b) for a, b in zip(t, p)) / len(t)


def rmse_loop(t, p):
    return math.sqrt(mse_loop(t, p))


def mape_loop(t, p):
    terms = [abs(a - b) / abs(a) for a, b in zip(t, p) if a != 0]
    return 100.0 * sum(terms) / len(terms)


def smape_loop(t, p, eps=1e-8):
    return 200.0 * sum(abs(a - b) / (abs(a) + abs(b) + eps) for a, b in zip(t, p)) / len(t)


def mase_loop(t, p, s=1):
    scale = sum(abs(t[j] - t[j - s]) for j in range(s, len(t))) / (len(t) - s)
    return mae_loop(t, p) / scale


# -- signal processing ---------------------------------------------------------------------

def moving_average_loop(x: List[float], kernel: int) -> List[float]:
    """Centered mean with the end values repeated as padding."""
    half = (kernel - 1) // 2
    n = len(x)
    out = []
    for i in range(n):
        window = [x[min(max(j, 0), n - 1)] for j in range(i - half, i + half + 1)]
        out.append(sum(window) / kernel)
    return out


def dft_loop(x: List[float]) -> List[complex]:
    n = len(x)
    return [sum(x[t] * cmath.exp(-2j * math.pi * k * t / n) for t in range(n)) for k in range(n)]


def spectral_entropy_score(x: List[float]) -> float:
    """1 - H(p)/ln K over one-sided power bins 1..n//2."""
    n = len(x)
    spec = dft_loop(x)
    power = [abs(spec[k]) ** 2 for k in range(1, n // 2 + 1)]
    total = sum(power)
    h = -sum(q / total * math.log(q / total) for q in power if q > 0)
    return 1.0 - h / math.log(len(power))


def avg_pool_loop(x: np.ndarray) -> np.ndarray:
    """Window-2 stride-2 mean over axis -2, dropping an odd tail step."""
    t = x.shape[-2] // 2
    out = np.empty(x.shape[:-2] + (t, x.shape[-1]))
    for i in range(t):
        out[..., i, :] = (x[..., 2 * i, :] + x[..., 2 * i + 1, :]) / 2
    return out


# -- reference forward pass ---------------------------------------------------------------

def _gelu(x):
    from scipy.special import erfc

    return 0.5 * x * erfc(-x / math.sqrt(2.0))


def reference_forward(params: Dict[str, np.ndarray], x: np.ndarray, *, num_scales: int, num_layers: int,
                      kernel: int, use_decomposition=True, use_fmm=True, seasonal="bottom_up",
                      trend="top_down", undecomposed="none", ensemble="sum") -> np.ndarray:
    """Moving-average variant of the model written with einsum over explicit loops."""
    scales = [x]
    for _ in range(num_scales):
        scales.append(avg_pool_loop(scales[-1]))
    feats = [s @ params["embedding.weight"] + params["embedding.bias"] for s in scales]

    def temporal(w, b, h):
        return np.einsum("ts,bsd->btd", w, h) + b[None]

    def mlp(key, h):
        mid = _gelu(temporal(params[key + ".w1"], params[key + ".b1"], h))
        return temporal(params[key + ".w2"], params[key + ".b2"], mid)

    def mix(parts, direction, stream, layer):
        parts = list(parts)
        if direction == "bottom_up":
            for m in range(1, num_scales + 1):
                parts[m] = parts[m] + mlp(f"layers.{layer}.{stream}.bottom_up.{m}", parts[m - 1])
        elif direction == "top_down":
            for m in range(num_scales - 1, -1, -1):
                parts[m] = parts[m] + mlp(f"layers.{layer}.{stream}.top_down.{m}", parts[m + 1])
        return parts

    for layer in range(num_layers):
        if use_decomposition:
            trends = []
            for f in feats:
                tr = np.empty_like(f)
                for b in range(f.shape[0]):
                    for d in range(f.shape[2]):
                        tr[b, :, d] = moving_average_loop(list(f[b, :, d]), kernel)
                trends.append(tr)
            seasons = [f - t for f, t in zip(feats, trends)]
            mixed = [s + t for s, t in zip(mix(seasons, seasonal, "season", layer),
                                           mix(trends, trend, "trend", layer))]
        else:
            mixed = mix(feats, undecomposed, "mixed", layer)
        key = f"layers.{layer}.ffn"
        feats = [f + (_gelu(h @ params[key + ".w1"] + params[key + ".b1"]) @ params[key + ".w2"]
                      + params[key + ".b2"]) for f, h in zip(feats, mixed)]

    used = range(num_scales + 1) if use_fmm else range(1)
    preds = []
    for m in used:
        key = f"predict.{m}"
        h = temporal(params[key + ".temporal.weight"], params[key + ".temporal.bias"], feats[m])
        preds.append(h @ params[key + ".projection.weight"] + params[key + ".projection.bias"])
    out = sum(preds)
    return out / len(preds) if ensemble == "average" else out
