"""Season-trend decomposition: centered moving average or top-k DFT bins."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import ConfigError
from .tensor import Tensor, _record, as_tensor, matmul, sub

METHODS = ("moving_average", "dft_season_trend")


@dataclass(frozen=True)
class DecompositionConfig:
    method: str = "moving_average"
    kernel: int = 25
    top_k_frequencies: int = 5

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown decomposition method {self.method!r}; expected one of {METHODS}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"moving-average kernel must be a positive odd integer, got {self.kernel}")
        if self.top_k_frequencies < 1:
            raise ConfigError(f"top_k_frequencies must be positive, got {self.top_k_frequencies}")

    def check_length(self, length: int) -> None:
        """Reject a top-k count that the series length cannot support."""
        if self.method == "dft_season_trend" and self.top_k_frequencies > length // 2:
            raise ConfigError(
                f"top_k_frequencies={self.top_k_frequencies} exceeds the {length // 2} "
                f"non-constant DFT bins of a length-{length} series")


@lru_cache(maxsize=64)
def moving_average_matrix(length: int, kernel: int) -> np.ndarray:
    """Row ``i`` averages a ``kernel``-wide window centered on ``i``.

    Edge positions reuse the first/last value (replicate padding), so the
    trend keeps the input length. Returned array is read-only and cached.
    """
    half = (kernel - 1) // 2
    counts = np.zeros((length, length))
    for i in range(length):
        for j in range(i - half, i + half + 1):
            counts[i, min(max(j, 0), length - 1)] += 1.0
    mat = counts / kernel
    mat.setflags(write=False)
    return mat


def _top_k_mask(spectrum: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask over the frequency axis (-2) keeping the k largest bins, bin 0 excluded."""
    mag = np.abs(spectrum)
    mag[..., 0, :] = -np.inf
    order = np.argsort(-mag, axis=-2, kind="stable")[..., :k, :]
    mask = np.zeros(mag.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=-2)
    return mask


def _fourier_filter(x: Tensor, k: int) -> Tensor:
    # irfft(mask * rfft(x)) is an orthogonal projection for a fixed mask, so
    # the adjoint is the same filter applied to the incoming gradient.
    n = x.shape[-2]
    spectrum = np.fft.rfft(x.data, axis=-2)
    mask = _top_k_mask(spectrum, k)
    out = np.fft.irfft(np.where(mask, spectrum, 0), n=n, axis=-2)

    def rule(g):
        return (np.fft.irfft(np.where(mask, np.fft.rfft(g, axis=-2), 0), n=n, axis=-2),)

    return _record(out, (x,), rule)


def series_decomp(x, cfg: DecompositionConfig = DecompositionConfig()) -> tuple[Tensor, Tensor]:
    """Split ``x`` (time on axis -2) into ``(seasonal, trend)``.

    Moving average: ``trend`` is the replicate-padded centered mean and
    ``seasonal = x - trend``. DFT: ``seasonal`` is the inverse transform of
    the ``top_k_frequencies`` strongest non-constant bins and
    ``trend = x - seasonal``, so the mean always stays in the trend.
    """
    x = as_tensor(x)
    if x.ndim < 2:
        raise ConfigError(f"series_decomp expects time on axis -2, got shape {x.shape}")
    length = x.shape[-2]
    if cfg.method == "moving_average":
        smooth = matmul(Tensor(moving_average_matrix(length, cfg.kernel)), x)
        seasonal = sub(x, smooth)
        # x - (x - s) is exact in more cases than s itself, which keeps
        # seasonal + trend == x bitwise for the reconstruction check.
        trend = sub(x, seasonal)
        return seasonal, trend
    cfg.check_length(length)
    seasonal = _fourier_filter(x, cfg.top_k_frequencies)
    return seasonal, sub(x, seasonal)


def dft_magnitude_spectrum(x) -> np.ndarray:
    """Magnitudes ``|X_k|`` of the real DFT, ``k = 0..floor(T/2)``.

    Unnormalized convention: ``sum(x**2) == (|X_0|^2 + 2*sum_{0<k<T/2}|X_k|^2
    + [T even]*|X_{T/2}|^2) / T``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 2:
        raise ValueError(f"need a 1-D series of length >= 2, got shape {x.shape}")
    return np.abs(np.fft.rfft(x))


def parseval_energy(magnitudes: np.ndarray, length: int) -> float:
    """Time-domain energy recovered from :func:`dft_magnitude_spectrum` output."""
    power = magnitudes ** 2
    weights = np.full(power.shape, 2.0)
    weights[0] = 1.0
    if length % 2 == 0:
        weights[-1] = 1.0
    return float((weights * power).sum() / length)
