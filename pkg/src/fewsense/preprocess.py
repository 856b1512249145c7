"""Two-step CSI denoising: Hampel outlier rejection, then wavelet smoothing.

Both filters operate per (subcarrier, antenna) channel on the time axis.
The wavelet transform is implemented here directly (Daubechies family,
half-sample symmetric extension) so the perfect-reconstruction property is
testable without an external wavelet dependency.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .csi_core import CsiRecord
from .errors import ConfigurationError

MAD_SCALE = 1.4826  # MAD-to-sigma for a normal distribution

# Daubechies scaling filters (reconstruction lowpass), sum = sqrt(2).
_SCALING_FILTERS = {
    "haar": (0.7071067811865476, 0.7071067811865476),
    "db2": (0.48296291314469025, 0.836516303737469,
            0.22414386804185735, -0.12940952255092145),
    "db3": (0.3326705529509569, 0.8068915093133388, 0.4598775021193313,
            -0.13501102001039084, -0.08544127388224149, 0.035226291882100656),
    "db4": (0.23037781330885523, 0.7148465705525415, 0.6308807679295904,
            -0.02798376941698385, -0.18703481171888114, 0.030841381835986965,
            0.032883011666982945, -0.010597401784997278),
}


@dataclass(frozen=True)
class HampelConfig:
    window_half_width: int = 3
    n_sigmas: float = 3.0

    def __post_init__(self):
        if self.window_half_width < 1:
            raise ConfigurationError("window_half_width must be >= 1")
        if self.n_sigmas <= 0:
            raise ConfigurationError("n_sigmas must be positive")


@dataclass(frozen=True)
class DwtConfig:
    wavelet: str = "db4"
    levels: int = 3
    threshold_mode: str = "soft"
    threshold_rule: str = "universal"

    def __post_init__(self):
        if self.wavelet not in _SCALING_FILTERS:
            raise ConfigurationError(
                f"unknown wavelet {self.wavelet!r}, have {sorted(_SCALING_FILTERS)}"
            )
        if self.levels < 1:
            raise ConfigurationError("levels must be >= 1")
        if self.threshold_mode not in ("soft", "hard"):
            raise ConfigurationError(f"unknown threshold_mode {self.threshold_mode!r}")
        if self.threshold_rule != "universal":
            raise ConfigurationError(f"unknown threshold_rule {self.threshold_rule!r}")


def _filter_bank(name: str):
    rec_lo = np.asarray(_SCALING_FILTERS[name], dtype=np.float64)
    taps = len(rec_lo)
    dec_lo = rec_lo[::-1]
    rec_hi = np.array([(-1) ** k * rec_lo[taps - 1 - k] for k in range(taps)])
    dec_hi = rec_hi[::-1]
    return dec_lo, dec_hi, rec_lo, rec_hi


def _sym_extend(x: np.ndarray, pad: int) -> np.ndarray:
    # half-sample symmetric extension via reflected indices (period 2n),
    # valid for any pad length relative to the signal
    n = x.shape[0]
    pos = np.arange(-pad, n + pad)
    m = np.mod(pos, 2 * n)
    idx = np.where(m < n, m, 2 * n - 1 - m)
    return x[idx]


def _conv_valid(x: np.ndarray, filt: np.ndarray) -> np.ndarray:
    # x is (n, C); valid convolution along axis 0
    windows = sliding_window_view(x, len(filt), axis=0)
    return windows @ filt[::-1]


def _dwt_step(x: np.ndarray, dec_lo: np.ndarray, dec_hi: np.ndarray):
    ext = _sym_extend(x, len(dec_lo) - 1)
    approx = _conv_valid(ext, dec_lo)[1::2]
    detail = _conv_valid(ext, dec_hi)[1::2]
    return approx, detail


def _idwt_step(approx, detail, rec_lo, rec_hi, out_len: int):
    taps = len(rec_lo)
    up_a = np.zeros((2 * approx.shape[0],) + approx.shape[1:])
    up_a[::2] = approx
    up_d = np.zeros((2 * detail.shape[0],) + detail.shape[1:])
    up_d[::2] = detail
    pad = ((taps - 1, taps - 1),) + ((0, 0),) * (approx.ndim - 1)
    y = _conv_valid(np.pad(up_a, pad), rec_lo) + _conv_valid(np.pad(up_d, pad), rec_hi)
    return y[taps - 2 : taps - 2 + out_len]


def wavedec(series: np.ndarray, cfg: DwtConfig) -> list[np.ndarray]:
    """Multilevel decomposition: [approx_L, detail_L, ..., detail_1].

    Accepts (T,) or (T, C); channels transform independently.
    """
    x = np.asarray(series, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    _check_levels(x.shape[0], cfg.levels)
    dec_lo, dec_hi, _, _ = _filter_bank(cfg.wavelet)
    details = []
    approx = x
    for _ in range(cfg.levels):
        approx, detail = _dwt_step(approx, dec_lo, dec_hi)
        details.append(detail)
    coeffs = [approx] + details[::-1]
    return [c[:, 0] for c in coeffs] if squeeze else coeffs


def waverec(coeffs: list[np.ndarray], cfg: DwtConfig, length: int) -> np.ndarray:
    """Inverse of wavedec, cropped to the original length."""
    cs = [np.asarray(c, dtype=np.float64) for c in coeffs]
    squeeze = cs[0].ndim == 1
    if squeeze:
        cs = [c[:, None] for c in cs]
    _, _, rec_lo, rec_hi = _filter_bank(cfg.wavelet)
    # lengths of the approx at each level, deepest last
    lengths = [length]
    for _ in range(len(cs) - 1):
        lengths.append((lengths[-1] + len(rec_lo) - 1) // 2)
    approx = cs[0]
    for level, detail in enumerate(cs[1:]):
        out_len = lengths[len(cs) - 2 - level]
        approx = _idwt_step(approx, detail, rec_lo, rec_hi, out_len)
    return approx[:, 0] if squeeze else approx


def _check_levels(length: int, levels: int) -> None:
    max_levels = int(math.floor(math.log2(length))) if length > 1 else 0
    if levels > max_levels:
        raise ConfigurationError(
            f"{levels} decomposition levels invalid for length {length} "
            f"(max {max_levels})"
        )


def hampel_filter(series: np.ndarray, cfg: HampelConfig) -> np.ndarray:
    """Sliding-window median/MAD outlier replacement, window truncated at edges."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise ConfigurationError(f"series must be 1-D, got {x.ndim}-D")
    if x.shape[0] <= 2 * cfg.window_half_width:
        raise ConfigurationError(
            f"series length {x.shape[0]} too short for half-width {cfg.window_half_width}"
        )
    return _hampel_channels(x[:, None], cfg)[:, 0]


def _hampel_channels(x: np.ndarray, cfg: HampelConfig) -> np.ndarray:
    n = x.shape[0]
    hw = cfg.window_half_width
    med = np.empty_like(x)
    mad = np.empty_like(x)

    windows = sliding_window_view(x, 2 * hw + 1, axis=0)
    med[hw : n - hw] = np.median(windows, axis=-1)
    mad[hw : n - hw] = np.median(
        np.abs(windows - med[hw : n - hw][..., None]), axis=-1
    )
    for i in list(range(hw)) + list(range(n - hw, n)):
        lo, hi = max(0, i - hw), min(n, i + hw + 1)
        med[i] = np.median(x[lo:hi], axis=0)
        mad[i] = np.median(np.abs(x[lo:hi] - med[i][None]), axis=0)

    # strict > makes MAD=0 replace everything not exactly at the median
    mask = np.abs(x - med) > cfg.n_sigmas * MAD_SCALE * mad
    out = x.copy()
    out[mask] = med[mask]
    return out


def dwt_denoise(series: np.ndarray, cfg: DwtConfig) -> np.ndarray:
    """Wavelet shrinkage with the universal threshold sigma*sqrt(2 ln T)."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise ConfigurationError(f"series must be 1-D, got {x.ndim}-D")
    return _dwt_denoise_channels(x[:, None], cfg)[:, 0]


def _dwt_denoise_channels(x: np.ndarray, cfg: DwtConfig) -> np.ndarray:
    length = x.shape[0]
    coeffs = wavedec(x, cfg)
    finest_detail = coeffs[-1]
    sigma = np.median(np.abs(finest_detail), axis=0) / 0.6745
    threshold = sigma * math.sqrt(2.0 * math.log(length))
    shrunk = [coeffs[0]] + [
        _apply_threshold(c, threshold, cfg.threshold_mode) for c in coeffs[1:]
    ]
    return waverec(shrunk, cfg, length)


def _apply_threshold(coeff: np.ndarray, threshold: np.ndarray, mode: str) -> np.ndarray:
    if mode == "soft":
        return np.sign(coeff) * np.maximum(np.abs(coeff) - threshold, 0.0)
    return np.where(np.abs(coeff) > threshold, coeff, 0.0)


def preprocess_record(
    rec: CsiRecord, hampel: HampelConfig, dwt: DwtConfig
) -> CsiRecord:
    """Hampel then wavelet denoising, each (subcarrier, antenna) channel independently."""
    t, s, a = rec.shape
    if t <= 2 * hampel.window_half_width:
        raise ConfigurationError(
            f"record length {t} too short for Hampel half-width {hampel.window_half_width}"
        )
    flat = rec.amplitude.reshape(t, s * a).astype(np.float64)
    cleaned = _hampel_channels(flat, hampel)
    smoothed = _dwt_denoise_channels(cleaned, dwt)
    return rec.with_amplitude(smoothed.reshape(t, s, a).astype(np.float32))
