"""Full-reference metrics: PSNR and SSIM on 8-bit quantized images."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError, GeometryError

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 255.0
BT601 = np.array([0.299, 0.587, 0.114])


def quantize(x: np.ndarray) -> np.ndarray:
    """[-1,1] floats -> 0..255 integer levels (as float64)."""
    return np.rint(np.clip((np.asarray(x, dtype=np.float64) + 1.0) * 127.5, 0, 255))


def _as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    return x[None] if x.ndim == 3 else x


def psnr(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-image PSNR in dB (MAX = 255); identical pairs give +inf."""
    a, b = _as_batch(a), _as_batch(b)
    if a.shape != b.shape:
        raise DimensionError(f"psnr: shapes {a.shape} and {b.shape} differ")
    qa, qb = quantize(a), quantize(b)
    mse = ((qa - qb) ** 2).reshape(len(qa), -1).mean(axis=1)
    with np.errstate(divide="ignore"):
        return np.where(mse == 0, np.inf, 10.0 * np.log10(255.0 ** 2 / np.where(mse == 0, 1, mse)))


def cap_psnr(values) -> np.ndarray:
    """Replace the +inf sentinel by the CSV cap."""
    return np.minimum(np.asarray(values, dtype=np.float64), PSNR_CAP)


def luminance(x: np.ndarray) -> np.ndarray:
    """BT.601 luma of quantized RGB, shape [N,H,W], range 0..255."""
    q = quantize(_as_batch(x))
    return np.tensordot(BT601, q, axes=([0], [1]))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, g1: np.ndarray) -> np.ndarray:
    """Separable 'valid' filtering of [N,H,W] by the outer product of g1."""
    k = len(g1)
    rows = sliding_window_view(img, k, axis=1) @ g1
    return sliding_window_view(rows, k, axis=2) @ g1


def ssim_map(ya: np.ndarray, yb: np.ndarray, size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g1 = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    g1 /= g1.sum()
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    mu_a = _filter_valid(ya, g1)
    mu_b = _filter_valid(yb, g1)
    saa = _filter_valid(ya * ya, g1) - mu_a ** 2
    sbb = _filter_valid(yb * yb, g1) - mu_b ** 2
    sab = _filter_valid(ya * yb, g1) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return num / den


def ssim(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-image mean SSIM of the luminance channel over valid window positions."""
    a, b = _as_batch(a), _as_batch(b)
    if a.shape != b.shape:
        raise DimensionError(f"ssim: shapes {a.shape} and {b.shape} differ")
    if min(a.shape[2:]) < SSIM_WINDOW:
        raise GeometryError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[2:]}")
    ya, yb = luminance(a), luminance(b)
    if np.array_equal(ya, yb):
        return np.ones(len(ya))
    m = ssim_map(ya, yb)
    return m.reshape(len(m), -1).mean(axis=1)
