"""Gaussian / Laplacian pyramids with the 5-tap binomial filter."""

from __future__ import annotations

from typing import List

import numpy as np
from scipy import ndimage

_BINOMIAL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _smooth(x: np.ndarray) -> np.ndarray:
    x = ndimage.correlate1d(x, _BINOMIAL, axis=-1, mode="mirror")
    return ndimage.correlate1d(x, _BINOMIAL, axis=-2, mode="mirror")


def pyr_down(x: np.ndarray) -> np.ndarray:
    return _smooth(x)[..., ::2, ::2]


def pyr_up(x: np.ndarray) -> np.ndarray:
    shape = x.shape[:-2] + (x.shape[-2] * 2, x.shape[-1] * 2)
    up = np.zeros(shape, dtype=np.float64)
    up[..., ::2, ::2] = x
    return _smooth(up) * 4.0


def laplacian_pyramid(x: np.ndarray, n_levels: int) -> List[np.ndarray]:
    """Bands from finest to coarsest; the last entry is the low-pass residual."""
    cur = np.asarray(x, dtype=np.float64)
    bands = []
    for _ in range(n_levels - 1):
        small = pyr_down(cur)
        bands.append(cur - pyr_up(small))
        cur = small
    bands.append(cur)
    return bands
