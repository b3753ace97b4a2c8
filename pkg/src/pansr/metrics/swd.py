"""Sliced Wasserstein distance between Laplacian-pyramid patch descriptors."""

from __future__ import annotations

import zlib
from typing import Dict, Optional, Sequence

import numpy as np

from ..errors import GeometryError, SamplingError
from .pyramid import laplacian_pyramid

PATCH = 7
N_PATCHES = 128
N_PROJECTIONS = 512
CHUNK = 128
MIN_LEVEL = 16


def _level_index(res: int, level: int) -> int:
    k = 0
    while res > level:
        res //= 2
        k += 1
    if res != level:
        raise GeometryError(f"level {level} is not a pyramid resolution of {res}")
    return k


def descriptors(images: np.ndarray, levels: Sequence[int], n_patches: int = N_PATCHES,
                seed: int = 0) -> Dict[int, np.ndarray]:
    """Per level: [N*n_patches, 3*7*7] raw patch descriptors.

    Patch positions for an image are drawn from a generator keyed by
    ``(seed, level, hash of the image)``, so they do not depend on set order.
    """
    x = np.asarray(images, dtype=np.float64)
    if x.ndim != 4:
        raise GeometryError(f"expected [N,C,H,W], got {x.shape}")
    if n_patches < 1:
        raise SamplingError("n_patches must be at least 1")
    res = x.shape[2]
    levels = sorted({int(l) for l in levels}, reverse=True)
    for l in levels:
        if l < MIN_LEVEL:
            raise GeometryError(f"SWD levels must be >= {MIN_LEVEL}, got {l}")
    if levels[0] > res:
        raise GeometryError(f"level {levels[0]} exceeds image resolution {res}")
    depth = _level_index(res, levels[-1]) + 1
    bands = laplacian_pyramid(x, depth)
    keys = [zlib.crc32(np.ascontiguousarray(img, dtype="<f8").tobytes()) for img in x]
    out = {}
    for l in levels:
        band = bands[_level_index(res, l)]
        span = band.shape[-1] - PATCH + 1
        if span < 1:
            raise SamplingError(f"level {l} is too small for {PATCH}x{PATCH} patches")
        rows = []
        for i, img in enumerate(band):
            rng = np.random.default_rng([int(seed), l, keys[i]])
            ys = rng.integers(0, span, n_patches)
            xs = rng.integers(0, span, n_patches)
            dy, dx = np.meshgrid(np.arange(PATCH), np.arange(PATCH), indexing="ij")
            p = img[:, ys[:, None, None] + dy, xs[:, None, None] + dx]  # [C,P,7,7]
            rows.append(p.transpose(1, 0, 2, 3).reshape(n_patches, -1))
        out[l] = np.concatenate(rows)
    return out


def normalize(desc: np.ndarray, channels: int = 3) -> np.ndarray:
    d = desc.reshape(len(desc), channels, -1)
    mean = d.mean(axis=(0, 2), keepdims=True)
    std = d.std(axis=(0, 2), keepdims=True)
    return ((d - mean) / np.where(std > 0, std, 1.0)).reshape(len(desc), -1)


def random_directions(dim: int, n: int, seed: int) -> np.ndarray:
    """[dim, n] unit columns."""
    d = np.random.default_rng([int(seed), dim, 7]).standard_normal((dim, n))
    return d / np.linalg.norm(d, axis=0, keepdims=True)


def _w1_sorted(pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    """1-D W1 per column between empirical distributions given by rows."""
    pa = np.sort(pa, axis=0)
    pb = np.sort(pb, axis=0)
    if len(pa) == len(pb):
        return np.abs(pa - pb).mean(axis=0)
    # unequal sizes: integrate |F_a - F_b| over the merged support
    out = np.empty(pa.shape[1])
    for j in range(pa.shape[1]):
        a, b = pa[:, j], pb[:, j]
        allv = np.sort(np.concatenate([a, b]))
        dx = np.diff(allv)
        fa = np.searchsorted(a, allv[:-1], side="right") / len(a)
        fb = np.searchsorted(b, allv[:-1], side="right") / len(b)
        out[j] = float((np.abs(fa - fb) * dx).sum())
    return out


def sliced_wasserstein(a: np.ndarray, b: np.ndarray, n_projections: int = N_PROJECTIONS,
                       seed: int = 0, directions: Optional[np.ndarray] = None) -> float:
    """Mean over random unit directions of the 1-D W1 between projections."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    if directions is None:
        directions = random_directions(a.shape[1], n_projections, seed)
    total = 0.0
    for s in range(0, directions.shape[1], CHUNK):
        d = directions[:, s:s + CHUNK]
        total += float(_w1_sorted(a @ d, b @ d).sum())
    return total / directions.shape[1]


def swd(real: np.ndarray, fake: np.ndarray, levels: Optional[Sequence[int]] = None,
        n_patches: int = N_PATCHES, n_projections: int = N_PROJECTIONS, seed: int = 0) -> Dict[int, float]:
    """Per-level SWD x 1e3. Default levels: every pyramid resolution >= 16."""
    real = np.asarray(real)
    fake = np.asarray(fake)
    if real.shape[1:] != fake.shape[1:]:
        raise GeometryError(f"image sets differ in shape: {real.shape[1:]} vs {fake.shape[1:]}")
    if levels is None:
        res = real.shape[2]
        levels = []
        while res >= MIN_LEVEL:
            levels.append(res)
            res //= 2
    da = descriptors(real, levels, n_patches, seed)
    db = descriptors(fake, levels, n_patches, seed)
    out = {}
    for l in sorted(da, reverse=True):
        na, nb = normalize(da[l]), normalize(db[l])
        out[l] = 1e3 * sliced_wasserstein(na, nb, n_projections, seed=seed + l)
    return out
