"""Random degradation of clean images: blur, downsample, noise, JPEG.

    degraded = J((x * k * b) downsampled by s + n)

with k an isotropic Gaussian aperture PSF, b a linear motion (handshake)
PSF, n additive Gaussian noise and J a quantized-DCT stand-in for JPEG.
Every image draws its own parameters from a generator seeded by
``(seed, sample index)``, so results do not depend on batching or workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .errors import ConfigError, GeometryError

# IJG standard luminance quantization table
JPEG_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


@dataclass
class DegradationParams:
    """Sampling ranges for the random degradation. Upper bounds of 0 disable a stage."""

    sigma_range: Tuple[float, float] = (0.2, 3.0)
    motion_max: float = 5.0
    scale: int = 1
    noise_max: float = 0.05
    jpeg_quality: Optional[Tuple[int, int]] = (30, 95)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.sigma_range
        if lo < 0 or hi < lo:
            raise ConfigError(f"bad sigma range {self.sigma_range}")
        if self.motion_max < 0:
            raise ConfigError("motion_max must be non-negative")
        if int(self.scale) != self.scale or self.scale < 1:
            raise ConfigError(f"scale must be a positive integer, got {self.scale}")
        if self.noise_max < 0:
            raise ConfigError("noise_max must be non-negative")
        if self.jpeg_quality is not None:
            qlo, qhi = self.jpeg_quality
            if not 10 <= qlo <= qhi <= 100:
                raise ConfigError(f"jpeg quality range {self.jpeg_quality} outside [10, 100]")

    @classmethod
    def identity(cls, jpeg_quality: Optional[int] = None, seed: int = 0) -> "DegradationParams":
        q = None if jpeg_quality is None else (jpeg_quality, jpeg_quality)
        return cls(sigma_range=(0.0, 0.0), motion_max=0.0, scale=1, noise_max=0.0, jpeg_quality=q, seed=seed)


def make_psf(kind: str, sigma: float = 1.0, length: float = 0.0, angle: float = 0.0,
             size: Optional[int] = None) -> np.ndarray:
    """Normalized discrete point spread function.

    ``gaussian``: truncated at +-3 sigma unless ``size`` is given.
    ``motion``: a centred segment of ``length`` pixels at ``angle`` radians,
    rasterized by bilinear splatting of dense samples along the segment.
    """
    if kind == "gaussian":
        if sigma <= 0:
            raise ConfigError(f"gaussian PSF needs sigma > 0, got {sigma}")
        radius = (size // 2) if size else max(int(math.ceil(3 * sigma)), 0)
        ax = np.arange(-radius, radius + 1, dtype=np.float64)
        g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sigma * sigma))
        k = g / g.sum()
    elif kind == "motion":
        if length < 0:
            raise ConfigError(f"motion PSF needs length >= 0, got {length}")
        if length == 0:
            return np.ones((1, 1))
        radius = int(math.ceil(length / 2)) + 1
        k = np.zeros((2 * radius + 1, 2 * radius + 1))
        m = max(2, int(math.ceil(8 * length)) + 1)
        ts = np.linspace(-length / 2, length / 2, m)
        ys = radius + ts * math.sin(angle)
        xs = radius + ts * math.cos(angle)
        y0, x0 = np.floor(ys).astype(int), np.floor(xs).astype(int)
        fy, fx = ys - y0, xs - x0
        for dy, wy in ((0, 1 - fy), (1, fy)):
            for dx, wx in ((0, 1 - fx), (1, fx)):
                np.add.at(k, (y0 + dy, x0 + dx), wy * wx)
        k = k / k.sum()
    else:
        raise ConfigError(f"unknown PSF kind {kind!r}")
    return _trim(k)


def _trim(k: np.ndarray) -> np.ndarray:
    """Drop all-zero outer rings so vanishing kernels collapse to [[1]]."""
    while k.shape[0] > 1 and not k[0].any() and not k[-1].any() and not k[:, 0].any() and not k[:, -1].any():
        k = k[1:-1, 1:-1]
    return k


def _blur(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    if kernel.shape == (1, 1):
        return img * kernel[0, 0]
    return np.stack([ndimage.convolve(ch, kernel, mode="reflect") for ch in img])


def box_downsample(img: np.ndarray, s: int) -> np.ndarray:
    if s == 1:
        return img
    c, h, w = img.shape
    if h % s or w % s:
        raise GeometryError(f"image {h}x{w} not divisible by scale {s}")
    return img.reshape(c, h // s, s, w // s, s).mean(axis=(2, 4))


def jpeg_table(quality: int) -> np.ndarray:
    """IJG-scaled luminance table; quality 100 gives all ones."""
    if not 10 <= int(quality) <= 100:
        raise ConfigError(f"jpeg quality {quality} outside [10, 100]")
    q = int(quality)
    scale = 5000 / q if q < 50 else 200 - 2 * q
    return np.clip(np.floor((JPEG_LUMA_TABLE * scale + 50) / 100), 1, 255)


def _jpeg_channel(ch: np.ndarray, table: np.ndarray) -> np.ndarray:
    h, w = ch.shape
    ph, pw = (-h) % 8, (-w) % 8
    x = np.pad(ch, ((0, ph), (0, pw)), mode="edge") if (ph or pw) else ch
    hb, wb = x.shape[0] // 8, x.shape[1] // 8
    blocks = x.reshape(hb, 8, wb, 8).transpose(0, 2, 1, 3)
    coef = sfft.dctn(blocks, type=2, axes=(2, 3), norm="ortho")
    coef = np.round(coef / table) * table
    rec = sfft.idctn(coef, type=2, axes=(2, 3), norm="ortho")
    return rec.transpose(0, 2, 1, 3).reshape(x.shape)[:h, :w]


def jpeg_surrogate(x: np.ndarray, quality: int) -> np.ndarray:
    """Blockwise DCT quantization round-trip on [-1,1] images ([C,H,W] or [N,C,H,W]).

    Works on the 0..255 scale with a 128 level shift, per channel.
    """
    table = jpeg_table(quality)
    arr = np.asarray(x, dtype=np.float64)
    flat = arr.reshape(-1, *arr.shape[-2:])
    out = np.empty_like(flat)
    for i, ch in enumerate(flat):
        v = (ch + 1.0) * 127.5 - 128.0
        out[i] = (_jpeg_channel(v, table) + 128.0) / 127.5 - 1.0
    return out.reshape(arr.shape).astype(np.asarray(x).dtype)


@dataclass
class DrawnDegradation:
    """Parameters actually applied to one image (for manifests)."""

    index: int
    sigma: float
    motion_length: float
    motion_angle: float
    scale: int
    noise_sigma: float
    jpeg_quality: Optional[int]

    def as_dict(self):
        return asdict(self)


def draw(p: DegradationParams, index: int) -> DrawnDegradation:
    rng = np.random.default_rng([int(p.seed), int(index)])
    sigma = float(rng.uniform(*p.sigma_range))
    length = float(rng.uniform(0.0, p.motion_max))
    angle = float(rng.uniform(0.0, math.pi))
    noise = float(rng.uniform(0.0, p.noise_max))
    q = None if p.jpeg_quality is None else int(rng.integers(p.jpeg_quality[0], p.jpeg_quality[1] + 1))
    return DrawnDegradation(int(index), sigma, length, angle, int(p.scale), noise, q)


def degrade_image(img: np.ndarray, d: DrawnDegradation, seed: int) -> np.ndarray:
    """Apply one drawn degradation to a [C,H,W] image."""
    x = np.asarray(img, dtype=np.float64)
    if d.sigma > 0:
        x = _blur(x, make_psf("gaussian", sigma=d.sigma))
    if d.motion_length > 0:
        x = _blur(x, make_psf("motion", length=d.motion_length, angle=d.motion_angle))
    x = box_downsample(x, d.scale)
    if d.noise_sigma > 0:
        rng = np.random.default_rng([int(seed), int(d.index), 1])
        x = x + rng.standard_normal(x.shape) * d.noise_sigma
    if d.jpeg_quality is not None:
        x = jpeg_surrogate(x, d.jpeg_quality)
    return np.clip(x, -1.0, 1.0).astype(np.asarray(img).dtype)


def degrade(x: np.ndarray, p: DegradationParams, indices: Optional[Sequence[int]] = None,
            workers: int = 1, return_params: bool = False):
    """Degrade a batch [N,C,H,W]; output is smaller by ``p.scale``.

    ``indices`` are the dataset sample indices that seed each image's draw
    (default ``0..N-1``).
    """
    x = np.asarray(x)
    if x.ndim != 4:
        raise GeometryError(f"degrade expects [N,C,H,W], got shape {x.shape}")
    if x.shape[2] % p.scale or x.shape[3] % p.scale:
        raise GeometryError(f"spatial dims {x.shape[2:]} not divisible by scale {p.scale}")
    if indices is None:
        indices = range(x.shape[0])
    draws = [draw(p, i) for i in indices]
    if len(draws) != x.shape[0]:
        raise ValueError("one index per image is required")

    def one(k: int) -> np.ndarray:
        return degrade_image(x[k], draws[k], p.seed)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs: List[np.ndarray] = list(pool.map(one, range(len(draws))))
    else:
        outs = [one(k) for k in range(len(draws))]
    out = np.stack(outs)
    if return_params:
        return out, draws
    return out
