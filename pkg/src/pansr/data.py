"""Image sources: PNG folders, a procedural synthetic dataset, and PNG I/O.

Images are float arrays [3,H,W] in [-1, 1]; batches are [N,3,H,W].
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image

from .errors import DataError

__all__ = [
    "to_uint8", "from_uint8", "write_png", "read_png",
    "FolderSource", "load_folder", "SynthDatasetSpec", "SynthSource", "synth_dataset",
    "box_resize",
]


def to_uint8(img: np.ndarray) -> np.ndarray:
    """[3,H,W] in [-1,1] -> [H,W,3] uint8."""
    x = np.clip((np.asarray(img, dtype=np.float64) + 1.0) * 127.5, 0, 255)
    return np.rint(x).astype(np.uint8).transpose(1, 2, 0)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    """[H,W,3] uint8 -> [3,H,W] float32 in [-1,1]."""
    return (np.asarray(arr, dtype=np.float32).transpose(2, 0, 1) / 127.5 - 1.0).astype(np.float32)


def write_png(path, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")))


def box_resize(img: np.ndarray, size: int) -> np.ndarray:
    """Area-average a square [C,S,S] image down to [C,size,size].

    Integer factors use exact block means; other ratios fall back to
    Pillow's box filter per channel.
    """
    c, h, w = img.shape
    if h == size and w == size:
        return img.astype(np.float32)
    if h % size == 0 and w % size == 0:
        f = h // size
        return img.reshape(c, size, f, size, w // size).mean(axis=(2, 4)).astype(np.float32)
    out = np.empty((c, size, size), dtype=np.float32)
    for k in range(c):
        ch = Image.fromarray(img[k].astype(np.float32), mode="F")
        out[k] = np.asarray(ch.resize((size, size), Image.BOX))
    return out


class FolderSource:
    """PNG images from a folder, center-cropped and box-resized, sorted by name."""

    def __init__(self, path, resolution: int, skip_bad: bool = False):
        self.path = str(path)
        self.resolution = int(resolution)
        if not os.path.isdir(self.path):
            raise DataError(f"dataset folder {self.path} does not exist")
        names = sorted(f for f in os.listdir(self.path) if f.lower().endswith(".png"))
        good: List[str] = []
        problems: List[str] = []
        for name in names:
            try:
                with Image.open(os.path.join(self.path, name)) as im:
                    w, h = im.size
                if min(w, h) < self.resolution:
                    problems.append(f"{name}: {w}x{h} is smaller than {self.resolution}")
                else:
                    good.append(name)
            except OSError as exc:
                problems.append(f"{name}: unreadable ({exc})")
        if problems and not skip_bad:
            raise DataError("bad images in dataset:\n  " + "\n  ".join(problems))
        if not good:
            raise DataError(f"dataset folder {self.path} contains no usable PNG images")
        self.files = good
        self.skipped = problems
        self.id = f"folder:{os.path.abspath(self.path)}@{self.resolution}"

    def __len__(self):
        return len(self.files)

    def __getitem__(self, i: int) -> np.ndarray:
        with Image.open(os.path.join(self.path, self.files[i])) as im:
            arr = np.asarray(im.convert("RGB"))
        h, w = arr.shape[:2]
        s = min(h, w)
        top, left = (h - s) // 2, (w - s) // 2
        img = from_uint8(arr[top:top + s, left:left + s])
        return box_resize(img, self.resolution)

    def batch(self, indices: Sequence[int]) -> np.ndarray:
        return np.stack([self[int(i)] for i in indices])


def load_folder(path, resolution: int, skip_bad: bool = False) -> FolderSource:
    return FolderSource(path, resolution, skip_bad)


@dataclass(frozen=True)
class SynthDatasetSpec:
    n_images: int = 512
    resolution: int = 64
    seed: int = 0
    supersample: int = 4


class SynthSource:
    """Procedural, face-like images: gradient backdrop, a large textured ellipse
    with smaller feature ellipses, and fine stripes.

    Image ``i`` depends only on ``(spec, i)``.
    """

    def __init__(self, spec: SynthDatasetSpec):
        self.spec = spec
        self.resolution = spec.resolution
        self.id = f"synth:n={spec.n_images},res={spec.resolution},seed={spec.seed},ss={spec.supersample}"
        self._cache: dict = {}

    def __len__(self):
        return self.spec.n_images

    def __getitem__(self, i: int) -> np.ndarray:
        i = int(i)
        if not 0 <= i < self.spec.n_images:
            raise IndexError(i)
        img = self._cache.get(i)
        if img is None:
            img = render_synth(self.spec, i)
            self._cache[i] = img
        return img

    def batch(self, indices: Sequence[int]) -> np.ndarray:
        return np.stack([self[int(i)] for i in indices])


def synth_dataset(spec: Optional[SynthDatasetSpec] = None, **kwargs) -> SynthSource:
    return SynthSource(spec or SynthDatasetSpec(**kwargs))


def _ellipse_mask(yy, xx, cy, cx, ry, rx, theta):
    c, s = np.cos(theta), np.sin(theta)
    dy, dx = yy - cy, xx - cx
    u = (dx * c + dy * s) / rx
    v = (-dx * s + dy * c) / ry
    return (u * u + v * v) <= 1.0


def render_synth(spec: SynthDatasetSpec, index: int) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, index])
    n = spec.resolution * spec.supersample
    coords = (np.arange(n) + 0.5) / n
    yy, xx = np.meshgrid(coords, coords, indexing="ij")

    # backdrop: linear gradient between two colours
    c0, c1 = rng.uniform(-0.8, 0.8, 3), rng.uniform(-0.8, 0.8, 3)
    ang = rng.uniform(0, 2 * np.pi)
    t = (np.cos(ang) * (xx - 0.5) + np.sin(ang) * (yy - 0.5)) / np.sqrt(2) + 0.5
    img = c0[:, None, None] * (1 - t) + c1[:, None, None] * t

    # head: large ellipse with a stripe texture
    cy, cx = rng.uniform(0.42, 0.58, 2)
    ry, rx = rng.uniform(0.26, 0.36), rng.uniform(0.2, 0.3)
    theta = rng.uniform(-0.3, 0.3)
    head = _ellipse_mask(yy, xx, cy, cx, ry, rx, theta)
    skin = rng.uniform(-0.4, 0.7, 3)
    freq = rng.uniform(14, 28)
    phase = rng.uniform(0, 2 * np.pi)
    sdir = rng.uniform(0, np.pi)
    stripes = 0.18 * np.sin(2 * np.pi * freq * (np.cos(sdir) * xx + np.sin(sdir) * yy) + phase)
    img = np.where(head, skin[:, None, None] + stripes, img)

    # eyes and mouth
    eye_dx = rx * rng.uniform(0.35, 0.5)
    eye_y = cy - ry * rng.uniform(0.15, 0.3)
    eye_r = rng.uniform(0.035, 0.06)
    eye_col = rng.uniform(-1.0, -0.2, 3)
    for sgn in (-1, 1):
        m = _ellipse_mask(yy, xx, eye_y, cx + sgn * eye_dx, eye_r * 0.7, eye_r, theta)
        img = np.where(m, eye_col[:, None, None], img)
    mouth = _ellipse_mask(yy, xx, cy + ry * rng.uniform(0.4, 0.55), cx, 0.025, rx * rng.uniform(0.3, 0.5), theta)
    img = np.where(mouth, rng.uniform(-0.6, 0.6, 3)[:, None, None], img)

    # a few background blobs
    for _ in range(int(rng.integers(1, 4))):
        m = _ellipse_mask(yy, xx, *rng.uniform(0.05, 0.95, 2), *rng.uniform(0.04, 0.12, 2), rng.uniform(0, np.pi))
        img = np.where(m & ~head, rng.uniform(-0.9, 0.9, 3)[:, None, None], img)

    s = spec.supersample
    r = spec.resolution
    img = img.reshape(3, r, s, r, s).mean(axis=(2, 4))
    return np.clip(img, -1.0, 1.0).astype(np.float32)
