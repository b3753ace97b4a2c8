"""Frechet distance between feature Gaussians, the default embedder and
feature-matrix files."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Union

import numpy as np

from ..errors import DataError, GeometryError, NumericalError, ProvenanceError
from .pyramid import laplacian_pyramid

EMBED_DIM = 64
EMBED_SEED = 20190531
EMBED_GRID = 4
EMBED_LEVELS = 3
NEG_EIG_TOL = 1e-6


@dataclass
class FeatureSet:
    """Feature matrix [N,D] tagged with the identity of the embedder that made it."""

    values: np.ndarray
    embedder_id: str

    def __len__(self):
        return len(self.values)


Features = Union[np.ndarray, FeatureSet]


def _unwrap(a: Features, b: Features):
    ida = a.embedder_id if isinstance(a, FeatureSet) else None
    idb = b.embedder_id if isinstance(b, FeatureSet) else None
    if ida is not None and idb is not None and ida != idb:
        raise ProvenanceError(f"features come from different embedders: {ida!r} vs {idb!r}")
    va = np.asarray(a.values if isinstance(a, FeatureSet) else a, dtype=np.float64)
    vb = np.asarray(b.values if isinstance(b, FeatureSet) else b, dtype=np.float64)
    if va.ndim != 2 or vb.ndim != 2 or va.shape[1] != vb.shape[1]:
        raise ProvenanceError(f"feature shapes {va.shape} and {vb.shape} are incompatible")
    return va, vb


def _psd_sqrt(s: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((s + s.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def trace_sqrt_product(s1: np.ndarray, s2: np.ndarray) -> float:
    """Tr((S1 S2)^(1/2)) via the symmetric form S1^(1/2) S2 S1^(1/2)."""
    r = _psd_sqrt(s1)
    m = r @ s2 @ r
    w = np.linalg.eigvalsh((m + m.T) / 2)
    floor = -NEG_EIG_TOL * max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.min(initial=0.0) < floor:
        raise NumericalError(f"covariance product has eigenvalue {w.min():.3g} below {floor:.3g}")
    return float(np.sqrt(np.clip(w, 0, None)).sum())


def frechet_distance(mu1, s1, mu2, s2) -> float:
    d = float(((mu1 - mu2) ** 2).sum()) + float(np.trace(s1) + np.trace(s2)) - 2 * trace_sqrt_product(s1, s2)
    return max(d, 0.0)


def fid(real: Features, fake: Features) -> float:
    a, b = _unwrap(real, fake)
    return frechet_distance(a.mean(0), np.cov(a, rowvar=False), b.mean(0), np.cov(b, rowvar=False))


# default embedder -----------------------------------------------------------

def _grid_pool(x: np.ndarray, g: int) -> np.ndarray:
    n, c, h, w = x.shape
    return x.reshape(n, c, g, h // g, g, w // g).mean(axis=(3, 5)).reshape(n, -1)


def _raw_stats(images: np.ndarray) -> np.ndarray:
    bands = laplacian_pyramid(images, EMBED_LEVELS + 1)
    parts = []
    for band in bands[:-1]:
        parts.append(_grid_pool(np.log1p(64 * band * band), EMBED_GRID))
        parts.append(_grid_pool(band, EMBED_GRID) * 8)
    parts.append(_grid_pool(bands[-1], EMBED_GRID))
    return np.concatenate(parts, axis=1)


class LaplacianEmbedder:
    """Band-energy and low-pass statistics on a 4x4 grid per Laplacian level,
    projected to 64 dims by a fixed Gaussian matrix."""

    dim = EMBED_DIM

    def __init__(self, seed: int = EMBED_SEED):
        self.seed = seed
        self.id = f"laplacian-stats-v1:dim={EMBED_DIM}:seed={seed}"
        self._proj = {}

    def projection(self, n_raw: int) -> np.ndarray:
        p = self._proj.get(n_raw)
        if p is None:
            p = np.random.default_rng(self.seed).standard_normal((n_raw, EMBED_DIM)) / np.sqrt(n_raw)
            self._proj[n_raw] = p
        return p

    def __call__(self, images: np.ndarray) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        side = EMBED_GRID * 2 ** EMBED_LEVELS
        if x.shape[2] % side or x.shape[3] % side:
            raise GeometryError(f"embedder needs sides divisible by {side}, got {x.shape[2:]}")
        raw = _raw_stats(x)
        return raw @ self.projection(raw.shape[1])

    def features(self, images: np.ndarray) -> FeatureSet:
        return FeatureSet(self(images), self.id)


_DEFAULT = LaplacianEmbedder()


def default_embedder(images: np.ndarray) -> np.ndarray:
    return _DEFAULT(images)


default_embedder.id = _DEFAULT.id
default_embedder.dim = EMBED_DIM
default_embedder.features = _DEFAULT.features


# feature files --------------------------------------------------------------

FEATURE_MAGIC = b"PANSR-FEATURES\n"


def save_features(path, fs: FeatureSet) -> None:
    v = np.ascontiguousarray(fs.values, dtype="<f8")
    if "\n" in fs.embedder_id:
        raise DataError("embedder id may not contain newlines")
    header = f"dims={v.shape[1]}\ncount={v.shape[0]}\nembedder_id={fs.embedder_id}\nend\n".encode()
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC + header + v.tobytes())


def load_features(path) -> FeatureSet:
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(FEATURE_MAGIC):
        raise DataError(f"{path}: not a feature file")
    pos = len(FEATURE_MAGIC)
    fields = {}
    while True:
        nl = blob.find(b"\n", pos)
        if nl < 0:
            raise DataError(f"{path}: truncated feature header")
        line = blob[pos:nl].decode()
        pos = nl + 1
        if line == "end":
            break
        k, _, val = line.partition("=")
        fields[k] = val
    try:
        dims, count = int(fields["dims"]), int(fields["count"])
        eid = fields["embedder_id"]
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed feature header ({exc})")
    body = blob[pos:]
    if len(body) != dims * count * 8:
        raise DataError(f"{path}: expected {dims * count * 8} data bytes, found {len(body)}")
    return FeatureSet(np.frombuffer(body, dtype="<f8").reshape(count, dims).copy(), eid)


def embedder_hash(embedder_id: str) -> str:
    return f"{zlib.crc32(embedder_id.encode()):08x}"
