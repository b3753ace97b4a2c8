"""No-reference quality: NSS features of MSCN coefficients, fitted to a
pristine corpus and compared with a Mahalanobis-type distance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy import ndimage
from scipy.special import gamma as G

from ..errors import DataError, FitError, GeometryError

MIN_CORPUS = 50
PATCH_SIZE = 32
SHARPNESS_THRESHOLD = 0.75
MSCN_SIGMA = 7.0 / 6.0
N_FEATURES = 36
_SHIFTS = ((0, 1), (1, 0), (1, 1), (1, -1))

_ALPHAS = np.arange(0.2, 10.0, 0.001)
# GGD: E[x^2] / E[|x|]^2 as a function of shape; decreasing in alpha
_GGD_RATIO = G(1 / _ALPHAS) * G(3 / _ALPHAS) / G(2 / _ALPHAS) ** 2
# AGGD: E[|x|]^2 / E[x^2]; increasing in alpha
_AGGD_RATIO = G(2 / _ALPHAS) ** 2 / (G(1 / _ALPHAS) * G(3 / _ALPHAS))


@dataclass
class NiqeModel:
    mean: np.ndarray
    cov: np.ndarray
    patch_size: int = PATCH_SIZE
    threshold: float = SHARPNESS_THRESHOLD
    n_patches: int = 0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if self.mean.shape != (N_FEATURES,) or self.cov.shape != (N_FEATURES, N_FEATURES):
            raise FitError(f"NIQE model must be {N_FEATURES}-dimensional")

    def save(self, path) -> None:
        np.savez(path, mean=self.mean, cov=self.cov, patch_size=self.patch_size,
                 threshold=self.threshold, n_patches=self.n_patches)

    @classmethod
    def load(cls, path) -> "NiqeModel":
        try:
            with np.load(path) as z:
                return cls(z["mean"], z["cov"], int(z["patch_size"]), float(z["threshold"]), int(z["n_patches"]))
        except (OSError, KeyError, ValueError) as exc:
            raise DataError(f"cannot read NIQE model {path}: {exc}")


def gray(img: np.ndarray) -> np.ndarray:
    """[3,H,W] in [-1,1] -> BT.601 luminance on 0..255."""
    x = (np.asarray(img, dtype=np.float64) + 1.0) * 127.5
    return 0.299 * x[0] + 0.587 * x[1] + 0.114 * x[2]


def mscn(y: np.ndarray):
    """Mean-subtracted contrast-normalized coefficients and the local sigma map."""
    mu = ndimage.gaussian_filter(y, MSCN_SIGMA, mode="nearest", truncate=3.0)
    var = ndimage.gaussian_filter(y * y, MSCN_SIGMA, mode="nearest", truncate=3.0) - mu * mu
    sigma = np.sqrt(np.abs(var))
    return (y - mu) / (sigma + 1.0), sigma


def _ggd(x: np.ndarray):
    """x: [P,n] -> (alpha, sigma^2) per row."""
    s2 = (x * x).mean(axis=1)
    e = np.abs(x).mean(axis=1)
    rho = s2 / np.maximum(e * e, 1e-12)
    idx = np.abs(rho[:, None] - _GGD_RATIO[None, :]).argmin(axis=1)
    return _ALPHAS[idx], s2


def _aggd(x: np.ndarray):
    """x: [P,n] -> (alpha, eta, sigma_l^2, sigma_r^2) per row."""
    neg = x < 0
    pos = x > 0
    ln = np.maximum(neg.sum(axis=1), 1)
    rn = np.maximum(pos.sum(axis=1), 1)
    sl = np.sqrt((np.where(neg, x * x, 0)).sum(axis=1) / ln)
    sr = np.sqrt((np.where(pos, x * x, 0)).sum(axis=1) / rn)
    gh = sl / np.maximum(sr, 1e-12)
    rhat = np.abs(x).mean(axis=1) ** 2 / np.maximum((x * x).mean(axis=1), 1e-12)
    rnorm = rhat * (gh ** 3 + 1) * (gh + 1) / (gh ** 2 + 1) ** 2
    idx = np.abs(rnorm[:, None] - _AGGD_RATIO[None, :]).argmin(axis=1)
    a = _ALPHAS[idx]
    bl = sl * np.sqrt(G(1 / a) / G(3 / a))
    br = sr * np.sqrt(G(1 / a) / G(3 / a))
    eta = (br - bl) * G(2 / a) / G(1 / a)
    return a, eta, sl * sl, sr * sr


def _patches(a: np.ndarray, p: int) -> np.ndarray:
    """Non-overlapping p x p patches of a 2-D map -> [P, p, p] (row-major)."""
    h, w = (a.shape[0] // p) * p, (a.shape[1] // p) * p
    return a[:h, :w].reshape(h // p, p, w // p, p).transpose(0, 2, 1, 3).reshape(-1, p, p)


def _scale_features(y: np.ndarray, p: int):
    m, sigma = mscn(y)
    pm = _patches(m, p)
    flat = pm.reshape(len(pm), -1)
    feats = list(_ggd(flat))
    for dy, dx in _SHIFTS:
        if dx >= 0:
            prod = pm[:, : p - dy, : p - dx] * pm[:, dy:, dx:]
        else:
            prod = pm[:, : p - dy, -dx:] * pm[:, dy:, : p + dx]
        feats.extend(_aggd(prod.reshape(len(pm), -1)))
    sharp = _patches(sigma, p).reshape(len(pm), -1).mean(axis=1)
    return np.stack(feats, axis=1), sharp


def patch_features(img: np.ndarray, patch_size: int = PATCH_SIZE):
    """[P,36] NSS features over non-overlapping patches, plus per-patch sharpness."""
    y = gray(img)
    if min(y.shape) < 2 * patch_size:
        raise GeometryError(f"NIQE needs images of at least {2 * patch_size} pixels per side, got {y.shape}")
    y = y[: (y.shape[0] // (2 * patch_size)) * 2 * patch_size, : (y.shape[1] // (2 * patch_size)) * 2 * patch_size]
    f1, sharp = _scale_features(y, patch_size)
    half = y.reshape(y.shape[0] // 2, 2, y.shape[1] // 2, 2).mean(axis=(1, 3))
    f2, _ = _scale_features(half, patch_size // 2)
    return np.concatenate([f1, f2], axis=1), sharp


def niqe_fit(corpus: Iterable[np.ndarray], patch_size: int = PATCH_SIZE,
             threshold: float = SHARPNESS_THRESHOLD) -> NiqeModel:
    """Fit the pristine Gaussian on the sharpest patches of each corpus image."""
    images = list(corpus)
    if len(images) < MIN_CORPUS:
        raise FitError(f"NIQE fit needs at least {MIN_CORPUS} images, got {len(images)}")
    rows = []
    for img in images:
        f, sharp = patch_features(img, patch_size)
        keep = sharp > threshold * sharp.max() if sharp.max() > 0 else np.zeros(len(sharp), bool)
        rows.append(f[keep])
    feats = np.concatenate(rows)
    if len(feats) <= N_FEATURES:
        raise FitError(f"only {len(feats)} pristine patches survived selection; need more than {N_FEATURES}")
    cov = np.cov(feats, rowvar=False)
    return NiqeModel(feats.mean(axis=0), (cov + cov.T) / 2, patch_size, threshold, len(feats))


def niqe_distance(mu1, s1, mu2, s2) -> float:
    d = np.asarray(mu1) - np.asarray(mu2)
    return float(np.sqrt(max(d @ np.linalg.pinv((np.asarray(s1) + np.asarray(s2)) / 2) @ d, 0.0)))


def niqe_score(img: np.ndarray, model: NiqeModel) -> float:
    f, _ = patch_features(img, model.patch_size)
    cov = np.cov(f, rowvar=False) if len(f) > 1 else np.zeros((N_FEATURES, N_FEATURES))
    return niqe_distance(model.mean, model.cov, f.mean(axis=0), cov)
