"""Distance concentration of uniform random points as the dimension grows.

For every point, take its k nearest neighbours (self excluded); the nearest
gives dist_min, the k-th gives dist_max, and the statistic is
(dist_max - dist_min) / dist_min.
"""

from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigError

DEFAULT_DIMS = (1, 10, 100, 1000, 10000, 100000)


def default_k(n_points: int, log_base: str = "e") -> int:
    """Floor of log(n); the natural log is the default reading."""
    base = {"e": math.e, "10": 10.0, "2": 2.0}.get(str(log_base))
    if base is None:
        raise ConfigError(f"log base must be one of e, 10, 2; got {log_base!r}")
    return int(math.floor(math.log(n_points, base) + 1e-12))


@dataclass
class DimExperimentConfig:
    dims: Sequence[int] = DEFAULT_DIMS
    n_points: int = 500
    k_neighbors: Optional[int] = None
    repeats: int = 5
    seed: int = 0
    log_base: str = "e"

    def __post_init__(self):
        self.dims = [int(d) for d in self.dims]
        if self.k_neighbors is None:
            self.k_neighbors = default_k(self.n_points, self.log_base)
        if any(b <= a for a, b in zip(self.dims, self.dims[1:])):
            raise ConfigError(f"dims must be strictly increasing, got {self.dims}")
        if not 2 <= self.k_neighbors < self.n_points:
            raise ConfigError(f"need 2 <= k < n_points, got k={self.k_neighbors}, n={self.n_points}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")


@dataclass
class RatioStats:
    mean: float
    std: float
    excluded: int
    ratios: np.ndarray = field(repr=False, default=None)


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    """Exact Euclidean distances via per-row differences (no Gram-matrix shortcut,
    so results match a brute-force loop bit for bit)."""
    x = np.asarray(points, dtype=np.float64)
    n = len(x)
    out = np.empty((n, n))
    for i in range(n):
        out[i] = np.sqrt(((x - x[i]) ** 2).sum(axis=1))
    return out


def _fast_distances(x: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    return np.sqrt(np.maximum(d2, 0.0))


def ratios_from_distances(dist: np.ndarray, k: int):
    """Per-point ratio and a mask of points whose dist_min is zero."""
    n = len(dist)
    if not 2 <= k < n:
        raise ConfigError(f"need 2 <= k < n, got k={k}, n={n}")
    d = dist.copy()
    np.fill_diagonal(d, np.inf)
    # stable sort on distance keeps lower index first among ties
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    near = np.take_along_axis(d, order, axis=1)
    dmin, dmax = near[:, 0], near[:, k - 1]
    zero = dmin == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(zero, np.nan, (dmax - dmin) / np.where(zero, 1.0, dmin))
    return r, zero


def distance_ratio(points: np.ndarray, k: int, exact: bool = True) -> RatioStats:
    """Mean and std over points of (dist_max - dist_min) / dist_min."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    dist = pairwise_distances(x) if exact else _fast_distances(x)
    r, zero = ratios_from_distances(dist, k)
    excluded = int(zero.sum())
    if excluded:
        warnings.warn(f"{excluded} point(s) have a duplicate neighbour (dist_min = 0) and were excluded")
    valid = r[~zero]
    if len(valid) == 0:
        return RatioStats(float("nan"), float("nan"), excluded, r)
    return RatioStats(float(valid.mean()), float(valid.std()), excluded, r)


@dataclass
class SweepRow:
    d: int
    mean_ratio: float
    std_ratio: float  # std over points, averaged over repeats
    std_repeats: float  # std of the per-repeat means
    excluded_count: int


def run_sweep(cfg: DimExperimentConfig) -> List[SweepRow]:
    rows = []
    for d in cfg.dims:
        means, stds, excl = [], [], 0
        for rep in range(cfg.repeats):
            rng = np.random.default_rng([int(cfg.seed), int(d), rep])
            pts = rng.random((cfg.n_points, d))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                st = distance_ratio(pts, cfg.k_neighbors, exact=d <= 1000)
            means.append(st.mean)
            stds.append(st.std)
            excl += st.excluded
        rows.append(SweepRow(d, float(np.mean(means)), float(np.mean(stds)), float(np.std(means)), excl))
    return rows


def write_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["d", "mean_ratio", "std_ratio", "std_repeats", "excluded_count"])
        for r in rows:
            w.writerow([r.d, f"{r.mean_ratio:.8g}", f"{r.std_ratio:.8g}", f"{r.std_repeats:.8g}", r.excluded_count])


def plot(rows: Sequence[SweepRow], path) -> None:
    """Mean +- std against log10 dimension. Needs matplotlib."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ConfigError("plotting needs matplotlib (pip install matplotlib)") from exc
    ld = [math.log10(r.d) for r in rows]
    m = np.array([r.mean_ratio for r in rows])
    s = np.array([r.std_ratio for r in rows])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(ld, m, yerr=s, marker="o", capsize=3)
    ax.set_xlabel("log10(dimension)")
    ax.set_ylabel("(dist_max - dist_min) / dist_min")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


if __name__ == "__main__":
    t = time.time()
    for row in run_sweep(DimExperimentConfig()):
        print(row)
    print(f"{time.time() - t:.1f}s")
