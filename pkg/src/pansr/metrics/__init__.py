"""Image quality metrics: PSNR, SSIM, NIQE, FID and SWD."""

from .fid import (FeatureSet, LaplacianEmbedder, default_embedder, fid, frechet_distance,
                  load_features, save_features)
from .fidelity import PSNR_CAP, cap_psnr, psnr, quantize, ssim
from .niqe import NiqeModel, niqe_distance, niqe_fit, niqe_score, patch_features
from .report import MetricReport, MetricRow, read_csv
from .swd import sliced_wasserstein, swd

__all__ = [
    "FeatureSet", "LaplacianEmbedder", "default_embedder", "fid", "frechet_distance",
    "load_features", "save_features", "PSNR_CAP", "cap_psnr", "psnr", "quantize", "ssim",
    "NiqeModel", "niqe_distance", "niqe_fit", "niqe_score", "patch_features",
    "MetricReport", "MetricRow", "read_csv", "sliced_wasserstein", "swd",
]
