"""How the five quality measures react to additive noise.

PSNR and SSIM compare each image with its reference; FID and SWD compare
the two sets as distributions; NIQE scores single images against a model
of clean statistics (lower is better).
"""

import numpy as np

from pansr.data import SynthDatasetSpec, synth_dataset
from pansr.metrics import fid, default_embedder, niqe_fit, niqe_score, psnr, ssim, swd

clean = synth_dataset(n_images=64, resolution=64).batch(range(64)).astype(np.float64)
model = niqe_fit(synth_dataset(SynthDatasetSpec(n_images=100, resolution=64, seed=9)).batch(range(100)))
ref = default_embedder(clean)
eps = np.random.default_rng(0).standard_normal(clean.shape)

print(f"{'sigma':>6} {'PSNR':>7} {'SSIM':>6} {'FID':>8} {'SWD@64':>8} {'NIQE':>6}")
for s in (0.0, 0.02, 0.05, 0.1, 0.2):
    noisy = np.clip(clean + s * eps, -1, 1)
    p = np.minimum(psnr(clean, noisy), 99).mean()
    q = ssim(clean, noisy).mean()
    f = fid(ref, default_embedder(noisy))
    w = swd(clean, noisy, levels=[64], n_projections=128)[64]
    n = np.mean([niqe_score(img, model) for img in noisy[:8]])
    print(f"{s:>6.2f} {p:>7.2f} {q:>6.3f} {f:>8.4f} {w:>8.2f} {n:>6.2f}")
