"""Running a trained generator, and the image-set scores used to judge a run."""

from __future__ import annotations

from typing import Dict

import numpy as np

from . import checkpoint
from .autodiff import no_grad
from .errors import ConfigError, DataError
from .network import PhaseState, generator_forward, network_from_meta
from .trainer import _pool


def load_generator(path):
    arrays, meta = checkpoint.load(path)
    prefix, aprefix = ("G.", "G/") if "G.kind" in meta else ("", "")
    if meta.get(f"{prefix}kind") != "generator":
        raise DataError(f"{path} does not contain a generator")
    gen = network_from_meta(meta, prefix)
    gen.load_arrays(arrays, aprefix)
    return gen


def super_resolve(gen, images: np.ndarray, noise: str = "zero", seed: int = 0, downscale: int = 0,
                  indices=None) -> np.ndarray:
    """Run the generator at its top resolution on [N,3,r,r] inputs, one image at a time."""
    images = np.asarray(images, dtype=np.float32)
    if gen.top_res < gen.input_res:
        raise ConfigError(f"generator is grown only to {gen.top_res}px, below its input resolution "
                          f"{gen.input_res}; train past the first phases or build it at full size")
    if images.shape[2] != gen.input_res or images.shape[3] != gen.input_res:
        raise DataError(f"input resolution {images.shape[2]}x{images.shape[3]} does not match the "
                        f"checkpoint input resolution {gen.input_res}x{gen.input_res}")
    if noise not in ("zero", "seeded"):
        raise ConfigError(f"noise must be 'zero' or 'seeded', got {noise!r}")
    phase = PhaseState(gen.top_res, 1.0, 0, "stabilize")
    idx = range(len(images)) if indices is None else indices
    outs = []
    with no_grad():
        for i, img in zip(idx, images):
            mode = "zero" if noise == "zero" else ("random", int(np.random.SeedSequence([seed, i]).generate_state(1)[0]))
            y = generator_forward(gen, img[None], phase, mode).data
            for _ in range(downscale):
                y = _pool(y)
            outs.append(y[0])
    return np.stack(outs)


def score_generator(gen, lr: np.ndarray, hr: np.ndarray, embedder=None) -> Dict[str, float]:
    """Zero-noise SR of ``lr`` scored against ``hr``: FID, pixel MSE and mean PSNR."""
    from .metrics import default_embedder, fid, psnr

    emb = embedder or default_embedder
    sr = super_resolve(gen, lr, "zero")
    hr = np.asarray(hr, dtype=np.float64)
    return {
        "fid": fid(emb(hr), emb(sr)),
        "mse": float(((sr - hr) ** 2).mean()),
        "psnr": float(np.mean(np.minimum(psnr(hr, sr), 99.0))),
    }
