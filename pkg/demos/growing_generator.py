"""A 16 -> 64 generator grown one resolution at a time.

Skips carry the 8 and 16 pixel encoder features; noise is injected only
where the output exceeds the input (32, 64). During a fade the new block's
output is blended with the upsampled old one, so alpha = 0 reproduces the
previous network exactly.
"""

import numpy as np

from pansr.network import PhaseState, build_generator, generator_forward, grow

g = build_generator(16, 64, ch_base=8, ch_max=32, seed=0, start_res=32)
print("skip sites:", g.skip_sites, " noise sites:", g.noise_sites)

x = np.random.default_rng(0).uniform(-1, 1, (1, 3, 16, 16)).astype(np.float32)
old = generator_forward(g, x, PhaseState(32, 1.0, 0, "stabilize")).data
n_before = sum(p.data.size for p in g.params.values())
grow(g, 64)
n_after = sum(p.data.size for p in g.params.values())
print(f"parameters {n_before} -> {n_after}")

for alpha in (0.0, 0.5, 1.0):
    y = generator_forward(g, x, PhaseState(64, alpha, 0, "fade")).data
    dev = np.abs(y - old.repeat(2, 2).repeat(2, 3)).max()
    print(f"alpha {alpha:.1f}: max distance from upsampled 32px output {dev:.4f}")
