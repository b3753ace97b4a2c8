"""Nearest-neighbour distances concentrate as dimension grows.

For 500 uniform points we take each point's 6 nearest neighbours and measure
how far the 6th is beyond the 1st, relative to the 1st. In one dimension that
gap is huge; by d = 10^4 it has nearly vanished, so "nearest" stops meaning much.
"""

from pansr.dimlab import DimExperimentConfig, run_sweep

rows = run_sweep(DimExperimentConfig(dims=(1, 10, 100, 1000, 10000), repeats=3))
print(f"{'d':>6}  {'mean ratio':>10}  {'std':>8}")
for r in rows:
    print(f"{r.d:>6}  {r.mean_ratio:>10.4f}  {r.std_ratio:>8.4f}")
