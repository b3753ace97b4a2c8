"""Random blur, downsampling, noise and JPEG, reproducible per image index."""

import os
import sys

from pansr.data import synth_dataset, write_png
from pansr.degrade import DegradationParams, degrade

out = sys.argv[1] if len(sys.argv) > 1 else "demo_degrade"
os.makedirs(out, exist_ok=True)

x = synth_dataset(n_images=4, resolution=64).batch(range(4))
p = DegradationParams(sigma_range=(0.5, 2.0), motion_max=4.0, scale=2, noise_max=0.05, jpeg_quality=(40, 90), seed=3)
y, draws = degrade(x, p, workers=2, return_params=True)
for i, (a, b, d) in enumerate(zip(x, y, draws)):
    write_png(os.path.join(out, f"{i}_clean.png"), a)
    write_png(os.path.join(out, f"{i}_degraded.png"), b)
    print(i, d.as_dict())

# same seed, different worker count: same bytes
assert degrade(x, p, workers=1).tobytes() == y.tobytes()
print("wrote", out)
