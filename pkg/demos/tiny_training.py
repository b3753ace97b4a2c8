"""A short progressive run, checkpointed and resumed.

Uses a few hundred iterations per phase rather than the 2000 of the desk
schedule, so it finishes in a few minutes; expect modest gains only.
"""

import os
import tempfile

import numpy as np

from pansr.data import SynthDatasetSpec, synth_dataset
from pansr.inference import score_generator
from pansr.network import build_generator
from pansr.trainer import Trainer, TrainConfig, build_pyramid, desk_schedule

data = synth_dataset(n_images=128, resolution=32)
held = synth_dataset(SynthDatasetSpec(n_images=64, resolution=32, seed=1)).batch(range(64))
lr, _ = build_pyramid(held, 16).pair(32)

cfg = TrainConfig(output_res=32, schedule=desk_schedule(32, iters=200), log_interval=100)
tr = Trainer(cfg, data)
# the trainer's generator starts at 8px; one built at full size has the same weights
init = build_generator(16, 32, cfg.ch_base, cfg.ch_max, seed=cfg.seed)
print("start ", score_generator(init, lr, held))

half = tr.total_iters // 2
tr.run(until=half)
ck = os.path.join(tempfile.mkdtemp(), "half.pan")
tr.save(ck)
tr.run()

resumed = Trainer.restore(ck, data)
resumed.run()
same = all(np.array_equal(tr.gen.params[k].data, resumed.gen.params[k].data) for k in tr.gen.params)
print("resumed run identical:", same)
print("final ", score_generator(tr.gen, lr, held))
