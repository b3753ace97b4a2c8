import csv

import numpy as np
import pytest

from pansr import checkpoint
from pansr.data import synth_dataset
from pansr.degrade import DegradationParams
from pansr.errors import ChecksumError, ConfigError, DivergenceError, GeometryError, NonFiniteError, VersionError
from pansr.losses import LossConfig
from pansr.network import PhaseState, build_discriminator, build_generator, generator_forward
from pansr.trainer import (PAPER_BATCH, PAPER_LR, Ablations, TrainConfig, Trainer, TrainSchedule, alpha_at,
                           build_pyramid, desk_schedule, paper_schedule, train, train_config_from_meta,
                           train_config_meta)


@pytest.fixture(scope="module")
def tiny_data():
    return synth_dataset(n_images=16, resolution=32)


def tiny_cfg(**kw):
    base = dict(input_res=16, output_res=32, ch_base=4, ch_max=8,
                schedule=desk_schedule(32, iters=3, max_batch=4), log_interval=1)
    base.update(kw)
    return TrainConfig(**base)


def params_bytes(tr):
    return {k: v.data.tobytes() for net in (tr.gen, tr.disc) for k, v in net.params.items()}


def test_alpha_at_examples():
    assert alpha_at(0, 600) == 0
    assert alpha_at(300, 600) == 0.5
    assert alpha_at(900, 600) == 1
    with pytest.raises(ConfigError):
        alpha_at(0, 0)


def test_paper_schedule_literals():
    s = paper_schedule()
    assert s.resolutions == [8, 16, 32, 64, 128, 256, 512, 1024]
    assert s.lr_table[128] == 0.0015 and s.batch_table[16] == 32
    assert s.iters_stabilize == s.iters_fade == 600000
    assert PAPER_LR == {8: 0.001, 16: 0.001, 32: 0.001, 64: 0.001, 128: 0.0015, 256: 0.002, 512: 0.003, 1024: 0.003}
    assert PAPER_BATCH == {8: 64, 16: 32, 32: 16, 64: 8, 128: 4, 256: 4, 512: 4, 1024: 4}


def test_desk_schedule_phases():
    s = desk_schedule(64, iters=2000)
    assert s.resolutions == [8, 16, 32, 64]
    assert s.batch_table == {8: 16, 16: 16, 32: 16, 64: 8}
    ph = s.phases()
    assert ph[0] == (8, "stabilize", 2000)
    assert [k for _, k, _ in ph[1:]] == ["fade", "stabilize"] * 3
    assert s.phases(progressive=False) == [(64, "stabilize", 14000)]


def test_schedule_validation():
    with pytest.raises(ConfigError):
        TrainSchedule([8, 32], 1, 1, {8: 1, 32: 1}, {8: 1, 32: 1})
    with pytest.raises(ConfigError):
        TrainSchedule([8, 16], 1, 1, {8: 1}, {8: 1, 16: 1})
    with pytest.raises(ConfigError):
        TrainSchedule([8, 16], 0, 1, {8: 1, 16: 1}, {8: 1, 16: 1})


def test_pyramid_constant_image():
    hr = np.full((2, 3, 64, 64), 0.25, np.float32)
    pyr = build_pyramid(hr, 16)
    for r, t in pyr.targets.items():
        assert np.all(t == 0.25), r
    for r, x in pyr.inputs.items():
        assert np.all(x == 0.25), r


def test_pyramid_consistency_and_identity_degrade():
    hr = synth_dataset(n_images=3, resolution=64).batch(range(3))
    pyr = build_pyramid(hr, 16)
    for r in (8, 16, 32):
        big = pyr.targets[2 * r]
        pooled = big.reshape(3, 3, r, 2, r, 2).mean(axis=(3, 5))
        assert np.abs(pooled - pyr.targets[r]).max() < 1e-6
    ident = build_pyramid(hr, 16, DegradationParams.identity(), seed=3)
    assert np.abs(ident.inputs[16] - pyr.targets[16]).max() < 1e-6
    lr, real = pyr.pair(64)
    assert lr.shape[2] == 16 and real.shape[2] == 64
    lr8, real8 = pyr.pair(8)
    assert lr8.shape[2] == 8 and real8.shape[2] == 8
    with pytest.raises(GeometryError):
        build_pyramid(np.zeros((1, 3, 48, 48)), 16)


def test_pyramid_with_degradation_scale():
    hr = synth_dataset(n_images=2, resolution=64).batch(range(2))
    p = DegradationParams(scale=2, seed=0)
    pyr = build_pyramid(hr, 16, p, seed=5)
    assert pyr.inputs[16].shape == (2, 3, 16, 16)
    assert np.all(np.abs(pyr.inputs[16]) <= 1)


def test_phase_cursor_monotone(tiny_data):
    tr = Trainer(tiny_cfg(), tiny_data)
    last_r, last_a = 0, -1
    for t in range(tr.total_iters):
        ph = tr.phase_at(t)
        assert ph.resolution >= last_r
        if ph.resolution == last_r and ph.phase_kind == "fade":
            assert ph.alpha >= last_a
        if ph.phase_kind == "stabilize":
            assert ph.alpha == 1.0
        last_r, last_a = ph.resolution, ph.alpha


def test_run_logs_and_finite(tiny_data, tmp_path):
    tr = Trainer(tiny_cfg(), tiny_data)
    log = tmp_path / "log.csv"
    hist = tr.run(log_path=str(log))
    assert tr.iteration == tr.total_iters == 15
    assert tr.gen.top_res == 32 and tr.disc.top_res == 32
    for row in hist:
        assert np.isfinite(row["L_d"]) and np.isfinite(row["L_g"]) and row["R1"] >= 0
    with open(log) as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0].keys()) == ["iter", "L_d", "L_g", "R1", "alpha", "resolution"]
    assert len(rows) == 15 and rows[-1]["resolution"] == "32"


def test_same_seed_bit_identical(tiny_data, tmp_path):
    a, b = Trainer(tiny_cfg(), tiny_data), Trainer(tiny_cfg(), tiny_data)
    a.run()
    b.run()
    a.save(tmp_path / "a.pan")
    b.save(tmp_path / "b.pan")
    assert (tmp_path / "a.pan").read_bytes() == (tmp_path / "b.pan").read_bytes()
    c = Trainer(tiny_cfg(seed=1), tiny_data)
    c.run()
    assert params_bytes(c) != params_bytes(a)


@pytest.mark.parametrize("k", [2, 4, 7])
def test_resume_bit_exact(tiny_data, tmp_path, k):
    # k=2 stops inside the first phase, 4 mid-fade, 7 just after a growth boundary
    full = Trainer(tiny_cfg(), tiny_data)
    full.run(until=k + 6)
    part = Trainer(tiny_cfg(), tiny_data)
    part.run(until=k)
    path = tmp_path / "ck.pan"
    part.save(path)
    resumed = Trainer.restore(str(path), tiny_data)
    resumed.run(until=k + 6)
    assert params_bytes(resumed) == params_bytes(full)
    for name in full.opt_g.names:
        assert full.opt_g.v[name].tobytes() == resumed.opt_g.v[name].tobytes()


def test_fresh_checkpoint_restores_init(tiny_data, tmp_path):
    tr = Trainer(tiny_cfg(), tiny_data)
    tr.save(tmp_path / "init.pan")
    back = Trainer.restore(str(tmp_path / "init.pan"), tiny_data)
    assert params_bytes(back) == params_bytes(tr) and back.iteration == 0


def test_corrupt_checkpoint(tiny_data, tmp_path):
    tr = Trainer(tiny_cfg(), tiny_data)
    path = tmp_path / "c.pan"
    tr.save(path)
    blob = bytearray(path.read_bytes())
    blob[100] ^= 0x01
    path.write_bytes(bytes(blob))
    with pytest.raises(ChecksumError):
        Trainer.restore(str(path), tiny_data)


def test_version_mismatch_names_both():
    blob = checkpoint.dumps({"a": np.zeros(2)}, {"k": 1})
    body = blob[:-32].replace(b"version=1.0", b"version=9.0")
    import hashlib
    with pytest.raises(VersionError, match=r"9\.0.*1\.0|1\.0.*9\.0"):
        checkpoint.loads(body + hashlib.sha256(body).digest())


def test_growth_boundary_fade_identity(tiny_data):
    tr = Trainer(tiny_cfg(), tiny_data)
    tr.run(until=3)  # end of the 8x8 phase
    lr8, _ = tr.batch(0, 8)
    before = generator_forward(tr.gen, lr8, PhaseState(8, 1.0, 0, "stabilize")).data
    tr._ensure_grown(16)
    lr16, _ = tr.batch(0, 16)
    at0 = generator_forward(tr.gen, lr16, tr.phase_at(3)).data
    assert tr.phase_at(3).alpha == 0.0
    assert np.abs(at0 - before.repeat(2, 2).repeat(2, 3)).max() < 1e-6


def test_non_progressive_and_noise_ablation(tiny_data):
    tr = Trainer(tiny_cfg(ablations=Ablations(progressive=False, noise=False)), tiny_data)
    assert tr.gen.top_res == 32
    assert tr.phases == [(32, "stabilize", 15)]
    assert tr._noise(2, 0) == "zero"
    tr.run(until=2)
    assert tr.iteration == 2


def test_pixel_modes_train_generator_only(tiny_data):
    tr = Trainer(tiny_cfg(loss=LossConfig(mode="l1")), tiny_data)
    d0 = {k: v.data.copy() for k, v in tr.disc.params.items()}
    rows = tr.run(until=4)
    assert all(np.isnan(r["L_d"]) for r in rows)
    for k, v in tr.disc.params.items():
        if k in d0:
            assert np.array_equal(v.data, d0[k])


def test_divergence_reports_last_checkpoint(tiny_data, tmp_path, monkeypatch):
    tr = Trainer(tiny_cfg(checkpoint_interval=2, checkpoint_dir=str(tmp_path)), tiny_data)
    tr.run(until=4)
    assert tr.last_checkpoint.endswith("ckpt_00000004.pan")

    def boom():
        raise NonFiniteError("softplus produced non-finite values")

    monkeypatch.setattr(tr, "step", boom)
    with pytest.raises(DivergenceError) as info:
        tr.run()
    assert info.value.last_checkpoint == tr.last_checkpoint
    assert "ckpt_00000004" in str(info.value)


def test_config_meta_roundtrip():
    cfg = tiny_cfg(loss=LossConfig(gamma=2.5, mode="l2"), seed=4,
                   ablations=Ablations(progressive=False, noise=False, skip_levels=1),
                   degrade=DegradationParams(sigma_range=(0.5, 1.0), jpeg_quality=None))
    flat = {k: str(v) for k, v in train_config_meta(cfg).items()}
    back = train_config_from_meta(flat)
    assert train_config_meta(back) == train_config_meta(cfg)


def test_functional_train(tiny_data):
    g = build_generator(16, 32, 4, 8, start_res=8)
    d = build_discriminator(32, 4, 8, seed=1, start_res=8)
    tr = train(g, d, tiny_data, desk_schedule(32, iters=1, max_batch=2), LossConfig(), Ablations())
    assert tr.iteration == 5 and g.top_res == 32


def test_dataset_resolution_mismatch(tiny_data):
    with pytest.raises(ConfigError):
        Trainer(tiny_cfg(output_res=64, schedule=desk_schedule(64, 1)), tiny_data)
