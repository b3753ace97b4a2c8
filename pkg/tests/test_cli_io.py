import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pansr.cli import main
from pansr.config import (file_sha256, format_config, manifest_config, merge, parse_config_text, read_manifest)
from pansr.data import load_folder, read_png, synth_dataset, SynthDatasetSpec, to_uint8, write_png
from pansr.errors import ConfigError, DataError
from pansr.inference import super_resolve
from pansr.metrics.pyramid import laplacian_pyramid
from pansr.network import build_generator, load_network, save_network


def write_folder(path, n, size, seed=0):
    os.makedirs(path, exist_ok=True)
    r = np.random.default_rng(seed)
    for i in range(n):
        write_png(os.path.join(path, f"img{i:02d}.png"), r.uniform(-1, 1, (3, size, size)))


# -- ingestion --------------------------------------------------------------------

def test_load_folder(tmp_path):
    write_folder(tmp_path / "a", 3, 64)
    src = load_folder(tmp_path / "a", 64)
    assert len(src) == 3
    assert all(src[i].shape == (3, 64, 64) for i in range(3))
    again = load_folder(tmp_path / "a", 64)
    assert src.batch(range(3)).tobytes() == again.batch(range(3)).tobytes()


def test_load_folder_ordering_and_resize(tmp_path):
    d = tmp_path / "b"
    os.makedirs(d)
    img = np.random.default_rng(1).uniform(-1, 1, (3, 80, 64))
    write_png(d / "z.png", img)
    write_png(d / "a.png", -img)
    src = load_folder(d, 32)
    assert src.files == ["a.png", "z.png"]
    assert src[0].shape == (3, 32, 32)


def test_load_folder_errors(tmp_path):
    os.makedirs(tmp_path / "empty")
    with pytest.raises(DataError, match="no usable"):
        load_folder(tmp_path / "empty", 64)
    write_folder(tmp_path / "small", 2, 16)
    with pytest.raises(DataError, match="smaller than"):
        load_folder(tmp_path / "small", 64)
    (tmp_path / "mixed").mkdir()
    write_png(tmp_path / "mixed" / "ok.png", np.zeros((3, 64, 64)))
    (tmp_path / "mixed" / "broken.png").write_bytes(b"not a png")
    with pytest.raises(DataError, match="broken.png"):
        load_folder(tmp_path / "mixed", 64)
    src = load_folder(tmp_path / "mixed", 64, skip_bad=True)
    assert src.files == ["ok.png"] and len(src.skipped) == 1


def test_synth_determinism():
    spec = SynthDatasetSpec(n_images=16, resolution=32, seed=3)
    a = synth_dataset(spec)[7]
    b = synth_dataset(spec)[7]
    assert a.tobytes() == b.tobytes()
    assert a.min() >= -1 and a.max() <= 1
    assert synth_dataset(SynthDatasetSpec(16, 32, seed=4))[7].tobytes() != a.tobytes()


def test_synth_statistics():
    x = synth_dataset(n_images=512, resolution=64).batch(range(512))
    assert -0.5 < x.mean() < 0.5
    band0 = laplacian_pyramid(x.astype(np.float64), 2)[0]
    energy = (band0 ** 2).mean(axis=(1, 2, 3))
    assert np.all(energy > 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 24), st.integers(1, 24))
def test_png_roundtrip(tmp_path_factory, seed, h, w):
    img = np.random.default_rng(seed).uniform(-1.2, 1.2, (3, h, w))
    path = tmp_path_factory.mktemp("png") / "x.png"
    write_png(path, img)
    np.testing.assert_array_equal(to_uint8(read_png(path)), to_uint8(img))


# -- config -----------------------------------------------------------------------

def test_config_parsing():
    cfg = parse_config_text("# comment\n\na = 1\nb=two words \n")
    assert cfg == {"a": "1", "b": "two words"}
    assert parse_config_text(format_config(cfg)) == cfg
    with pytest.raises(ConfigError):
        parse_config_text("novalue\n")
    assert merge({"a": 1, "b": 2}, {"b": 3}, {"c": None}) == {"a": "1", "b": "3"}


def test_precedence(tmp_path):
    cfgfile = tmp_path / "c.txt"
    cfgfile.write_text("n_points = 30\nrepeats = 1\ndims = 2,3\nseed = 5\n")
    out = tmp_path / "d.csv"
    assert main(["dimlab", "--config", str(cfgfile), "--seed", "6", "--out", str(out)]) == 0
    m = read_manifest(str(out) + ".manifest.txt")
    assert m["config.seed"] == "6" and m["config.n_points"] == "30" and m["config.k_neighbors"] == "3"
    assert main(["dimlab", "--config", str(cfgfile), "--seed", "6", "--set", "seed=7", "--out", str(out)]) == 0
    assert read_manifest(str(out) + ".manifest.txt")["config.seed"] == "7"


# -- sr ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def gen_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "g.pan"
    save_network(path, build_generator(16, 64, 8, 16, seed=2))
    return path


def test_sr_identical_bytes(tmp_path, gen_file):
    write_folder(tmp_path / "lr", 2, 16)
    for name in ("o1", "o2"):
        assert main(["sr", "--checkpoint", str(gen_file), "--input", str(tmp_path / "lr"),
                     "--out", str(tmp_path / name)]) == 0
    for f in ("img00.png", "img01.png"):
        assert (tmp_path / "o1" / f).read_bytes() == (tmp_path / "o2" / f).read_bytes()
        assert read_png(tmp_path / "o1" / f).shape == (3, 64, 64)


def test_sr_downscale(tmp_path, gen_file):
    write_folder(tmp_path / "lr", 1, 16)
    assert main(["sr", "--checkpoint", str(gen_file), "--input", str(tmp_path / "lr" / "img00.png"),
                 "--out", str(tmp_path / "o"), "--downscale", "1"]) == 0
    assert read_png(tmp_path / "o" / "img00.png").shape == (3, 32, 32)


def test_sr_gray_input_finite(gen_file):
    gen = load_network(gen_file)
    y = super_resolve(gen, np.zeros((1, 3, 16, 16)), noise="seeded", seed=1)
    assert y.shape == (1, 3, 64, 64) and np.isfinite(y).all()


def test_sr_resolution_mismatch(tmp_path, gen_file, capsys):
    write_folder(tmp_path / "lr", 1, 32)
    code = main(["sr", "--checkpoint", str(gen_file), "--input", str(tmp_path / "lr"), "--out", str(tmp_path / "o")])
    assert code == 3
    err = capsys.readouterr().err
    assert "32x32" in err and "16x16" in err


# -- manifests and exit codes -----------------------------------------------------

def test_train_manifest_reproduces(tmp_path):
    args = ["train", "--synth", "16", "--iters", "2", "--ch-base", "4", "--ch-max", "8", "--output-res", "32",
            "--log-interval", "1"]
    assert main(args + ["--out", str(tmp_path / "r1")]) == 0
    m = read_manifest(tmp_path / "r1" / "manifest.txt")
    assert m["command"] == "train" and m["seed"] == "0" and m["build_id"]
    assert m["output.final.pan"] == file_sha256(tmp_path / "r1" / "final.pan")
    cfg = manifest_config(m)
    cfg.pop("out"), cfg.pop("checkpoint_dir")
    (tmp_path / "replay.txt").write_text(format_config(cfg))
    assert main(["train", "--config", str(tmp_path / "replay.txt"), "--out", str(tmp_path / "r2")]) == 0
    m2 = read_manifest(tmp_path / "r2" / "manifest.txt")
    assert m2["output.final.pan"] == m["output.final.pan"]
    assert m2["output.train_log.csv"] == m["output.train_log.csv"]


def test_evaluate_and_degrade_commands(tmp_path):
    write_folder(tmp_path / "real", 4, 32, seed=1)
    assert main(["degrade", "--input", str(tmp_path / "real"), "--out", str(tmp_path / "deg"), "--seed", "3"]) == 0
    assert (tmp_path / "deg" / "img00.degrade.txt").exists()
    out = tmp_path / "m.csv"
    assert main(["evaluate", "--real", str(tmp_path / "real"), "--fake", str(tmp_path / "deg"),
                 "--metrics", "psnr,ssim,fid,swd", "--levels", "32,16", "--n-patches", "16",
                 "--n-projections", "32", "--out", str(out), "--export-features", str(tmp_path / "feat")]) == 0
    text = out.read_text()
    assert "psnr" in text and "swd,32" in text and "swd,16" in text
    assert main(["evaluate", "--metrics", "fid", "--real-features", str(tmp_path / "feat" / "real.feat"),
                 "--fake-features", str(tmp_path / "feat" / "fake.feat"), "--out", str(tmp_path / "m2.csv")]) == 0
    assert main(["evaluate", "--real", str(tmp_path / "real"), "--fake", str(tmp_path / "real"),
                 "--metrics", "psnr", "--out", str(tmp_path / "m3.csv")]) == 0
    assert "psnr,,99" in (tmp_path / "m3.csv").read_text()


@pytest.mark.parametrize("argv,code", [
    (["dimlab", "--dims", "10,5"], 2),
    (["dimlab", "--set", "n_points=abc"], 2),
    (["dimlab", "--bogus"], 2),
    (["evaluate", "--metrics", "nope"], 2),
    (["sr", "--checkpoint", "/nonexistent.pan", "--input", "/nonexistent"], 3),
    (["evaluate", "--fake", "/nonexistent"], 3),
])
def test_exit_codes(tmp_path, monkeypatch, argv, code):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == code
