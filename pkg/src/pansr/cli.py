"""Command-line entry point: train, sr, evaluate, degrade, dimlab, fit-niqe.

Every command accepts ``--config FILE`` (flat key = value) and writes a
manifest next to its outputs. Exit codes: 0 ok, 2 config, 3 data, 4 divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from . import checkpoint
from .config import format_config, merge, read_config, write_manifest
from .data import FolderSource, SynthDatasetSpec, read_png, synth_dataset, write_png
from .errors import ConfigError, DataError, PanError
from .inference import load_generator, super_resolve

log = logging.getLogger("pansr")


def _ints(s: str) -> List[int]:
    try:
        return [int(float(v)) for v in str(s).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of integers, got {s!r}")


def _pair(s: str, cast=float):
    vals = [cast(v) for v in str(s).split(",")]
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2:
        raise ConfigError(f"expected 'lo,hi', got {s!r}")
    return tuple(vals)


def _flags(args: argparse.Namespace, names: Dict[str, str]) -> Dict[str, object]:
    """Map argparse attributes to config keys, dropping unset flags."""
    out = {}
    for attr, key in names.items():
        v = getattr(args, attr, None)
        if v is not None:
            out[key] = v
    for item in getattr(args, "set", None) or []:
        k, sep, v = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[k.strip()] = v.strip()
    return out


def _resolve(args, defaults, names) -> Dict[str, str]:
    file_cfg = read_config(args.config) if args.config else {}
    return merge(defaults, file_cfg, _flags(args, names))


def _png_names(path: str) -> List[str]:
    if not os.path.isdir(path):
        raise DataError(f"{path} is not a directory")
    names = sorted(f for f in os.listdir(path) if f.lower().endswith(".png"))
    if not names:
        raise DataError(f"{path} contains no PNG images")
    return names


def _native_res(path: str) -> int:
    from PIL import Image
    with Image.open(os.path.join(path, _png_names(path)[0])) as im:
        return min(im.size)


def _dataset(cfg: Dict[str, str], resolution: int):
    if cfg.get("data"):
        return FolderSource(cfg["data"], resolution, skip_bad=cfg.get("skip_bad", "0") in ("1", "true"))
    return synth_dataset(SynthDatasetSpec(int(cfg.get("synth", 512)), resolution, int(cfg.get("synth_seed", 0))))


def _config_hash(cfg: Dict[str, str]) -> str:
    return hashlib.sha256(format_config(dict(sorted(cfg.items()))).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# train

TRAIN_FLAGS = {
    "data": "data", "synth": "synth", "out": "out", "iters": "iters", "seed": "seed", "mode": "mode",
    "input_res": "input_res", "output_res": "output_res", "ch_base": "ch_base", "ch_max": "ch_max",
    "gamma": "gamma", "skip_levels": "ablations.skip_levels", "log_interval": "log_interval",
    "checkpoint_interval": "checkpoint_interval", "resume": "resume",
}


def cmd_train(args) -> int:
    from .trainer import Trainer, train_config_from_meta, train_config_meta

    extra = {}
    if args.no_progressive:
        extra["ablations.progressive"] = 0
    if args.no_noise:
        extra["ablations.noise"] = 0
    if args.degrade:
        extra["degrade"] = 1
    cfg = merge({"out": "run", "synth": 512, "seed": 0}, read_config(args.config) if args.config else {},
                _flags(args, TRAIN_FLAGS), extra)
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    cfg["checkpoint_dir"] = os.path.join(out, "checkpoints")
    tcfg = train_config_from_meta(cfg)
    dataset = _dataset(cfg, tcfg.output_res)
    if cfg.get("resume"):
        trainer = Trainer.restore(cfg["resume"], dataset, tcfg)
    else:
        trainer = Trainer(tcfg, dataset)
    log_path = os.path.join(out, "train_log.csv")
    trainer.run(log_path=log_path)
    final = os.path.join(out, "final.pan")
    trainer.save(final)
    resolved = {**{k: str(v) for k, v in train_config_meta(tcfg).items()}, **cfg}
    write_manifest(os.path.join(out, "manifest.txt"), "train", resolved, tcfg.seed, [final, log_path])
    print(f"trained {trainer.iteration} iterations -> {final}")
    return 0


# --------------------------------------------------------------------------
# sr

SR_FLAGS = {"checkpoint": "checkpoint", "input": "input", "out": "out", "noise": "noise", "seed": "seed",
            "downscale": "downscale"}


def cmd_sr(args) -> int:
    cfg = _resolve(args, {"noise": "zero", "seed": 0, "downscale": 0, "out": "sr_out"}, SR_FLAGS)
    for k in ("checkpoint", "input"):
        if not cfg.get(k):
            raise ConfigError(f"sr needs --{k}")
    gen = load_generator(cfg["checkpoint"])
    src = cfg["input"]
    if os.path.isdir(src):
        paths = [os.path.join(src, n) for n in _png_names(src)]
    elif os.path.isfile(src):
        paths = [src]
    else:
        raise DataError(f"input {src} does not exist")
    try:
        imgs = np.stack([read_png(p) for p in paths])
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read input images: {exc}")
    ds = int(cfg["downscale"])
    if ds < 0:
        raise ConfigError("--downscale must be >= 0")
    out_imgs = super_resolve(gen, imgs, cfg["noise"], int(cfg["seed"]), ds)
    os.makedirs(cfg["out"], exist_ok=True)
    written = []
    for p, img in zip(paths, out_imgs):
        dst = os.path.join(cfg["out"], os.path.basename(p))
        write_png(dst, img)
        written.append(dst)
    write_manifest(os.path.join(cfg["out"], "manifest.txt"), "sr", cfg, int(cfg["seed"]), written)
    print(f"wrote {len(written)} image(s) at {out_imgs.shape[2]}x{out_imgs.shape[3]} to {cfg['out']}")
    return 0


# --------------------------------------------------------------------------
# evaluate

EVAL_FLAGS = {"real": "real", "fake": "fake", "metrics": "metrics", "out": "out", "seed": "seed",
              "niqe_model": "niqe_model", "real_features": "real_features", "fake_features": "fake_features",
              "export_features": "export_features", "levels": "levels", "n_patches": "n_patches",
              "n_projections": "n_projections"}


def cmd_evaluate(args) -> int:
    from . import metrics as M

    cfg = _resolve(args, {"metrics": "psnr,ssim,fid,swd", "out": "metrics.csv", "seed": 0,
                          "n_patches": 128, "n_projections": 512}, EVAL_FLAGS)
    wanted = [m.strip() for m in cfg["metrics"].split(",") if m.strip()]
    unknown = set(wanted) - {"psnr", "ssim", "fid", "swd", "niqe"}
    if unknown:
        raise ConfigError(f"unknown metrics: {sorted(unknown)}")
    seed = int(cfg["seed"])
    chash = _config_hash(cfg)
    report = M.MetricReport()
    need_images = any(m in wanted for m in ("psnr", "ssim", "swd", "niqe")) or (
        "fid" in wanted and not (cfg.get("real_features") and cfg.get("fake_features")))
    real = fake = None
    if need_images:
        if not cfg.get("fake"):
            raise ConfigError("evaluate needs --fake")
        res = _native_res(cfg["fake"])
        fake = FolderSource(cfg["fake"], res).batch(range(len(_png_names(cfg["fake"]))))
        if cfg.get("real"):
            real = FolderSource(cfg["real"], res).batch(range(len(_png_names(cfg["real"]))))
    common = dict(seed=seed, config_hash=chash)

    def need_real(name):
        if real is None:
            raise ConfigError(f"{name} needs --real")

    if "psnr" in wanted or "ssim" in wanted:
        need_real("psnr/ssim")
        if real.shape != fake.shape:
            raise DataError(f"paired metrics need matching sets, got {real.shape} and {fake.shape}")
    if "psnr" in wanted:
        report.add("psnr", float(np.mean(M.psnr(real, fake))), n_images=len(fake), **common)
    if "ssim" in wanted:
        report.add("ssim", float(np.mean(M.ssim(real, fake))), n_images=len(fake), **common)
    if "fid" in wanted:
        emb = M.default_embedder
        if cfg.get("real_features"):
            fr = M.load_features(cfg["real_features"])
        else:
            need_real("fid")
            fr = emb.features(real)
        ff = M.load_features(cfg["fake_features"]) if cfg.get("fake_features") else emb.features(fake)
        if cfg.get("export_features"):
            os.makedirs(cfg["export_features"], exist_ok=True)
            M.save_features(os.path.join(cfg["export_features"], "real.feat"), fr)
            M.save_features(os.path.join(cfg["export_features"], "fake.feat"), ff)
        report.add("fid", M.fid(fr, ff), n_images=len(ff), embedder_id=ff.embedder_id, **common)
    if "swd" in wanted:
        need_real("swd")
        levels = _ints(cfg["levels"]) if cfg.get("levels") else None
        per = M.swd(real, fake, levels, int(cfg["n_patches"]), int(cfg["n_projections"]), seed)
        for lvl, v in per.items():
            report.add("swd", v, level=lvl, n_images=len(fake), **common)
    if "niqe" in wanted:
        if not cfg.get("niqe_model"):
            raise ConfigError("niqe needs --niqe-model (see fit-niqe)")
        model = M.NiqeModel.load(cfg["niqe_model"])
        scores = [M.niqe_score(img, model) for img in fake]
        report.add("niqe", float(np.mean(scores)), n_images=len(fake), **common)
    out = cfg["out"]
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    report.write_csv(out)
    write_manifest(out + ".manifest.txt", "evaluate", cfg, seed, [out])
    for r in report.rows:
        lvl = "" if r.level is None else f"@{r.level}"
        print(f"{r.metric}{lvl} = {r.value:.6g}")
    return 0


# --------------------------------------------------------------------------
# degrade

DEGRADE_FLAGS = {"input": "input", "out": "out", "sigma": "sigma", "motion": "motion", "scale": "scale",
                 "noise": "noise", "jpeg": "jpeg", "seed": "seed", "workers": "workers",
                 "resolution": "resolution"}


def cmd_degrade(args) -> int:
    from .degrade import DegradationParams, degrade

    cfg = _resolve(args, {"sigma": "0.2,3.0", "motion": 5.0, "scale": 1, "noise": 0.05, "jpeg": "30,95",
                          "seed": 0, "workers": 1, "out": "degraded"}, DEGRADE_FLAGS)
    if not cfg.get("input"):
        raise ConfigError("degrade needs --input")
    jpeg = None if cfg["jpeg"].lower() == "off" else _pair(cfg["jpeg"], int)
    params = DegradationParams(_pair(cfg["sigma"]), float(cfg["motion"]), int(cfg["scale"]),
                               float(cfg["noise"]), jpeg, int(cfg["seed"]))
    res = int(cfg["resolution"]) if cfg.get("resolution") else _native_res(cfg["input"])
    src = FolderSource(cfg["input"], res)
    imgs = src.batch(range(len(src)))
    out_imgs, draws = degrade(imgs, params, workers=int(cfg["workers"]), return_params=True)
    os.makedirs(cfg["out"], exist_ok=True)
    written = []
    for name, img, d in zip(src.files, out_imgs, draws):
        dst = os.path.join(cfg["out"], name)
        write_png(dst, img)
        side = os.path.splitext(dst)[0] + ".degrade.txt"
        with open(side, "w") as f:
            f.write(format_config({"source": name, **d.as_dict()}))
        written += [dst, side]
    write_manifest(os.path.join(cfg["out"], "manifest.txt"), "degrade", cfg, params.seed, written)
    print(f"degraded {len(src)} image(s) -> {cfg['out']}")
    return 0


# --------------------------------------------------------------------------
# dimlab

DIMLAB_FLAGS = {"dims": "dims", "n_points": "n_points", "k": "k_neighbors", "log_base": "log_base",
                "repeats": "repeats", "seed": "seed", "out": "out", "plot": "plot"}


def cmd_dimlab(args) -> int:
    from .dimlab import DEFAULT_DIMS, DimExperimentConfig, plot, run_sweep, write_csv

    cfg = _resolve(args, {"dims": ",".join(map(str, DEFAULT_DIMS)), "n_points": 500, "repeats": 5, "seed": 0,
                          "log_base": "e", "out": "dimlab.csv"}, DIMLAB_FLAGS)
    dcfg = DimExperimentConfig(_ints(cfg["dims"]), int(cfg["n_points"]),
                               int(cfg["k_neighbors"]) if cfg.get("k_neighbors") else None,
                               int(cfg["repeats"]), int(cfg["seed"]), cfg["log_base"])
    cfg["k_neighbors"] = str(dcfg.k_neighbors)
    rows = run_sweep(dcfg)
    os.makedirs(os.path.dirname(os.path.abspath(cfg["out"])), exist_ok=True)
    write_csv(rows, cfg["out"])
    outputs = [cfg["out"]]
    if cfg.get("plot"):
        plot(rows, cfg["plot"])
        outputs.append(cfg["plot"])
    write_manifest(cfg["out"] + ".manifest.txt", "dimlab", cfg, dcfg.seed, outputs)
    for r in rows:
        print(f"d={r.d:<7d} mean={r.mean_ratio:.6g} std={r.std_ratio:.6g} excluded={r.excluded_count}")
    return 0


# --------------------------------------------------------------------------
# fit-niqe

NIQE_FLAGS = {"corpus": "data", "synth": "synth", "resolution": "resolution", "patch_size": "patch_size",
              "threshold": "threshold", "out": "out"}


def cmd_fit_niqe(args) -> int:
    from .metrics.niqe import PATCH_SIZE, SHARPNESS_THRESHOLD, niqe_fit

    cfg = _resolve(args, {"resolution": 64, "patch_size": PATCH_SIZE, "threshold": SHARPNESS_THRESHOLD,
                          "out": "niqe_model.npz", "synth": 200}, NIQE_FLAGS)
    src = _dataset(cfg, int(cfg["resolution"]))
    model = niqe_fit((src[i] for i in range(len(src))), int(cfg["patch_size"]), float(cfg["threshold"]))
    out = cfg["out"]
    if not out.endswith(".npz"):
        out += ".npz"
    model.save(out)
    write_manifest(out + ".manifest.txt", "fit-niqe", cfg, 0, [out])
    print(f"fitted NIQE model on {model.n_patches} patches -> {out}")
    return 0


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pansr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value file; flags override its keys")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        return sp

    t = common(sub.add_parser("train", help="progressive GAN training"))
    t.add_argument("--data", help="folder of PNG images (default: synthetic dataset)")
    t.add_argument("--synth", type=int, help="number of synthetic images (default 512)")
    t.add_argument("--out", help="run directory")
    t.add_argument("--iters", type=int, help="iterations per stabilize and per fade phase")
    t.add_argument("--seed", type=int)
    t.add_argument("--mode", choices=["gan", "l1", "l2"])
    t.add_argument("--input-res", type=int)
    t.add_argument("--output-res", type=int)
    t.add_argument("--ch-base", type=int)
    t.add_argument("--ch-max", type=int)
    t.add_argument("--gamma", type=float)
    t.add_argument("--skip-levels", type=int)
    t.add_argument("--log-interval", type=int)
    t.add_argument("--checkpoint-interval", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--no-progressive", action="store_true", help="train at the final resolution only")
    t.add_argument("--no-noise", action="store_true", help="disable noise injection")
    t.add_argument("--degrade", action="store_true", help="degrade low-resolution inputs online")
    t.set_defaults(func=cmd_train)

    s = common(sub.add_parser("sr", help="super-resolve images with a trained checkpoint"))
    s.add_argument("--checkpoint")
    s.add_argument("--input", help="PNG file or folder")
    s.add_argument("--out")
    s.add_argument("--noise", choices=["seeded", "zero"])
    s.add_argument("--seed", type=int)
    s.add_argument("--downscale", type=int, help="average-pool the result by 2**n before writing")
    s.set_defaults(func=cmd_sr)

    e = common(sub.add_parser("evaluate", help="PSNR/SSIM/FID/SWD/NIQE report"))
    e.add_argument("--real")
    e.add_argument("--fake")
    e.add_argument("--metrics", help="comma list from psnr,ssim,fid,swd,niqe")
    e.add_argument("--out", help="CSV path")
    e.add_argument("--seed", type=int)
    e.add_argument("--niqe-model")
    e.add_argument("--real-features", help="feature file to use instead of embedding --real")
    e.add_argument("--fake-features")
    e.add_argument("--export-features", help="directory to write real.feat / fake.feat")
    e.add_argument("--levels", help="SWD levels, e.g. 64,32")
    e.add_argument("--n-patches", type=int)
    e.add_argument("--n-projections", type=int)
    e.set_defaults(func=cmd_evaluate)

    d = common(sub.add_parser("degrade", help="apply the random degradation to a folder"))
    d.add_argument("--input")
    d.add_argument("--out")
    d.add_argument("--sigma", help="Gaussian PSF sigma range lo,hi")
    d.add_argument("--motion", type=float, help="max motion length in pixels")
    d.add_argument("--scale", type=int)
    d.add_argument("--noise", type=float, help="max noise sigma")
    d.add_argument("--jpeg", help="quality range lo,hi or off")
    d.add_argument("--seed", type=int)
    d.add_argument("--workers", type=int)
    d.add_argument("--resolution", type=int)
    d.set_defaults(func=cmd_degrade)

    m = common(sub.add_parser("dimlab", help="nearest-neighbour distance ratio sweep"))
    m.add_argument("--dims", help="comma list, e.g. 1,10,100")
    m.add_argument("--n-points", type=int)
    m.add_argument("--k", type=int)
    m.add_argument("--log-base", choices=["e", "10", "2"])
    m.add_argument("--repeats", type=int)
    m.add_argument("--seed", type=int)
    m.add_argument("--out", help="CSV path")
    m.add_argument("--plot", help="optional PNG plot (needs matplotlib)")
    m.set_defaults(func=cmd_dimlab)

    n = common(sub.add_parser("fit-niqe", help="fit a pristine NIQE model"))
    n.add_argument("--corpus", help="folder of pristine PNGs (default: synthetic images)")
    n.add_argument("--synth", type=int)
    n.add_argument("--resolution", type=int)
    n.add_argument("--patch-size", type=int)
    n.add_argument("--threshold", type=float)
    n.add_argument("--out")
    n.set_defaults(func=cmd_fit_niqe)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except PanError as exc:
        print(f"pansr {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        # bad numeric literals in flags or config files
        print(f"pansr {args.command}: ConfigError: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    except OSError as exc:
        print(f"pansr {args.command}: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
