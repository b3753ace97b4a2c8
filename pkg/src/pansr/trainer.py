"""Coarse-to-fine adversarial training.

Every random draw (batch indices, noise planes, degradation) is a pure
function of ``(seed, global iteration)``, so a run resumed from a checkpoint
follows exactly the trajectory of an uninterrupted one.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import checkpoint
from .autodiff import Tensor, grad, no_grad
from .degrade import DegradationParams, degrade
from .errors import ConfigError, DivergenceError, GeometryError, NonFiniteError
from .losses import Adam, LossConfig, d_loss, g_loss, pixel_loss
from .network import (
    BASE_RES,
    PhaseState,
    build_discriminator,
    build_generator,
    discriminator_forward,
    generator_forward,
    grow,
    network_from_meta,
    network_meta,
)

log = logging.getLogger(__name__)

PAPER_ITERS = 600_000
PAPER_LR = {8: 0.001, 16: 0.001, 32: 0.001, 64: 0.001, 128: 0.0015, 256: 0.002, 512: 0.003, 1024: 0.003}
PAPER_BATCH = {8: 64, 16: 32, 32: 16, 64: 8, 128: 4, 256: 4, 512: 4, 1024: 4}

# seed-stream tags
_BATCH, _NOISE_D, _NOISE_G, _DEGRADE = 1, 2, 3, 4


@dataclass
class TrainSchedule:
    resolutions: List[int]
    iters_stabilize: int
    iters_fade: int
    lr_table: Dict[int, float]
    batch_table: Dict[int, int]
    seed: int = 0

    def __post_init__(self):
        rs = [int(r) for r in self.resolutions]
        if not rs or any(b != 2 * a for a, b in zip(rs, rs[1:])):
            raise ConfigError(f"resolutions must strictly double: {rs}")
        if self.iters_stabilize < 1 or self.iters_fade < 1:
            raise ConfigError("iteration counts must be >= 1")
        for r in rs:
            if r not in self.lr_table or r not in self.batch_table:
                raise ConfigError(f"resolution {r} lacks a learning-rate or batch-size entry")
        self.resolutions = rs

    def phases(self, progressive: bool = True) -> List[Tuple[int, str, int]]:
        """(resolution, kind, length) triples; the first resolution has no fade."""
        if not progressive:
            total = sum(n for _, _, n in self.phases(True))
            return [(self.resolutions[-1], "stabilize", total)]
        out = [(self.resolutions[0], "stabilize", self.iters_stabilize)]
        for r in self.resolutions[1:]:
            out.append((r, "fade", self.iters_fade))
            out.append((r, "stabilize", self.iters_stabilize))
        return out

    def total_iters(self, progressive: bool = True) -> int:
        return sum(n for _, _, n in self.phases(progressive))


def paper_schedule() -> TrainSchedule:
    """The full-scale schedule: 8 -> 1024, 600k iterations per phase and per fade."""
    return TrainSchedule(
        resolutions=[8, 16, 32, 64, 128, 256, 512, 1024],
        iters_stabilize=PAPER_ITERS,
        iters_fade=PAPER_ITERS,
        lr_table=dict(PAPER_LR),
        batch_table=dict(PAPER_BATCH),
    )


def desk_schedule(output_res: int = 64, iters: int = 2000, max_batch: int = 16, seed: int = 0) -> TrainSchedule:
    """Scaled-down schedule: paper learning rates, paper batches capped at ``max_batch``."""
    rs = []
    r = BASE_RES
    while r <= output_res:
        rs.append(r)
        r *= 2
    return TrainSchedule(
        resolutions=rs,
        iters_stabilize=iters,
        iters_fade=iters,
        lr_table={r: PAPER_LR[r] for r in rs},
        batch_table={r: min(PAPER_BATCH[r], max_batch) for r in rs},
        seed=seed,
    )


def alpha_at(iter_in_phase: int, iters_fade: int) -> float:
    if iters_fade < 1:
        raise ConfigError("iters_fade must be >= 1")
    return min(1.0, iter_in_phase / iters_fade)


# --------------------------------------------------------------------------
# data pyramid


def _pool(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise GeometryError(f"cannot halve {h}x{w}")
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def _pool_to(x: np.ndarray, r: int) -> np.ndarray:
    if x.shape[2] < r or x.shape[2] % r:
        raise GeometryError(f"cannot pool {x.shape[2]} down to {r}")
    while x.shape[2] > r:
        x = _pool(x)
    return x


@dataclass
class DataPyramid:
    """Per-resolution (LR input, real target) pairs derived from HR images."""

    targets: Dict[int, np.ndarray]
    inputs: Dict[int, np.ndarray]
    input_res: int

    def pair(self, r: int) -> Tuple[np.ndarray, np.ndarray]:
        return self.inputs[min(r, self.input_res)], self.targets[r]


def build_pyramid(hr_batch: np.ndarray, input_res: int, degrade_cfg: Optional[DegradationParams] = None,
                  seed: int = 0, indices=None, min_res: int = BASE_RES) -> DataPyramid:
    """Targets by repeated 2x average pooling; LR inputs pooled to input_res
    (to ``input_res * scale`` first when degrading) and optionally degraded,
    then pooled further for coarser phases."""
    hr = np.asarray(hr_batch, dtype=np.float32)
    top = hr.shape[2]
    if hr.ndim != 4 or hr.shape[2] != hr.shape[3] or top & (top - 1):
        raise GeometryError(f"HR batch must be square with power-of-two size, got {hr.shape}")
    targets = {top: hr}
    r, cur = top, hr
    while r > min_res:
        cur = _pool(cur)
        r //= 2
        targets[r] = cur
    if degrade_cfg is None:
        lr = targets[input_res]
    else:
        s = int(degrade_cfg.scale)
        src = _pool_to(hr, input_res * s)
        params = DegradationParams(**{**degrade_cfg.__dict__, "seed": int(seed)})
        lr = degrade(src, params, indices=indices).astype(np.float32)
    inputs = {input_res: lr}
    r, cur = input_res, lr
    while r > min_res:
        cur = _pool(cur)
        r //= 2
        inputs[r] = cur
    return DataPyramid(targets=targets, inputs=inputs, input_res=input_res)


# --------------------------------------------------------------------------
# training


@dataclass
class Ablations:
    progressive: bool = True
    noise: bool = True
    skip_levels: Optional[int] = None


@dataclass
class TrainConfig:
    input_res: int = 16
    output_res: int = 64
    ch_base: int = 8
    ch_max: int = 32
    schedule: TrainSchedule = field(default_factory=desk_schedule)
    loss: LossConfig = field(default_factory=LossConfig)
    ablations: Ablations = field(default_factory=Ablations)
    degrade: Optional[DegradationParams] = None
    seed: int = 0
    log_interval: int = 50
    checkpoint_interval: int = 0
    checkpoint_dir: Optional[str] = None


def _derived_seed(seed: int, tag: int, t: int) -> int:
    return int(np.random.SeedSequence([int(seed), tag, int(t)]).generate_state(1)[0])


class Trainer:
    """Alternating D/G updates over a resolution schedule with fade-in growth."""

    def __init__(self, cfg: TrainConfig, dataset, gen=None, disc=None):
        self.cfg = cfg
        self.dataset = dataset
        if dataset.resolution != cfg.output_res:
            raise ConfigError(f"dataset resolution {dataset.resolution} != output_res {cfg.output_res}")
        if cfg.schedule.resolutions[-1] != cfg.output_res:
            raise ConfigError("schedule must end at the generator output resolution")
        self.phases = cfg.schedule.phases(cfg.ablations.progressive)
        start = self.phases[0][0]
        self.gen = gen or build_generator(cfg.input_res, cfg.output_res, cfg.ch_base, cfg.ch_max,
                                          cfg.ablations.skip_levels, seed=cfg.seed, start_res=start)
        self.disc = disc or build_discriminator(cfg.output_res, cfg.ch_base, cfg.ch_max,
                                                seed=cfg.seed + 1, start_res=start)
        self.opt_g = Adam(self.gen.named_parameters())
        self.opt_d = Adam(self.disc.named_parameters())
        self.iteration = 0
        self.history: List[Dict[str, float]] = []
        self.last_checkpoint: Optional[str] = None
        self._pyramid_cache = self._clean_pyramid()

    # -- schedule cursor -------------------------------------------------------
    def phase_at(self, t: int) -> PhaseState:
        acc = 0
        for r, kind, n in self.phases:
            if t < acc + n:
                k = t - acc
                if kind == "fade":
                    return PhaseState(r, alpha_at(k, n), k, "fade")
                return PhaseState(r, 1.0, k, "stabilize")
            acc += n
        r, _, n = self.phases[-1]
        return PhaseState(r, 1.0, n, "stabilize")

    @property
    def total_iters(self) -> int:
        return sum(n for _, _, n in self.phases)

    def _ensure_grown(self, r: int) -> None:
        for net, opt in ((self.gen, self.opt_g), (self.disc, self.opt_d)):
            while net.top_res < r:
                grow(net, 2 * net.top_res)
                for name, p in net.named_parameters():
                    opt.add_param(name, p)

    # -- data ------------------------------------------------------------------
    def _clean_pyramid(self) -> Optional[DataPyramid]:
        if len(self.dataset) > 4096:
            return None
        hr = self.dataset.batch(range(len(self.dataset)))
        return build_pyramid(hr, self.cfg.input_res)

    def batch(self, t: int, r: int) -> Tuple[np.ndarray, np.ndarray]:
        n = self.cfg.schedule.batch_table[r]
        rng = np.random.default_rng(_derived_seed(self.cfg.seed, _BATCH, t))
        idx = rng.integers(0, len(self.dataset), size=n)
        if self.cfg.degrade is None and self._pyramid_cache is not None:
            lr, real = self._pyramid_cache.pair(r)
            return lr[idx], real[idx]
        hr = self.dataset.batch(idx)
        pyr = build_pyramid(hr, self.cfg.input_res, self.cfg.degrade,
                            seed=_derived_seed(self.cfg.seed, _DEGRADE, t), indices=range(n))
        return pyr.pair(r)

    # -- one iteration -----------------------------------------------------------
    def _noise(self, tag: int, t: int):
        if not self.cfg.ablations.noise:
            return "zero"
        return ("random", _derived_seed(self.cfg.seed, tag, t))

    def step(self) -> Dict[str, float]:
        t = self.iteration
        phase = self.phase_at(t)
        self._ensure_grown(phase.resolution)
        lr_rate = self.cfg.schedule.lr_table[phase.resolution]
        lr_img, real_img = self.batch(t, phase.resolution)
        row = {"iter": t, "L_d": float("nan"), "L_g": float("nan"), "R1": float("nan"),
               "alpha": phase.alpha, "resolution": phase.resolution}
        mode = self.cfg.loss.mode
        if mode == "gan":
            with no_grad():
                fake = generator_forward(self.gen, lr_img, phase, self._noise(_NOISE_D, t))
            real = Tensor(real_img, requires_grad=True)
            dr = discriminator_forward(self.disc, real, phase)
            df = discriminator_forward(self.disc, fake, phase)
            ld, r1 = d_loss(dr, df, real, self.cfg.loss.gamma, self.disc, return_terms=True)
            self.opt_d.step(grad(ld, self.opt_d.params), lr_rate)
            row["L_d"] = ld.item()
            row["R1"] = r1.item() if r1 is not None else 0.0

            fake = generator_forward(self.gen, lr_img, phase, self._noise(_NOISE_G, t))
            lg = g_loss(discriminator_forward(self.disc, fake, phase))
            self.opt_g.step(grad(lg, self.opt_g.params), lr_rate)
            row["L_g"] = lg.item()
        else:
            fake = generator_forward(self.gen, lr_img, phase, self._noise(_NOISE_G, t))
            lg = pixel_loss(fake, real_img, mode)
            self.opt_g.step(grad(lg, self.opt_g.params), lr_rate)
            row["L_g"] = lg.item()
        checked = [row["L_g"]] + ([row["L_d"], row["R1"]] if mode == "gan" else [])
        if not np.all(np.isfinite(checked)):
            raise NonFiniteError(f"non-finite loss at iteration {t}")
        self.iteration += 1
        return row

    def run(self, until: Optional[int] = None, log_path: Optional[str] = None) -> List[Dict[str, float]]:
        """Train up to iteration ``until`` (default: end of schedule)."""
        end = self.total_iters if until is None else min(until, self.total_iters)
        writer = None
        fh = None
        if log_path:
            exists = os.path.exists(log_path) and os.path.getsize(log_path) > 0
            fh = open(log_path, "a", newline="")
            writer = csv.DictWriter(fh, fieldnames=["iter", "L_d", "L_g", "R1", "alpha", "resolution"])
            if not exists:
                writer.writeheader()
        try:
            while self.iteration < end:
                try:
                    row = self.step()
                except (NonFiniteError, DivergenceError) as exc:
                    raise DivergenceError(
                        f"training diverged at iteration {self.iteration}: {exc}; "
                        f"last checkpoint: {self.last_checkpoint or 'none'}",
                        last_checkpoint=self.last_checkpoint,
                    ) from exc
                t = row["iter"]
                if t % self.cfg.log_interval == 0 or self.iteration == end:
                    self.history.append(row)
                    if writer:
                        writer.writerow(row)
                    log.info("iter %d res %d alpha %.3f L_d %.4f L_g %.4f R1 %.4f", t, row["resolution"],
                             row["alpha"], row["L_d"], row["L_g"], row["R1"])
                ci = self.cfg.checkpoint_interval
                if ci and self.cfg.checkpoint_dir and self.iteration % ci == 0:
                    path = os.path.join(self.cfg.checkpoint_dir, f"ckpt_{self.iteration:08d}.pan")
                    self.save(path)
        finally:
            if fh:
                fh.close()
        return self.history

    # -- persistence -------------------------------------------------------------
    def save(self, path: str) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        arrays = {}
        arrays.update(self.gen.state_arrays("G/"))
        arrays.update(self.disc.state_arrays("D/"))
        arrays.update(self.opt_g.state_arrays("optG/"))
        arrays.update(self.opt_d.state_arrays("optD/"))
        meta = {}
        meta.update(network_meta(self.gen, "G."))
        meta.update(network_meta(self.disc, "D."))
        meta.update(train_config_meta(self.cfg))
        phase = self.phase_at(self.iteration)
        meta.update({
            "iteration": self.iteration,
            "optG.step": self.opt_g.step_count,
            "optD.step": self.opt_d.step_count,
            "phase.resolution": phase.resolution,
            "phase.alpha": repr(phase.alpha),
            "phase.iter_in_phase": phase.iter_in_phase,
            "phase.kind": phase.phase_kind,
            "dataset_id": getattr(self.dataset, "id", "unknown"),
        })
        checkpoint.save(path, arrays, meta)
        self.last_checkpoint = path

    @classmethod
    def restore(cls, path: str, dataset, cfg: Optional[TrainConfig] = None) -> "Trainer":
        arrays, meta = checkpoint.load(path)
        cfg = cfg or train_config_from_meta(meta)
        gen = network_from_meta(meta, "G.")
        disc = network_from_meta(meta, "D.")
        gen.load_arrays(arrays, "G/")
        disc.load_arrays(arrays, "D/")
        tr = cls(cfg, dataset, gen=gen, disc=disc)
        tr.opt_g.load_arrays(arrays, "optG/", int(meta["optG.step"]))
        tr.opt_d.load_arrays(arrays, "optD/", int(meta["optD.step"]))
        tr.iteration = int(meta["iteration"])
        tr.last_checkpoint = path
        return tr


def train(gen, disc, dataset, schedule: TrainSchedule, loss_cfg: LossConfig, ablations: Ablations,
          input_res: int = 16, seed: int = 0, log_path: Optional[str] = None, **kwargs) -> Trainer:
    """Functional entry point; returns the finished :class:`Trainer`."""
    cfg = TrainConfig(input_res=input_res, output_res=schedule.resolutions[-1], ch_base=gen.ch_base,
                      ch_max=gen.ch_max, schedule=schedule, loss=loss_cfg, ablations=ablations, seed=seed, **kwargs)
    tr = Trainer(cfg, dataset, gen=gen, disc=disc)
    tr.run(log_path=log_path)
    return tr


# --------------------------------------------------------------------------
# flat config <-> TrainConfig


def train_config_meta(cfg: TrainConfig) -> Dict[str, object]:
    s = cfg.schedule
    meta: Dict[str, object] = {
        "input_res": cfg.input_res,
        "output_res": cfg.output_res,
        "ch_base": cfg.ch_base,
        "ch_max": cfg.ch_max,
        "resolutions": ",".join(str(r) for r in s.resolutions),
        "iters.stabilize": s.iters_stabilize,
        "iters.fade": s.iters_fade,
        "gamma": repr(cfg.loss.gamma),
        "mode": cfg.loss.mode,
        "ablations.progressive": int(cfg.ablations.progressive),
        "ablations.noise": int(cfg.ablations.noise),
        "ablations.skip_levels": -1 if cfg.ablations.skip_levels is None else cfg.ablations.skip_levels,
        "seed": cfg.seed,
        "log_interval": cfg.log_interval,
        "checkpoint_interval": cfg.checkpoint_interval,
    }
    for r in s.resolutions:
        meta[f"lr.{r}"] = repr(s.lr_table[r])
        meta[f"batch.{r}"] = s.batch_table[r]
    d = cfg.degrade
    if d is not None:
        meta["degrade.sigma"] = f"{d.sigma_range[0]!r},{d.sigma_range[1]!r}"
        meta["degrade.motion"] = repr(d.motion_max)
        meta["degrade.scale"] = d.scale
        meta["degrade.noise"] = repr(d.noise_max)
        meta["degrade.jpeg"] = "off" if d.jpeg_quality is None else f"{d.jpeg_quality[0]},{d.jpeg_quality[1]}"
    return meta


def _truthy(v) -> bool:
    return str(v).strip().lower() in ("1", "true", "yes", "on")


def train_config_from_meta(flat: Dict[str, str]) -> TrainConfig:
    """Build a TrainConfig from flat keys; missing keys take desk defaults."""
    base = TrainConfig()
    get = lambda k, d: flat.get(k, d)  # noqa: E731
    output_res = int(get("output_res", base.output_res))
    iters = get("iters", None)
    rs = [int(r) for r in str(get("resolutions", "")).split(",") if r.strip()] or desk_schedule(output_res).resolutions
    st = int(get("iters.stabilize", iters or base.schedule.iters_stabilize))
    fd = int(get("iters.fade", iters or base.schedule.iters_fade))
    lr_table = {r: float(get(f"lr.{r}", PAPER_LR.get(r, 0.001))) for r in rs}
    batch_table = {r: int(get(f"batch.{r}", min(PAPER_BATCH.get(r, 4), 16))) for r in rs}
    seed = int(get("seed", 0))
    schedule = TrainSchedule(rs, st, fd, lr_table, batch_table, seed)
    skip = int(get("ablations.skip_levels", -1))
    degrade_cfg = None
    if "degrade.sigma" in flat or _truthy(get("degrade", "0")):
        sig = [float(v) for v in str(get("degrade.sigma", "0.2,3.0")).split(",")]
        jpeg = str(get("degrade.jpeg", "30,95"))
        degrade_cfg = DegradationParams(
            sigma_range=(sig[0], sig[1]),
            motion_max=float(get("degrade.motion", 5.0)),
            scale=int(get("degrade.scale", 1)),
            noise_max=float(get("degrade.noise", 0.05)),
            jpeg_quality=None if jpeg == "off" else tuple(int(v) for v in jpeg.split(",")),
        )
    return TrainConfig(
        input_res=int(get("input_res", base.input_res)),
        output_res=output_res,
        ch_base=int(get("ch_base", base.ch_base)),
        ch_max=int(get("ch_max", base.ch_max)),
        schedule=schedule,
        loss=LossConfig(gamma=float(get("gamma", 5.0)), mode=str(get("mode", "gan"))),
        ablations=Ablations(
            progressive=_truthy(get("ablations.progressive", "1")),
            noise=_truthy(get("ablations.noise", "1")),
            skip_levels=None if skip < 0 else skip,
        ),
        degrade=degrade_cfg,
        seed=seed,
        log_interval=int(get("log_interval", base.log_interval)),
        checkpoint_interval=int(get("checkpoint_interval", 0)),
        checkpoint_dir=flat.get("checkpoint_dir"),
    )
