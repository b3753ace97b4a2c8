"""PAN generator (partial U-Net) and discriminator with progressive growth.

The generator encodes the low-resolution input down to a 4x4 bottleneck and
decodes up to the output resolution. Decoder resolutions that also exist in
the encoder (r <= input_res) receive a skip concatenation; decoder
resolutions above the input size receive a learnable-scaled noise plane
instead. The discriminator mirrors the decoder.

Weights are stored at unit variance and multiplied by their He constant at
call time (equalized learning rate). Every parameter is initialised from a
generator seeded by ``(seed, crc32(name))``, so a network grown step by step
holds exactly the same initial values as one built at full size.
"""

from __future__ import annotations

import hashlib
import math
import zlib
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import checkpoint
from .autodiff import Tensor, ops
from .errors import ConfigError, DataError, GeometryError

BOTTLENECK = 4
BASE_RES = 8
LRELU_SLOPE = 0.2


def _is_pow2(r: int) -> bool:
    return isinstance(r, (int, np.integer)) and r >= 1 and (r & (r - 1)) == 0


def channels(r: int, r_max: int, ch_base: int, ch_max: int) -> int:
    """Feature width at resolution ``r``: doubles per halving, capped at ``ch_max``."""
    return int(min(ch_base * (r_max // r), ch_max))


@dataclass
class BlockSpec:
    resolution: int
    in_channels: int
    out_channels: int
    kind: str  # encoder | decoder | discriminator


@dataclass
class PhaseState:
    """Cursor into the progressive schedule."""

    resolution: int
    alpha: float = 1.0
    iter_in_phase: int = 0
    phase_kind: str = "stabilize"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.phase_kind not in ("fade", "stabilize"):
            raise ConfigError(f"unknown phase kind {self.phase_kind!r}")
        if self.phase_kind == "stabilize" and self.alpha != 1.0:
            raise ConfigError("alpha must be 1 during a stabilize phase")


def _param_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


class NetworkGraph:
    """Named parameter tensors plus the topology they implement."""

    kind = "graph"

    def __init__(self, output_res: int, ch_base: int, ch_max: int, seed: int):
        self.output_res = int(output_res)
        self.ch_base = int(ch_base)
        self.ch_max = int(ch_max)
        self.seed = int(seed)
        self.top_res = BASE_RES
        self.params: Dict[str, Tensor] = {}
        self._fan_in: Dict[str, float] = {}
        self._gain: Dict[str, float] = {}

    # -- parameters --------------------------------------------------------
    def ch(self, r: int) -> int:
        return channels(r, self.output_res, self.ch_base, self.ch_max)

    def _add(self, name: str, shape: Tuple[int, ...], init: str, fan_in: float = 1.0, gain: float = math.sqrt(2)):
        if name in self.params:
            return
        if init == "normal":
            data = _param_rng(self.seed, name).standard_normal(shape)
        else:
            data = np.zeros(shape)
        self.params[name] = Tensor(data, requires_grad=True, name=name)
        self._fan_in[name] = fan_in
        self._gain[name] = gain

    def _conv_param(self, name: str, co: int, ci: int, k: int, gain: float = math.sqrt(2)):
        self._add(f"{name}.weight", (co, ci, k, k), "normal", fan_in=ci * k * k, gain=gain)
        self._add(f"{name}.bias", (co,), "zeros")

    def _upconv_param(self, name: str, ci: int, co: int, k: int = 4):
        # each output pixel of a stride-2 transposed conv sees ci*(k/2)^2 inputs
        self._add(f"{name}.weight", (ci, co, k, k), "normal", fan_in=ci * (k // 2) ** 2)
        self._add(f"{name}.bias", (co,), "zeros")

    def weight(self, name: str) -> Tensor:
        w = self.params[name]
        return ops.scale(w, self._gain[name] / math.sqrt(self._fan_in[name]))

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return list(self.params.items())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    # -- layers --------------------------------------------------------------
    def conv(self, name: str, x: Tensor, act: bool = True) -> Tensor:
        w = self.weight(f"{name}.weight")
        pad = (w.shape[2] - 1) // 2
        y = ops.add(ops.conv2d(x, w, 1, pad), ops.reshape(self.params[f"{name}.bias"], (1, -1, 1, 1)))
        return ops.leaky_relu(y, LRELU_SLOPE) if act else y

    def down(self, name: str, x: Tensor) -> Tensor:
        y = ops.conv2d_downscale(x, self.weight(f"{name}.weight"), self.params[f"{name}.bias"])
        return ops.leaky_relu(y, LRELU_SLOPE)

    def up(self, name: str, x: Tensor) -> Tensor:
        y = ops.conv2d_upscale(x, self.weight(f"{name}.weight"), self.params[f"{name}.bias"])
        return ops.leaky_relu(y, LRELU_SLOPE)

    # -- descriptor / serialization -------------------------------------------
    def topology(self) -> Dict[str, object]:
        return {
            "kind": self.kind,
            "output_res": self.output_res,
            "ch_base": self.ch_base,
            "ch_max": self.ch_max,
            "seed": self.seed,
            "top_res": self.top_res,
        }

    def config_hash(self) -> str:
        desc = self.topology()
        desc = {k: v for k, v in desc.items() if k != "top_res"}
        text = ";".join(f"{k}={desc[k]}" for k in sorted(desc))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def state_arrays(self, prefix: str = "") -> Dict[str, np.ndarray]:
        return {prefix + k: v.data for k, v in self.params.items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray], prefix: str = "") -> None:
        for name, p in self.params.items():
            key = prefix + name
            if key not in arrays:
                raise DataError(f"checkpoint lacks parameter {key}")
            arr = arrays[key]
            if arr.shape != p.shape:
                raise DataError(f"parameter {key}: shape {arr.shape} != {p.shape}")
            p.data = np.array(arr, dtype=p.dtype)


class Generator(NetworkGraph):
    kind = "generator"

    def __init__(self, input_res, output_res, ch_base=32, ch_max=128, skip_levels=None, seed=0):
        for r in (input_res, output_res):
            if not _is_pow2(r):
                raise ConfigError(f"resolution {r} is not a power of two")
        if not BOTTLENECK < input_res <= output_res:
            raise ConfigError(f"need {BOTTLENECK} < input_res <= output_res, got {input_res}, {output_res}")
        super().__init__(output_res, ch_base, ch_max, seed)
        self.input_res = int(input_res)
        self.skip_levels = None if skip_levels is None or skip_levels < 0 else int(skip_levels)
        self.skip_sites = self._plan_skips()
        self.noise_sites = [r for r in self._decoder_plan() if r > self.input_res]

    def _decoder_plan(self) -> List[int]:
        out, r = [], BASE_RES
        while r <= self.output_res:
            out.append(r)
            r *= 2
        return out

    def _plan_skips(self) -> List[int]:
        candidates = [r for r in self._decoder_plan() if r <= self.input_res]
        if self.skip_levels is not None:
            # coarse skips carry layout; fine ones are dropped first
            candidates = candidates[: self.skip_levels]
        return candidates

    # structure at the current growth state
    def decoder_resolutions(self) -> List[int]:
        return [r for r in self._decoder_plan() if r <= self.top_res]

    def encoder_resolutions(self) -> List[int]:
        top = min(self.input_res, self.top_res)
        return [r for r in reversed(self._decoder_plan()) if r <= top]

    def active_skip_sites(self) -> List[int]:
        return [r for r in self.skip_sites if r <= self.top_res]

    def active_noise_sites(self) -> List[int]:
        return [r for r in self.noise_sites if r <= self.top_res]

    def block_specs(self) -> List[BlockSpec]:
        specs = [BlockSpec(r, self.ch(r), self.ch(r // 2), "encoder") for r in self.encoder_resolutions()]
        specs += [BlockSpec(r, self.ch(r // 2), self.ch(r), "decoder") for r in self.decoder_resolutions()]
        return specs

    def _build_level(self, r: int) -> None:
        """Create every parameter owned by resolution ``r``."""
        if r <= self.input_res:
            self._conv_param(f"enc.{r}.from_rgb", self.ch(r), 3, 1)
            self._conv_param(f"enc.{r}.conv", self.ch(r), self.ch(r), 3)
            self._conv_param(f"enc.{r}.down", self.ch(r // 2), self.ch(r), 3)
        cin = self.ch(r) * (2 if r in self.skip_sites else 1)
        self._upconv_param(f"dec.{r}.up", self.ch(r // 2), self.ch(r))
        self._conv_param(f"dec.{r}.conv", self.ch(r), cin, 3)
        if r in self.noise_sites:
            self._add(f"dec.{r}.noise", (self.ch(r),), "zeros")
        self._conv_param(f"dec.{r}.to_rgb", 3, self.ch(r), 1, gain=1.0)

    def topology(self):
        d = super().topology()
        d.update(input_res=self.input_res, skip_levels=-1 if self.skip_levels is None else self.skip_levels)
        return d


class Discriminator(NetworkGraph):
    kind = "discriminator"

    def __init__(self, output_res, ch_base=32, ch_max=128, seed=0):
        if not _is_pow2(output_res) or output_res < BASE_RES:
            raise ConfigError(f"bad discriminator resolution {output_res}")
        super().__init__(output_res, ch_base, ch_max, seed)

    def block_resolutions(self) -> List[int]:
        out, r = [], self.top_res
        while r >= BASE_RES:
            out.append(r)
            r //= 2
        return out

    def block_specs(self) -> List[BlockSpec]:
        return [BlockSpec(r, self.ch(r), self.ch(r // 2), "discriminator") for r in self.block_resolutions()]

    def _build_level(self, r: int) -> None:
        self._conv_param(f"disc.{r}.from_rgb", self.ch(r), 3, 1)
        self._conv_param(f"disc.{r}.conv", self.ch(r), self.ch(r), 3)
        self._conv_param(f"disc.{r}.down", self.ch(r // 2), self.ch(r), 3)

    def _build_head(self) -> None:
        c4 = self.ch(BOTTLENECK)
        self._conv_param("disc.4.conv", c4, c4, 3)
        self._add("disc.head.weight", (c4 * BOTTLENECK * BOTTLENECK, 1), "normal",
                  fan_in=c4 * BOTTLENECK * BOTTLENECK, gain=1.0)
        self._add("disc.head.bias", (1,), "zeros")


# --------------------------------------------------------------------------
# construction and growth


def build_generator(input_res: int, output_res: int, ch_base: int = 32, ch_max: int = 128,
                    skip_levels: Optional[int] = None, seed: int = 0,
                    start_res: Optional[int] = None) -> Generator:
    """Build the generator grown up to ``start_res`` (default: ``output_res``)."""
    g = Generator(input_res, output_res, ch_base, ch_max, skip_levels, seed)
    start = output_res if start_res is None else start_res
    if not _is_pow2(start) or not BASE_RES <= start <= output_res:
        raise ConfigError(f"bad start resolution {start}")
    g._conv_param("mid.conv", g.ch(BOTTLENECK), g.ch(BOTTLENECK), 3)
    r = BASE_RES
    while r <= start:
        g._build_level(r)
        g.top_res = r
        r *= 2
    return g


def build_discriminator(output_res: int, ch_base: int = 32, ch_max: int = 128, seed: int = 0,
                        start_res: Optional[int] = None) -> Discriminator:
    d = Discriminator(output_res, ch_base, ch_max, seed)
    start = output_res if start_res is None else start_res
    if not _is_pow2(start) or not BASE_RES <= start <= output_res:
        raise ConfigError(f"bad start resolution {start}")
    d._build_head()
    r = BASE_RES
    while r <= start:
        d._build_level(r)
        d.top_res = r
        r *= 2
    return d


def grow(net: NetworkGraph, to_res: int) -> NetworkGraph:
    """Add the layers for ``to_res`` in place; existing tensors are untouched."""
    if to_res != 2 * net.top_res:
        raise ConfigError(f"growth must double the resolution: {net.top_res} -> {to_res}")
    if to_res > net.output_res:
        raise ConfigError(f"cannot grow past output resolution {net.output_res}")
    net._build_level(to_res)
    net.top_res = to_res
    return net


# --------------------------------------------------------------------------
# forward passes


def inject_noise(features, scales, seed: int) -> Tensor:
    """features + scales[c] * eps, with one [N,1,H,W] standard-normal plane per call."""
    features, scales = ops._t(features), ops._t(scales)
    n, c, h, w = features.shape
    if scales.shape != (c,):
        raise GeometryError(f"noise scales shape {scales.shape} does not match {c} channels")
    eps = np.random.default_rng(seed).standard_normal((n, 1, h, w)).astype(features.dtype)
    return ops.add(features, ops.mul(ops.reshape(scales, (1, c, 1, 1)), Tensor(eps, dtype=features.dtype)))


def _site_seed(seed: int, r: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(r)]).generate_state(1)[0])


def fade_in_output(old_rgb, new_rgb, alpha: float) -> Tensor:
    """(1 - alpha) * nearest_2x_up(old) + alpha * new."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    old_rgb, new_rgb = ops._t(old_rgb), ops._t(new_rgb)
    if new_rgb.shape[2] != 2 * old_rgb.shape[2] or new_rgb.shape[3] != 2 * old_rgb.shape[3]:
        raise GeometryError(f"fade-in expects r and 2r inputs, got {old_rgb.shape} and {new_rgb.shape}")
    if alpha == 1.0:
        return new_rgb
    up = ops.nearest_2x_up(old_rgb)
    if alpha == 0.0:
        return up
    return ops.add(ops.scale(up, 1.0 - alpha), ops.scale(new_rgb, alpha))


def _blend(old: Tensor, new: Tensor, alpha: float) -> Tensor:
    if alpha == 1.0:
        return new
    if alpha == 0.0:
        return old
    return ops.add(ops.scale(old, 1.0 - alpha), ops.scale(new, alpha))


def _noise_seed(noise_mode) -> Optional[int]:
    """Return the seed for ``random(seed)`` mode, None for ``zero`` mode."""
    if noise_mode is None or noise_mode == "zero":
        return None
    if isinstance(noise_mode, tuple) and noise_mode[0] == "random":
        return int(noise_mode[1])
    if isinstance(noise_mode, (int, np.integer)):
        return int(noise_mode)
    raise ConfigError(f"unknown noise mode {noise_mode!r}")


def _check_phase(net: NetworkGraph, phase: PhaseState) -> None:
    r = phase.resolution
    if not _is_pow2(r) or not BASE_RES <= r <= net.top_res:
        raise GeometryError(f"phase resolution {r} outside the grown range [{BASE_RES}, {net.top_res}]")


def _fading(phase: PhaseState) -> bool:
    return phase.alpha < 1.0 and phase.resolution > BASE_RES


def generator_forward(net: Generator, lr, phase: PhaseState, noise_mode="zero") -> Tensor:
    """Super-resolve ``lr`` to ``phase.resolution``.

    ``noise_mode`` is ``"zero"`` (deterministic) or ``("random", seed)``.
    """
    _check_phase(net, phase)
    lr = ops._t(lr)
    R = phase.resolution
    r_in = min(net.input_res, R)
    if lr.ndim != 4 or lr.shape[1] != 3 or lr.shape[2] != r_in or lr.shape[3] != r_in:
        raise GeometryError(f"generator input must be [N,3,{r_in},{r_in}] at phase {R}, got {lr.shape}")
    fading = _fading(phase)
    alpha = phase.alpha if fading else 1.0
    noise_seed = _noise_seed(noise_mode)

    # encoder; the top level fades in while the phase is growing the encoder
    skips: Dict[int, Tensor] = {}
    h = net.conv(f"enc.{r_in}.from_rgb", lr)
    skips[r_in] = h
    h = net.down(f"enc.{r_in}.down", net.conv(f"enc.{r_in}.conv", h))
    if fading and R <= net.input_res:
        old = net.conv(f"enc.{r_in // 2}.from_rgb", ops.avg_pool_2x_down(lr))
        h = _blend(old, h, alpha)
    r = r_in // 2
    while r >= BASE_RES:
        skips[r] = h
        h = net.down(f"enc.{r}.down", net.conv(f"enc.{r}.conv", h))
        r //= 2
    h = net.conv("mid.conv", h)

    # decoder
    rgb_prev = None
    r = BASE_RES
    while r <= R:
        h = net.up(f"dec.{r}.up", h)
        if r in net.skip_sites:
            h = ops.concat_channels(h, skips[r])
        if r in net.noise_sites and noise_seed is not None:
            h = inject_noise(h, net.params[f"dec.{r}.noise"], _site_seed(noise_seed, r))
        h = net.conv(f"dec.{r}.conv", h)
        if fading and r == R // 2:
            rgb_prev = net.conv(f"dec.{r}.to_rgb", h, act=False)
        r *= 2
    out = net.conv(f"dec.{R}.to_rgb", h, act=False)
    if fading:
        out = fade_in_output(rgb_prev, out, alpha)
    return out


def discriminator_forward(net: Discriminator, img, phase: PhaseState) -> Tensor:
    """Per-sample raw logits, shape [N]."""
    _check_phase(net, phase)
    img = ops._t(img)
    R = phase.resolution
    if img.ndim != 4 or img.shape[1] != 3 or img.shape[2] != R or img.shape[3] != R:
        raise GeometryError(f"discriminator input must be [N,3,{R},{R}], got {img.shape}")
    fading = _fading(phase)
    h = net.conv(f"disc.{R}.from_rgb", img)
    h = net.down(f"disc.{R}.down", net.conv(f"disc.{R}.conv", h))
    if fading:
        old = net.conv(f"disc.{R // 2}.from_rgb", ops.avg_pool_2x_down(img))
        h = _blend(old, h, phase.alpha)
    r = R // 2
    while r >= BASE_RES:
        h = net.down(f"disc.{r}.down", net.conv(f"disc.{r}.conv", h))
        r //= 2
    h = net.conv("disc.4.conv", h)
    n = h.shape[0]
    flat = ops.reshape(h, (n, -1))
    logits = ops.add(ops.matmul(flat, net.weight("disc.head.weight")), net.params["disc.head.bias"])
    return ops.reshape(logits, (n,))


# --------------------------------------------------------------------------
# persistence


def network_meta(net: NetworkGraph, prefix: str = "") -> Dict[str, object]:
    meta = {f"{prefix}{k}": v for k, v in net.topology().items()}
    meta[f"{prefix}config_hash"] = net.config_hash()
    return meta


def network_from_meta(meta: Dict[str, str], prefix: str = "") -> NetworkGraph:
    kind = meta[f"{prefix}kind"]
    g = lambda k: int(meta[f"{prefix}{k}"])  # noqa: E731
    if kind == "generator":
        skip = g("skip_levels")
        net = build_generator(g("input_res"), g("output_res"), g("ch_base"), g("ch_max"),
                              None if skip < 0 else skip, g("seed"), start_res=g("top_res"))
    elif kind == "discriminator":
        net = build_discriminator(g("output_res"), g("ch_base"), g("ch_max"), g("seed"), start_res=g("top_res"))
    else:
        raise DataError(f"unknown network kind {kind!r}")
    if net.config_hash() != meta.get(f"{prefix}config_hash"):
        raise DataError("network config hash does not match its topology descriptor")
    return net


def save_network(path, net: NetworkGraph) -> None:
    checkpoint.save(path, net.state_arrays(), network_meta(net))


def load_network(path) -> NetworkGraph:
    arrays, meta = checkpoint.load(path)
    net = network_from_meta(meta)
    net.load_arrays(arrays)
    return net
