"""Adversarial losses with R1 regularization, pixel losses, and Adam."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .autodiff import Tensor, grad, ops
from .errors import ConfigError, DimensionError, DivergenceError, TapeError

# Adam settings used for every phase of training
ADAM_BETA1 = 0.0
ADAM_BETA2 = 0.99
ADAM_EPSILON = 1e-8
R1_GAMMA = 5.0


@dataclass
class LossConfig:
    gamma: float = R1_GAMMA
    mode: str = "gan"  # gan | l1 | l2

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError(f"gamma must be non-negative, got {self.gamma}")
        if self.mode not in ("gan", "l1", "l2"):
            raise ConfigError(f"unknown loss mode {self.mode!r}")


def r1_penalty(d_real: Tensor, real_images: Tensor) -> Tensor:
    """Batch mean of the squared input-gradient norm of D at the real samples.

    The gradient is built with ``create_graph=True`` so the penalty can be
    differentiated with respect to the discriminator parameters.
    """
    if not real_images.requires_grad or d_real.node is None:
        raise TapeError("R1 needs d_real computed on the tape from real_images with requires_grad=True")
    (gx,) = grad(ops.sum(d_real), [real_images], create_graph=True)
    n = gx.shape[0]
    per_sample = ops.sum(ops.square(ops.reshape(gx, (n, -1))), axis=1)
    return ops.mean(per_sample)


def d_loss(d_real: Tensor, d_fake: Tensor, real_images: Optional[Tensor] = None,
           gamma: float = R1_GAMMA, discriminator=None, return_terms: bool = False):
    """softplus(-D(x)) + softplus(D(x_hat)) + gamma * E||grad_x D(x)||^2.

    ``discriminator`` is accepted for call-site symmetry; the penalty only
    needs the recorded path from ``real_images`` to ``d_real``.
    """
    if gamma < 0:
        raise ConfigError(f"gamma must be non-negative, got {gamma}")
    loss = ops.add(ops.mean(ops.softplus(ops.neg(d_real))), ops.mean(ops.softplus(d_fake)))
    r1 = None
    if gamma > 0:
        if real_images is None:
            raise TapeError("R1 regularization needs the real images")
        r1 = r1_penalty(d_real, real_images)
        loss = ops.add(loss, ops.scale(r1, gamma))
    if return_terms:
        return loss, r1
    return loss


def g_loss(d_fake: Tensor) -> Tensor:
    """Non-saturating generator loss, mean softplus(-D(x_hat))."""
    return ops.mean(ops.softplus(ops.neg(d_fake)))


def pixel_loss(output, target, mode: str = "l1") -> Tensor:
    output, target = ops._t(output), ops._t(target)
    if output.shape != target.shape:
        raise DimensionError(f"pixel_loss: shapes {output.shape} and {target.shape} differ")
    diff = ops.sub(output, target)
    if mode == "l1":
        return ops.mean(ops.absolute(diff))
    if mode == "l2":
        return ops.mean(ops.square(diff))
    raise ConfigError(f"unknown pixel loss mode {mode!r}")


class Adam:
    """Bias-corrected Adam over a fixed list of named parameters."""

    def __init__(self, named_params: Sequence, beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
                 epsilon: float = ADAM_EPSILON):
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.step_count = 0
        self.names: List[str] = []
        self.params: List[Tensor] = []
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        for name, p in named_params:
            self.add_param(name, p)

    def add_param(self, name: str, p: Tensor) -> None:
        """Register a parameter added by growth; its moments start at zero."""
        if name in self.m:
            return
        self.names.append(name)
        self.params.append(p)
        self.m[name] = np.zeros_like(p.data)
        self.v[name] = np.zeros_like(p.data)

    def step(self, grads: Sequence[Tensor], lr: float) -> None:
        if len(grads) != len(self.params):
            raise ValueError("one gradient per parameter is required")
        for name, g in zip(self.names, grads):
            if not np.isfinite(g.data).all():
                raise DivergenceError(f"non-finite gradient for parameter {name}")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for name, p, g in zip(self.names, self.params, grads):
            gd = g.data
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * gd
            v *= b2
            v += (1.0 - b2) * gd * gd
            update = (lr / c1) * m / (np.sqrt(v / c2) + self.epsilon)
            p.data = (p.data - update).astype(p.dtype, copy=False)

    def state_arrays(self, prefix: str) -> Dict[str, np.ndarray]:
        out = {}
        for name in self.names:
            out[f"{prefix}m.{name}"] = self.m[name]
            out[f"{prefix}v.{name}"] = self.v[name]
        return out

    def load_arrays(self, arrays: Dict[str, np.ndarray], prefix: str, step_count: int) -> None:
        for name in self.names:
            self.m[name] = np.array(arrays[f"{prefix}m.{name}"])
            self.v[name] = np.array(arrays[f"{prefix}v.{name}"])
        self.step_count = int(step_count)


def adam_step(params: Sequence[Tensor], grads: Sequence[Tensor], lr: float, state: Optional[Adam] = None) -> Adam:
    """Functional form: apply one Adam update, creating the state on first use."""
    if state is None:
        state = Adam([(p.name or f"p{i}", p) for i, p in enumerate(params)])
    state.step(grads, lr)
    return state
