"""The R1 penalty needs a gradient of a gradient.

Toy discriminator D(x) = 0.5 * |x|^2 has grad_x D = x, so the penalty at
x = [1, 2] is 1 + 4 = 5. We then differentiate the penalty itself through
a small conv discriminator and compare against finite differences.
"""

import numpy as np

from pansr.autodiff import Tensor, grad, numerical_grad, ops, precision
from pansr.autodiff.gradcheck import relative_error
from pansr.losses import r1_penalty
from pansr.network import PhaseState, build_discriminator, discriminator_forward

with precision("f64"):
    x = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    d = ops.scale(ops.sum(ops.square(x), axis=1), 0.5)
    print("toy R1:", r1_penalty(d, x).item())

    disc = build_discriminator(8, 2, 4, seed=0)
    phase = PhaseState(8, 1.0, 0, "stabilize")
    imgs = np.random.default_rng(0).uniform(-1, 1, (2, 3, 8, 8))
    w = disc.params["disc.head.weight"]

    def penalty(_w):
        xi = Tensor(imgs, requires_grad=True)
        return r1_penalty(discriminator_forward(disc, xi, phase), xi)

    (g,) = grad(penalty(w), [w])
    fd = numerical_grad(penalty, [w], 0)
    print("d(R1)/dW vs finite differences, relative error:", relative_error(g.data, fd))
