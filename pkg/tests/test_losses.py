import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pansr.autodiff import Tensor, grad, gradcheck, numerical_grad, ops, precision
from pansr.autodiff.gradcheck import relative_error
from pansr.errors import ConfigError, DimensionError, DivergenceError, TapeError
from pansr.losses import (ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, Adam, LossConfig, adam_step, d_loss, g_loss,
                          pixel_loss, r1_penalty)
from pansr.network import PhaseState, build_discriminator, discriminator_forward


def zeros(n=4):
    return Tensor(np.zeros(n))


def test_d_loss_zero_logits(f64):
    assert abs(d_loss(zeros(), zeros(), gamma=0).item() - 2 * math.log(2)) < 1e-9


def test_g_loss_zero_logits(f64):
    assert abs(g_loss(zeros()).item() - math.log(2)) < 1e-9


def test_g_loss_monotone_to_zero(f64):
    vals = [g_loss(Tensor([z])).item() for z in (0, 1, 5, 20, 50)]
    assert all(b < a for a, b in zip(vals, vals[1:])) and vals[-1] < 1e-20


def test_g_loss_slope_at_zero(f64):
    z = Tensor([0.0], requires_grad=True)
    (g,) = grad(g_loss(z), [z])
    assert abs(g.item() + 0.5) < 1e-12


def quadratic_d(x):
    # D(x) = 0.5 * ||x||^2 per sample
    return ops.scale(ops.sum(ops.square(x), axis=1), 0.5)


@pytest.mark.parametrize("gamma", [0.5, 1.0, 5.0])
def test_r1_quadratic_toy(f64, gamma):
    x = Tensor([[1.0, 2.0]], requires_grad=True)
    dr = quadratic_d(x)
    loss, r1 = d_loss(dr, zeros(1), x, gamma=gamma, return_terms=True)
    assert r1.item() == 5.0
    base = d_loss(dr, zeros(1), gamma=0).item()
    assert loss.item() - base == pytest.approx(gamma * 5.0, abs=1e-12)


def test_r1_zero_for_constant_d(f64):
    x = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
    dr = ops.add(ops.scale(ops.sum(x, axis=1), 0.0), 1.5)
    assert r1_penalty(dr, x).item() == 0.0


def test_r1_needs_tape():
    x = Tensor(np.ones((2, 3)))
    with pytest.raises(TapeError):
        r1_penalty(quadratic_d(x), x)
    with pytest.raises(TapeError):
        d_loss(zeros(2), zeros(2), None, gamma=5.0)


def test_r1_gradient_wrt_conv_discriminator(f64):
    d = build_discriminator(8, 2, 4, seed=3)
    phase = PhaseState(8, 1.0, 0, "stabilize")
    imgs = np.random.default_rng(1).uniform(-1, 1, (2, 3, 8, 8))
    w = d.params["disc.8.conv.weight"]

    def penalty(_w):
        x = Tensor(imgs, requires_grad=True)
        return r1_penalty(discriminator_forward(d, x, phase), x)

    (g,) = grad(penalty(w), [w])
    num = numerical_grad(penalty, [w], 0, eps=1e-5)
    assert relative_error(g.data, num) < 1e-3


def test_r1_double_backprop_f32_and_f64():
    # first-order gradient of the penalty vs finite differences of the penalty
    for mode, tol, eps in (("f64", 1e-6, 1e-6), ("f32", 1e-3, 1e-2)):
        with precision(mode):
            d = build_discriminator(8, 2, 4, seed=4)
            phase = PhaseState(8, 1.0, 0, "stabilize")
            imgs = np.random.default_rng(2).uniform(-1, 1, (2, 3, 8, 8))
            w = d.params["disc.head.weight"]

            def penalty(_w):
                x = Tensor(imgs, requires_grad=True)
                return r1_penalty(discriminator_forward(d, x, phase), x)

            (g,) = grad(penalty(w), [w])
            assert relative_error(g.data, numerical_grad(penalty, [w], 0, eps=eps)) < tol, mode


def test_d_loss_permutation_invariant(f64):
    r = np.random.default_rng(5)
    a, b = r.standard_normal(6), r.standard_normal(6)
    p = r.permutation(6)
    assert d_loss(Tensor(a), Tensor(b), gamma=0).item() == pytest.approx(
        d_loss(Tensor(a[p]), Tensor(b[p]), gamma=0).item(), abs=1e-14)
    assert g_loss(Tensor(b)).item() == pytest.approx(g_loss(Tensor(b[p])).item(), abs=1e-14)


def test_pixel_loss_examples(f64):
    a = np.random.default_rng(0).standard_normal((2, 3, 4, 4))
    assert pixel_loss(a, a, "l1").item() == 0.0
    assert pixel_loss(a + 0.5, a, "l1").item() == pytest.approx(0.5, abs=1e-12)
    assert pixel_loss(a + 0.5, a, "l2").item() == pytest.approx(0.25, abs=1e-12)
    with pytest.raises(DimensionError):
        pixel_loss(a, a[:1], "l1")
    with pytest.raises(ConfigError):
        pixel_loss(a, a, "huber")


def test_pixel_loss_loop_oracle(f64):
    r = np.random.default_rng(9)
    a, b = r.standard_normal((2, 3, 3, 3)), r.standard_normal((2, 3, 3, 3))
    s1 = s2 = 0.0
    for u, v in zip(a.ravel(), b.ravel()):
        s1 += abs(u - v)
        s2 += (u - v) ** 2
    assert abs(pixel_loss(a, b, "l1").item() - s1 / a.size) < 1e-6
    assert abs(pixel_loss(a, b, "l2").item() - s2 / a.size) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=8), st.integers(0, 2 ** 31 - 1), st.sampled_from(["l1", "l2"]))
def test_pixel_loss_symmetric_nonnegative(vals, seed, mode):
    with precision("f64"):
        a = np.array(vals)
        b = a + np.random.default_rng(seed).standard_normal(a.shape)
        assert pixel_loss(a, b, mode).item() == pixel_loss(b, a, mode).item() >= 0
        assert pixel_loss(a, a, mode).item() == 0


def test_pixel_loss_gradcheck(f64):
    r = np.random.default_rng(2)
    a = Tensor(r.standard_normal((1, 3, 2, 2)), requires_grad=True)
    b = r.standard_normal((1, 3, 2, 2))
    gradcheck(lambda x: pixel_loss(x, b, "l2"), [a])
    gradcheck(lambda x: pixel_loss(x, b, "l1"), [a])


def test_loss_config_validation():
    with pytest.raises(ConfigError):
        LossConfig(gamma=-1)
    with pytest.raises(ConfigError):
        LossConfig(mode="wgan")


def test_adam_constants():
    assert (ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON) == (0.0, 0.99, 1e-8)


def test_adam_first_step(f64):
    w = Tensor([0.0], requires_grad=True)
    opt = Adam([("w", w)])
    opt.step([Tensor([1.0])], lr=0.1)
    assert w.data[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)


def test_adam_zero_grads(f64):
    w = Tensor([1.5, -2.0], requires_grad=True)
    adam_step([w], [Tensor([0.0, 0.0])], lr=0.1)
    np.testing.assert_array_equal(w.data, [1.5, -2.0])


def test_adam_quadratic(f64):
    w = Tensor([1.0], requires_grad=True)
    state = None
    for _ in range(100):
        (g,) = grad(ops.sum(ops.square(w)), [w])
        state = adam_step([w], [g], lr=0.05, state=state)
    assert abs(w.data[0]) < 0.1
    # scalar recursion oracle
    x, v = 1.0, 0.0
    for t in range(1, 101):
        gd = 2 * x
        v = 0.99 * v + 0.01 * gd * gd
        x -= 0.05 * gd / (math.sqrt(v / (1 - 0.99 ** t)) + 1e-8)
    assert w.data[0] == pytest.approx(x, abs=1e-12)


def test_adam_divergence_names_parameter():
    w = Tensor([1.0], requires_grad=True)
    opt = Adam([("disc.head.weight", w)])
    bad = Tensor.__new__(Tensor)
    bad.data = np.array([np.nan])
    with pytest.raises(DivergenceError, match="disc.head.weight"):
        opt.step([bad], 0.1)


def test_adam_beta1_zero_ignores_history_order(f64):
    # beta1 = 0: v depends only on squared gradients, m only on the latest one
    gs = [1.0, -2.0, 3.0, -1.0]
    w1, w2 = Tensor([0.0], requires_grad=True), Tensor([0.0], requires_grad=True)
    o1, o2 = Adam([("w", w1)]), Adam([("w", w2)])
    for g in gs:
        o1.step([Tensor([g])], 0.01)
        o2.step([Tensor([-g])], 0.01)
    assert o1.v["w"].tobytes() == o2.v["w"].tobytes()
    assert np.all(o1.m["w"] == [gs[-1]]) and np.all(o2.m["w"] == [-gs[-1]])
