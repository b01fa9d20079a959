import math

import numpy as np
import pytest

from bevnav.net import autograd as ag
from bevnav.net.autograd import Tensor

from oracles import bce


def numeric_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def check(op, *shapes, seed=0, weight=None):
    """Compare backward of sum(w * op(inputs)) with central differences."""
    rng = np.random.default_rng(seed)
    xs = [rng.normal(size=s) for s in shapes]
    out = op(*[Tensor(x) for x in xs]).data
    w = rng.normal(size=out.shape) if weight is None else weight

    def f():
        return float((op(*[Tensor(x) for x in xs]).data * w).sum())

    ts = [Tensor(x.copy(), requires_grad=True) for x in xs]
    ag.sum_(ag.mul(op(*ts), Tensor(w))).backward()
    for t, x in zip(ts, xs):
        num = numeric_grad(f, x)
        assert np.allclose(t.grad, num, rtol=1e-5, atol=1e-7), np.abs(t.grad - num).max()


def test_elementwise_and_broadcast():
    check(lambda a, b: ag.add(a, b), (3, 4), (4,))
    check(lambda a, b: ag.mul(a, b), (3, 1), (1, 5))
    check(ag.sigmoid, (5, 3))
    check(ag.silu, (5, 3))


def test_shape_ops():
    check(lambda a: ag.reshape(a, (6, 2)), (3, 4))
    check(lambda a: ag.transpose(a, (2, 0, 1)), (2, 3, 4))
    check(lambda a, b: ag.concat([a, b], axis=1), (2, 3), (2, 2))
    check(lambda a: ag.take_rows(a, np.array([0, 2, 2, 1])), (3, 4))
    check(lambda a: ag.upsample_nearest(a, 2), (1, 2, 3, 3))


def test_reductions_and_matmul():
    check(lambda a: ag.mean(a, axis=0), (4, 3))
    check(lambda a, b: ag.matmul(a, b), (3, 4), (4, 2))
    check(lambda a, b: ag.matmul(a, b), (3, 4), (4,))
    check(lambda a, b, c: ag.linear(a, b, c), (5, 3), (3, 2), (2,))
    check(lambda a: ag.softmax(a), (7,))


def test_scatter_mean():
    idx = np.array([0, 2, 2, 3, 0])
    check(lambda a: ag.scatter_mean(a, idx, 5), (5, 3))
    out = ag.scatter_mean(Tensor(np.arange(10.0).reshape(5, 2)), idx, 5).data
    assert np.array_equal(out[1], [0, 0]) and np.allclose(out[2], [3, 4])


@pytest.mark.parametrize("stride,pad,dil", [(1, 1, 1), (2, 1, 1), (1, 2, 2), (1, 0, 1)])
def test_conv2d(stride, pad, dil):
    check(lambda x, w, b: ag.conv2d(x, w, b, stride=stride, pad=pad, dilation=dil), (2, 3, 7, 7), (4, 3, 3, 3), (4,))


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(1)
    x, w = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3))
    got = ag.conv2d(Tensor(x), Tensor(w), pad=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 5, 5))
    for o in range(3):
        for i in range(5):
            for j in range(5):
                ref[0, o, i, j] = (xp[0, :, i:i + 3, j:j + 3] * w[o]).sum()
    assert np.allclose(got, ref)


def test_conv_transpose2d():
    check(lambda x, w, b: ag.conv_transpose2d(x, w, b, stride=2, pad=1), (1, 2, 3, 3), (2, 3, 4, 4), (3,))
    out = ag.conv_transpose2d(Tensor(np.ones((1, 1, 8, 8))), Tensor(np.ones((1, 1, 32, 32))), stride=16, pad=8)
    assert out.shape == (1, 1, 128, 128)


def test_cross_entropy():
    check(lambda a: ag.cross_entropy(a, 3), (8,), weight=np.array(1.0))
    assert ag.cross_entropy(Tensor(np.zeros(8)), 2).data == pytest.approx(math.log(8))


def test_bce_zero_logits_is_ln2():
    y = (np.random.default_rng(0).random((16, 16)) < 0.1).astype(float)
    loss = ag.bce_with_logits(Tensor(np.zeros((16, 16))), y)
    assert abs(float(loss.data) - math.log(2)) < 1e-9


def test_bce_matches_oracle_and_gradient():
    rng = np.random.default_rng(1)
    logits, y = rng.normal(0, 3, (6, 6)), (rng.random((6, 6)) < 0.3).astype(float)
    t = Tensor(logits.copy(), requires_grad=True)
    loss = ag.bce_with_logits(t, y)
    assert abs(float(loss.data) - bce(logits, y)) < 1e-12
    loss.backward()
    cellwise = t.grad * logits.size
    assert np.abs(cellwise - (1 / (1 + np.exp(-logits)) - y)).max() < 1e-6


def test_bce_is_stable_for_large_logits():
    loss = ag.bce_with_logits(Tensor(np.array([800.0, -800.0])), np.array([1.0, 0.0]))
    assert np.isfinite(loss.data) and float(loss.data) < 1e-12


def test_shared_node_accumulates():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = ag.mul(x, x)
    ag.add(y, y).backward()
    assert x.grad[0] == pytest.approx(8.0)
