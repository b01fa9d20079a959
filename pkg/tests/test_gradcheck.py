import numpy as np

from bevnav.net import autograd as ag
from bevnav.net.gradcheck import check_gradients, rel_error


def test_rel_error_floor():
    assert rel_error(1.0, 1.0) == 0.0
    assert rel_error(2.0, 1.0) == 0.5
    assert rel_error(1e-12, 0.0) == 1e-12 / 1e-8


def test_quick_check_passes():
    results = check_gradients(per_block=8)
    assert [r.block for r in results] == ["enc", "e3d", "nav", "gate", "phi", "dec", "head"]
    assert all(r.passed() for r in results), results


def test_check_catches_a_wrong_backward(monkeypatch):
    good = ag.sigmoid

    def bad_sigmoid(a):
        out = good(a)
        bw = out._backward
        if bw is not None:
            out._backward = lambda g: bw(1.01 * g)
        return out

    monkeypatch.setattr(ag, "sigmoid", bad_sigmoid)
    results = {r.block: r for r in check_gradients(per_block=8, blocks=("gate",))}
    assert not results["gate"].passed()
