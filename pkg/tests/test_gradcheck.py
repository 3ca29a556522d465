import numpy as np
import pytest

from glaste import gradcheck
from glaste.tensor import Tanh


def test_filter_selects_ctc_only():
    assert gradcheck.matching("ctc") == ["loss.ctc"]
    assert set(gradcheck.matching("loss.*")) == {n for n in gradcheck.REGISTRY if n.startswith("loss.")}
    assert gradcheck.matching("") == list(gradcheck.REGISTRY)


def test_unknown_pattern():
    with pytest.raises(KeyError):
        gradcheck.run("no-such-op")


def test_registry_covers_required_ops():
    names = set(gradcheck.REGISTRY)
    for required in ("conv2d", "linear", "adain", "spectral.ffc_block", "sampling.bilinear", "sampling.affine_grid",
                     "loss.d_loss", "loss.g_adv", "loss.l1", "loss.perceptual", "loss.ctc"):
        assert required in names


def test_ctc_check_passes():
    (res,) = gradcheck.run("ctc", seeds=3)
    assert res.passed and res.max_rel_err < gradcheck.TOL


def test_rel_err_floor():
    assert gradcheck.rel_err(1.0, 1.0) == 0.0
    assert gradcheck.rel_err(1e-9, 0.0) == pytest.approx(1e-3)


def test_corrupted_backward_is_caught(monkeypatch):
    original = Tanh.backward

    def broken(self, g):
        (gx,) = original(self, g)
        return (gx * 1.01,)

    monkeypatch.setattr(Tanh, "backward", broken)
    (res,) = gradcheck.run("tensor.elementwise", seeds=2)
    assert not res.passed
