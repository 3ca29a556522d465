import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glaste.config import LossWeights, NetConfig
from glaste.functional import log_softmax
from glaste.gradcheck import Case, check_case, t64
from glaste.losses import (
    InfeasibleLabelError, LossParts, ctc_forward_backward, ctc_loss, d_loss, g_adv_loss, l1_joint,
    min_frames, perceptual_joint, total_g_loss,
)
from glaste.networks import FeatureNet
from glaste.tensor import DimensionError, Tensor
from glaste.text import collapse


def logits(v, shape=(2, 1, 3, 3)):
    return Tensor(np.full(shape, v), requires_grad=True, dtype=np.float64)


def test_gan_losses_at_half():
    half = logits(0.0)
    assert d_loss(half, half, half, half, 1.0).item() == pytest.approx(4 * math.log(0.5), abs=1e-4)
    assert d_loss(half, half, half, half, 1.0).item() == pytest.approx(-2.7726, abs=1e-4)
    assert g_adv_loss(half, half, 1.0).item() == pytest.approx(1.3863, abs=1e-4)


def test_alpha_zero_drops_local_term(rng):
    a, b, c, d = (Tensor(rng.normal(size=(2, 1, 3, 3))) for _ in range(4))
    assert d_loss(a, b, c, d, 0.0).item() == pytest.approx(d_loss(a, b, None, None, 1.0).item())
    assert g_adv_loss(b, d, 0.0).item() == pytest.approx(g_adv_loss(b, None, 1.0).item())


def test_alpha_scales_local_term_linearly(rng):
    g, l = Tensor(rng.normal(size=(2, 1, 3, 3))), Tensor(rng.normal(size=(2, 1, 3, 3)))
    base = g_adv_loss(g, None, 1.0).item()
    one, two = g_adv_loss(g, l, 1.0).item() - base, g_adv_loss(g, l, 2.0).item() - base
    assert two == pytest.approx(2 * one)


def test_generator_gradient_raises_fake_score():
    x = logits(0.3)
    g_adv_loss(x, None, 1.0).backward()
    assert np.all(x.grad < 0)
    eps = 1e-6
    up = g_adv_loss(logits(0.3 + eps), None, 1.0).item()
    down = g_adv_loss(logits(0.3 - eps), None, 1.0).item()
    assert (up - down) / (2 * eps) < 0


def test_default_weights():
    w = LossWeights()
    assert (w.alpha, w.beta, w.lambda1, w.lambda2, w.lambda3) == (1.0, 10.0, 10.0, 1.0, 0.1)


def test_l1_examples(rng):
    x = Tensor(rng.normal(size=(2, 3, 4, 4)))
    p = Tensor(rng.normal(size=(2, 3, 2, 6)))
    assert l1_joint(x, x, p, p, 10.0).item() == 0.0
    assert l1_joint(x + 0.1, x, p, p, 10.0).item() == pytest.approx(0.1, abs=1e-6)
    assert l1_joint(x, x, p + 0.1, p, 10.0).item() == pytest.approx(1.0, abs=1e-5)
    with pytest.raises(DimensionError):
        l1_joint(x, p, None, None, 1.0)


@pytest.fixture(scope="module")
def feat_net():
    return FeatureNet(NetConfig())


def test_perceptual_identity_and_symmetry(feat_net, rng):
    x, y = (Tensor(rng.uniform(-1, 1, size=(1, 3, 32, 32)).astype(np.float32)) for _ in range(2))
    p, q = (Tensor(rng.uniform(-1, 1, size=(1, 3, 32, 96)).astype(np.float32)) for _ in range(2))
    assert perceptual_joint(x, x, p, p, 10.0, feat_net).item() == 0.0
    fwd = perceptual_joint(x, y, p, q, 10.0, feat_net).item()
    rev = perceptual_joint(y, x, q, p, 10.0, feat_net).item()
    assert fwd == pytest.approx(rev, rel=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_perceptual_monotone_under_blending(feat_net, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(1, 3, 32, 32)).astype(np.float32)
    n = rng.uniform(-1, 1, size=x.shape).astype(np.float32)
    vals = [perceptual_joint(Tensor((1 - t) * x + t * n), Tensor(x), None, None, 0.0, feat_net).item() for t in (0.0, 0.5, 1.0)]
    assert vals[0] <= vals[1] <= vals[2]


def test_feature_net_is_frozen_and_seeded(feat_net):
    assert all(not p.requires_grad for p in feat_net.parameters())
    again = FeatureNet(NetConfig())
    for a, b in zip(feat_net.parameters(), again.parameters()):
        np.testing.assert_array_equal(a.data, b.data)


# -- CTC ---------------------------------------------------------------------------
def brute_force_ctc(lp, label, blank):
    """-log of the summed probability of every frame path collapsing to ``label``."""
    t_len, k = lp.shape
    total = 0.0
    for path in itertools.product(range(k), repeat=t_len):
        if collapse(path, blank) == list(label):
            total += math.exp(sum(lp[t, s] for t, s in enumerate(path)))
    return -math.log(total)


def test_ctc_single_frame():
    lp = np.log(np.array([[0.6, 0.3, 0.1]]))
    loss, _ = ctc_forward_backward(lp, [0], blank=2)
    assert loss == pytest.approx(-math.log(0.6))
    assert loss == pytest.approx(0.5108, abs=1e-4)


def test_ctc_two_frames_uniform():
    lp = np.log(np.full((2, 3), 1 / 3))
    loss, _ = ctc_forward_backward(lp, [0], blank=2)
    assert loss == pytest.approx(1.0986, abs=1e-4)


def test_ctc_matches_path_enumeration_200_instances():
    rng = np.random.default_rng(99)
    for _ in range(200):
        k = int(rng.integers(2, 5))  # alphabet size including blank
        blank = k - 1
        label_len = int(rng.integers(1, 4)) if k > 1 else 1
        label = list(rng.integers(0, blank, size=label_len)) if blank > 0 else []
        t_len = int(rng.integers(max(1, min_frames(label)), 7))
        lp = log_softmax(Tensor(rng.normal(scale=2.0, size=(t_len, k)), dtype=np.float64), axis=1).data
        loss, _ = ctc_forward_backward(lp, label, blank)
        assert abs(loss - brute_force_ctc(lp, label, blank)) < 1e-6


@pytest.mark.parametrize("seed", range(4))
def test_ctc_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = t64(rng, 5, 2, 4)
    labels = [[0, 1], [2]]
    case = Case([x], lambda x: ctc_loss(log_softmax(x, axis=2), labels, blank=3))
    assert check_case(case, rng) < 1e-4


def test_ctc_infeasible_label():
    lp = np.log(np.full((2, 3), 1 / 3))
    with pytest.raises(InfeasibleLabelError):
        ctc_forward_backward(lp, [0, 0], blank=2)  # repeat needs a blank between
    assert min_frames([0, 0]) == 3


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_ctc_nonnegative(seed):
    rng = np.random.default_rng(seed)
    lp = log_softmax(Tensor(rng.normal(size=(6, 4)), dtype=np.float64), axis=1).data
    loss, _ = ctc_forward_backward(lp, list(rng.integers(0, 3, size=2)), blank=3)
    assert loss >= 0


def test_ctc_zero_for_certain_path():
    lp = np.log(np.clip(np.eye(3)[[0, 2, 1]], 1e-300, 1))
    loss, _ = ctc_forward_backward(lp, [0, 1], blank=2)
    assert loss == pytest.approx(0.0, abs=1e-9)


# -- total -------------------------------------------------------------------------
def test_total_loss_weights():
    parts = LossParts(Tensor(1.0), Tensor(2.0), Tensor(3.0), Tensor(4.0))
    assert total_g_loss(parts, LossWeights()).item() == pytest.approx(1 + 20 + 3 + 0.4)
    zero = LossWeights(lambda1=0, lambda2=0, lambda3=0)
    assert total_g_loss(parts, zero).item() == pytest.approx(1.0)
    doubled = LossWeights(lambda1=20.0)
    assert total_g_loss(parts, doubled).item() - total_g_loss(parts, LossWeights()).item() == pytest.approx(20.0)
