"""Training objectives.

Every norm and expectation is a mean over elements so the weights do not
depend on resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import LossWeights
from .tensor import ContractError, DimensionError, Function, Tensor, clip, no_grad, sigmoid
from .text import BLANK

PROB_EPS = 1e-7


class InfeasibleLabelError(ContractError):
    pass


def _log_prob(logits: Tensor) -> Tensor:
    return clip(sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS).log()


def _log_one_minus(logits: Tensor) -> Tensor:
    return (1.0 - clip(sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS)).log()


def d_loss(d1_real: Tensor, d1_fake: Tensor, d2_real: Tensor | None, d2_fake: Tensor | None, alpha: float) -> Tensor:
    """Discriminator objective (to be maximized); train on its negation.

    E[log D1(real) + log(1 - D1(fake))] + alpha * E[log D2(real) + log(1 - D2(fake))]
    """
    total = _log_prob(d1_real).mean() + _log_one_minus(d1_fake).mean()
    if alpha > 0 and d2_real is not None:
        total = total + alpha * (_log_prob(d2_real).mean() + _log_one_minus(d2_fake).mean())
    return total


def g_adv_loss(d1_fake: Tensor, d2_fake: Tensor | None, alpha: float) -> Tensor:
    """Non-saturating generator term: -E[log D1(G)] - alpha * E[log D2(G)]."""
    total = -_log_prob(d1_fake).mean()
    if alpha > 0 and d2_fake is not None:
        total = total - alpha * _log_prob(d2_fake).mean()
    return total


def _mean_abs(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return (a - b).abs().mean()


def l1_joint(g_lc: Tensor, i_ls: Tensor, g_c: Tensor | None, i_s: Tensor | None, beta: float) -> Tensor:
    total = _mean_abs(g_lc, i_ls)
    if beta > 0 and g_c is not None:
        total = total + beta * _mean_abs(g_c, i_s)
    return total


def perceptual_joint(g_lc: Tensor, i_ls: Tensor, g_c: Tensor | None, i_s: Tensor | None, beta: float, feat_net) -> Tensor:
    """Summed per-layer mean L1 between features of a frozen network."""

    def term(fake, real):
        with no_grad():
            real_feats = feat_net(real.detach())
        return sum((_mean_abs(f, r) for f, r in zip(feat_net(fake), real_feats)), start=Tensor(np.zeros((), fake.dtype)))

    total = term(g_lc, i_ls)
    if beta > 0 and g_c is not None:
        total = total + beta * term(g_c, i_s)
    return total


# -- CTC ------------------------------------------------------------------------
def _extend(label: Sequence[int], blank: int) -> np.ndarray:
    ext = np.full(2 * len(label) + 1, blank, dtype=np.int64)
    ext[1::2] = label
    return ext


def min_frames(label: Sequence[int]) -> int:
    repeats = sum(1 for a, b in zip(label, label[1:]) if a == b)
    return len(label) + repeats


def ctc_forward_backward(lp: np.ndarray, label: Sequence[int], blank: int = BLANK) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of ``label`` under per-frame log-probs ``lp`` [T, K].

    Returns the loss and its gradient with respect to ``lp``.
    """
    t_len, k = lp.shape
    if t_len < min_frames(label):
        raise InfeasibleLabelError(f"label of length {len(label)} needs {min_frames(label)} frames, have {t_len}")
    ext = _extend(label, blank)
    s_len = ext.size
    lp = lp.astype(np.float64)
    emit = lp[:, ext]  # [T, S]
    # skip transition s-2 -> s allowed onto a non-blank differing from ext[s-2]
    can_skip = np.zeros(s_len, dtype=bool)
    can_skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    neg_inf = -np.inf

    alpha = np.full((t_len, s_len), neg_inf)
    alpha[0, 0] = emit[0, 0]
    if s_len > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        skip = np.full(s_len, neg_inf)
        skip[2:] = np.where(can_skip[2:], prev[:-2], neg_inf)
        alpha[t] = np.logaddexp(acc, skip) + emit[t]

    # beta[t, s]: log-prob of emitting frames t+1.. given state s at frame t
    beta = np.full((t_len, s_len), neg_inf)
    beta[-1, -1] = 0.0
    if s_len > 1:
        beta[-1, -2] = 0.0
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        skip = np.full(s_len, neg_inf)
        skip[:-2] = np.where(can_skip[2:], nxt[2:], neg_inf)
        beta[t] = np.logaddexp(acc, skip)

    log_p = np.logaddexp(alpha[-1, -1], alpha[-1, -2]) if s_len > 1 else alpha[-1, -1]
    if not np.isfinite(log_p):
        raise InfeasibleLabelError("label has zero probability under the given log-probs")
    occupancy = np.exp(alpha + beta - log_p)  # [T, S]
    grad = np.zeros((t_len, k))
    for s in range(s_len):
        grad[:, ext[s]] -= occupancy[:, s]
    return float(-log_p), grad


class CTCLoss(Function):
    def forward(self, lp, labels, blank):
        t_len, n, k = lp.shape
        if len(labels) != n:
            raise DimensionError(f"{len(labels)} labels for a batch of {n}")
        losses = []
        grad = np.zeros(lp.shape)
        for i, label in enumerate(labels):
            loss, g = ctc_forward_backward(lp[:, i], label, blank)
            losses.append(loss)
            grad[:, i] = g
        self.grad = grad / n
        return np.asarray(np.mean(losses), dtype=lp.dtype)

    def backward(self, g):
        return ((self.grad * g).astype(g.dtype),)


def ctc_loss(logprobs: Tensor, labels: Sequence[Sequence[int]], blank: int = BLANK) -> Tensor:
    """Batch-mean CTC negative log-likelihood of [T, N, K] log-probabilities."""
    return CTCLoss.apply(logprobs, labels=[list(l) for l in labels], blank=blank)


@dataclass
class LossParts:
    g_adv: Tensor
    l1: Tensor
    per: Tensor
    rec: Tensor | None = None


def total_g_loss(parts: LossParts, weights: LossWeights) -> Tensor:
    total = parts.g_adv + weights.lambda1 * parts.l1 + weights.lambda2 * parts.per
    if parts.rec is not None and weights.lambda3 > 0:
        total = total + weights.lambda3 * parts.rec
    return total
