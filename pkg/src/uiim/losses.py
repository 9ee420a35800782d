"""Cosine-guided auxiliary losses and the cross-entropy training objective.

The universality loss pulls the three per-feature universality vectors toward
a common direction; the individuality loss pushes the individuality vectors
apart from each other and from their universality partners.  Both are affine
images of cosine similarity, so each lands in [0, 2].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatch, Tensor

_THIRD = 1.0 / 3.0
_SIXTH = 1.0 / 6.0


@dataclass
class LossWeights:
    """Mixing weights: alpha for classification, beta/gamma for the auxiliaries."""

    alpha: float = 1.0
    beta: float = 0.7
    gamma: float = 0.7

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError("alpha must be positive; the classifier term has to contribute")
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be nonnegative")


@dataclass
class LossReport:
    """Per-batch loss components plus their weighted total."""

    loss_cls: float
    loss_u: float
    loss_i: float
    total: float

    @classmethod
    def from_components(cls, weights: LossWeights, loss_cls: float,
                        loss_u: float, loss_i: float) -> "LossReport":
        total = weights.alpha * loss_cls + weights.beta * loss_u + weights.gamma * loss_i
        return cls(loss_cls, loss_u, loss_i, total)


def _const(value: float) -> Tensor:
    return Tensor(np.float64(value))


def cosine(x: Tensor, y: Tensor) -> Tensor:
    """Cosine similarity of two vectors; norm guard keeps the origin safe."""
    if x.ndim != 1 or y.ndim != 1:
        raise ShapeMismatch("cosine expects two vectors")
    if x.shape != y.shape:
        raise ShapeMismatch(f"cosine: dimension mismatch {x.shape} vs {y.shape}")
    return ad.div(ad.dot(x, y), ad.mul(ad.l2_norm(x), ad.l2_norm(y)))


def loss_u(h_w: Tensor, h_p: Tensor, h_s: Tensor) -> Tensor:
    """Universality loss: mean of (1 - cosine) over the three feature pairs."""
    acc = cosine(h_w, h_p)
    acc = ad.add(acc, cosine(h_w, h_s))
    acc = ad.add(acc, cosine(h_p, h_s))
    return ad.scalar_mul(ad.sub(_const(3.0), acc), _THIRD)


def loss_i(pairs) -> Tensor:
    """Individuality loss over three (universality, individuality) pairs.

    `pairs` holds one pair per feature in (w, p, s) order; tuples or any
    indexable pair type work.  Six cosines enter: the three cross-feature
    individuality pairs, then each feature's universality/individuality pair.
    """
    if len(pairs) != 3:
        raise ValueError("expected one (universality, individuality) pair per feature")
    univ = [p[0] for p in pairs]
    indiv = [p[1] for p in pairs]
    acc = cosine(indiv[0], indiv[1])
    acc = ad.add(acc, cosine(indiv[0], indiv[2]))
    acc = ad.add(acc, cosine(indiv[1], indiv[2]))
    for u, i in zip(univ, indiv):
        acc = ad.add(acc, cosine(u, i))
    return ad.scalar_mul(ad.add(_const(6.0), acc), _SIXTH)


def loss_cls(logits: Tensor, gold, mask=None) -> Tensor:
    """Mean negative log-likelihood of the gold classes over unmasked rows."""
    if logits.ndim != 2:
        raise ShapeMismatch("logits must be n x |C|")
    n, num_classes = logits.shape
    gold = np.asarray(gold, dtype=np.int64)
    if gold.shape != (n,):
        raise ShapeMismatch(f"gold labels: expected shape ({n},), got {gold.shape}")
    if n and (gold.min() < 0 or gold.max() >= num_classes):
        raise ValueError("gold class index out of range")
    if mask is None:
        keep = np.ones(n, dtype=bool)
    else:
        keep = np.asarray(mask, dtype=bool)
        if keep.shape != (n,):
            raise ShapeMismatch(f"mask: expected shape ({n},), got {keep.shape}")
    kept = int(keep.sum())
    if kept == 0:
        raise ValueError("every utterance is masked out; nothing to average")
    # Shift each row by its max before exponentiating.  Log-softmax is
    # invariant to any per-row constant, so the detached shift changes neither
    # value nor gradient; it only keeps exp() in range.
    shift = logits.data.max(axis=1, keepdims=True)
    shifted = ad.sub(logits, Tensor(np.broadcast_to(shift, logits.shape).copy()))
    log_norm = ad.log(ad.row_sum(ad.exp(shifted)))
    nll = ad.sub(log_norm, ad.take_per_row(shifted, gold))
    row_weights = Tensor(keep.astype(np.float64) / kept)
    return ad.dot(nll, row_weights)


def total_loss(weights: LossWeights, cls_term: Tensor, u_term: Tensor,
               i_term: Tensor) -> Tensor:
    """Weighted sum alpha*cls + beta*u + gamma*i."""
    out = ad.scalar_mul(cls_term, weights.alpha)
    out = ad.add(out, ad.scalar_mul(u_term, weights.beta))
    return ad.add(out, ad.scalar_mul(i_term, weights.gamma))


# --- batched (row-wise) forms -------------------------------------------
#
# Training stacks the per-utterance hidden vectors into matrices; these
# compute the same losses averaged over rows in one graph.


def rows_cosine(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine similarity of two equal-shape matrices -> (n,)."""
    if a.ndim != 2 or a.shape != b.shape:
        raise ShapeMismatch(f"rows_cosine: {a.shape} vs {b.shape}")
    num = ad.row_sum(ad.mul(a, b))
    return ad.div(num, ad.mul(ad.rows_l2norm(a), ad.rows_l2norm(b)))


def loss_u_rows(h_w: Tensor, h_p: Tensor, h_s: Tensor) -> Tensor:
    """Batch mean of loss_u over rows of stacked universality vectors."""
    s = ad.add(rows_cosine(h_w, h_p),
               ad.add(rows_cosine(h_w, h_s), rows_cosine(h_p, h_s)))
    ones = Tensor(np.ones(s.shape[0]))
    return ad.mean(ad.sub(ones, ad.scalar_mul(s, _THIRD)))


def loss_i_rows(pairs) -> Tensor:
    """Batch mean of loss_i; pairs hold (universality, individuality) matrices."""
    if len(pairs) != 3:
        raise ValueError("expected one (universality, individuality) pair per feature")
    univ = [p[0] for p in pairs]
    indiv = [p[1] for p in pairs]
    s = rows_cosine(indiv[0], indiv[1])
    s = ad.add(s, rows_cosine(indiv[0], indiv[2]))
    s = ad.add(s, rows_cosine(indiv[1], indiv[2]))
    for u, i in zip(univ, indiv):
        s = ad.add(s, rows_cosine(u, i))
    ones = Tensor(np.ones(s.shape[0]))
    return ad.mean(ad.add(ones, ad.scalar_mul(s, _SIXTH)))
