"""Parameterized layers: affine, LSTM, BiLSTM, multi-head attention, MLP, dropout.

Every layer comes in two flavors: a per-sequence reference form matching the
layer contracts, and a batched form used by the training loop.  The batched
forms produce identical values and gradients (see tests); they exist purely
so one big matmul replaces hundreds of small ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatch, Tensor


def glorot_uniform(rng: np.random.Generator, d_out: int, d_in: int) -> np.ndarray:
    a = math.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-a, a, size=(d_out, d_in))


# ---------------------------------------------------------------------------
# affine


@dataclass
class AffineParams:
    W: Tensor  # (d_out, d_in)
    b: Tensor  # (d_out,)

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_out(self) -> int:
        return self.W.shape[0]


def affine_init(rng: np.random.Generator, d_out: int, d_in: int) -> AffineParams:
    return AffineParams(
        W=Tensor(glorot_uniform(rng, d_out, d_in), requires_grad=True),
        b=Tensor(np.zeros(d_out), requires_grad=True),
    )


def affine_forward(p: AffineParams, x: Tensor) -> Tensor:
    """W x + b for a single vector; activation is the caller's business."""
    if x.ndim != 1 or x.shape[0] != p.d_in:
        raise ShapeMismatch(f"affine: input {x.shape}, expected ({p.d_in},)")
    return ad.add(ad.matmul(p.W, x), p.b)


def affine_forward_batch(p: AffineParams, X: Tensor) -> Tensor:
    """Row-wise W x + b for a (m, d_in) batch."""
    if X.ndim != 2 or X.shape[1] != p.d_in:
        raise ShapeMismatch(f"affine: input {X.shape}, expected (*, {p.d_in})")
    return ad.add_rowvec(ad.matmul(X, ad.transpose(p.W)), p.b)


# ---------------------------------------------------------------------------
# LSTM


@dataclass
class LstmParams:
    """Gate weights stored as (d_h, d_in + d_h); bias of the forget gate starts at 1."""

    W_i: Tensor
    W_f: Tensor
    W_o: Tensor
    W_c: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor
    b_c: Tensor

    @property
    def d_h(self) -> int:
        return self.W_i.shape[0]

    @property
    def d_in(self) -> int:
        return self.W_i.shape[1] - self.W_i.shape[0]


def lstm_init(rng: np.random.Generator, d_in: int, d_h: int) -> LstmParams:
    def w():
        return Tensor(glorot_uniform(rng, d_h, d_in + d_h), requires_grad=True)

    def b(fill=0.0):
        return Tensor(np.full(d_h, fill), requires_grad=True)

    return LstmParams(W_i=w(), W_f=w(), W_o=w(), W_c=w(),
                      b_i=b(), b_f=b(1.0), b_o=b(), b_c=b())


def lstm_cell(p: LstmParams, x: Tensor, h: Tensor, c: Tensor):
    """One recurrence step for a single vector input."""
    z = ad.concat_last_axis([x, h])
    i = ad.sigmoid(ad.add(ad.matmul(p.W_i, z), p.b_i))
    f = ad.sigmoid(ad.add(ad.matmul(p.W_f, z), p.b_f))
    o = ad.sigmoid(ad.add(ad.matmul(p.W_o, z), p.b_o))
    g = ad.tanh(ad.add(ad.matmul(p.W_c, z), p.b_c))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def lstm_forward(p: LstmParams, seq: Tensor, true_length: int) -> Tensor:
    """Final hidden state after running over the first ``true_length`` rows.

    Rows past ``true_length`` are padding and are never touched, so they
    cannot influence the output or any gradient.
    """
    if seq.ndim != 2 or seq.shape[1] != p.d_in:
        raise ShapeMismatch(f"lstm: sequence {seq.shape}, expected (*, {p.d_in})")
    l = seq.shape[0]
    if true_length < 1:
        raise ValueError("lstm: true_length must be >= 1")
    if true_length > l:
        raise ValueError(f"lstm: true_length {true_length} exceeds sequence length {l}")
    h = Tensor(np.zeros(p.d_h))
    c = Tensor(np.zeros(p.d_h))
    for t in range(true_length):
        x = ad.flatten(ad.slice_axis0(seq, t, t + 1))
        h, c = lstm_cell(p, x, h, c)
    return h


def _lstm_gate_batch(W: Tensor, b: Tensor, Z: Tensor) -> Tensor:
    return ad.add_rowvec(ad.matmul(Z, ad.transpose(W)), b)


def lstm_cell_batch(p: LstmParams, x: Tensor, h: Tensor, c: Tensor):
    """One recurrence step for a (batch, d_in) input."""
    z = ad.concat_last_axis([x, h])
    i = ad.sigmoid(_lstm_gate_batch(p.W_i, p.b_i, z))
    f = ad.sigmoid(_lstm_gate_batch(p.W_f, p.b_f, z))
    o = ad.sigmoid(_lstm_gate_batch(p.W_o, p.b_o, z))
    g = ad.tanh(_lstm_gate_batch(p.W_c, p.b_c, z))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def lstm_forward_batch(p: LstmParams, steps: list[Tensor], true_lengths: np.ndarray) -> Tensor:
    """Batched masked LSTM over per-step (batch, d_in) inputs.

    ``true_lengths[u]`` freezes the state of row ``u`` once its sequence
    ends, which makes the result identical to running each row separately
    without its padding.
    """
    if not steps:
        raise ValueError("lstm: empty step list")
    batch = steps[0].shape[0]
    true_lengths = np.asarray(true_lengths)
    if true_lengths.shape != (batch,):
        raise ShapeMismatch(f"lstm: true_lengths {true_lengths.shape} vs batch {batch}")
    if true_lengths.min() < 1 or true_lengths.max() > len(steps):
        raise ValueError("lstm: true_lengths out of [1, num_steps]")
    h = Tensor(np.zeros((batch, p.d_h)))
    c = Tensor(np.zeros((batch, p.d_h)))
    for t, x in enumerate(steps):
        h_new, c_new = lstm_cell_batch(p, x, h, c)
        alive = (true_lengths > t).astype(np.float64)
        if alive.all():
            h, c = h_new, c_new
        else:
            keep = Tensor(np.repeat(alive[:, None], p.d_h, axis=1))
            drop = Tensor(1.0 - keep.data)
            h = ad.add(ad.mul(h_new, keep), ad.mul(h, drop))
            c = ad.add(ad.mul(c_new, keep), ad.mul(c, drop))
    return h


def bilstm_forward(fwd: LstmParams, bwd: LstmParams, seq: Tensor) -> Tensor:
    """Per-step outputs of a bidirectional pass, shape (n, 2 * d_h)."""
    if seq.ndim != 2:
        raise ShapeMismatch(f"bilstm: sequence must be a matrix, got {seq.shape}")
    n = seq.shape[0]
    if n < 1:
        raise ValueError("bilstm: empty sequence")
    rows = [ad.flatten(ad.slice_axis0(seq, t, t + 1)) for t in range(n)]

    h = Tensor(np.zeros(fwd.d_h))
    c = Tensor(np.zeros(fwd.d_h))
    fwd_states = []
    for t in range(n):
        h, c = lstm_cell(fwd, rows[t], h, c)
        fwd_states.append(h)

    h = Tensor(np.zeros(bwd.d_h))
    c = Tensor(np.zeros(bwd.d_h))
    bwd_states = [None] * n
    for t in reversed(range(n)):
        h, c = lstm_cell(bwd, rows[t], h, c)
        bwd_states[t] = h

    return ad.stack_rows([ad.concat_last_axis([fwd_states[t], bwd_states[t]]) for t in range(n)])


def bilstm_forward_batch(fwd: LstmParams, bwd: LstmParams, steps: list[Tensor]) -> list[Tensor]:
    """Bidirectional pass over per-step (batch, d_in) inputs.

    Returns per-step (batch, 2 * d_h) outputs; all sequences in the batch
    share the same length by construction (conversation-grouped batches).
    """
    n = len(steps)
    if n < 1:
        raise ValueError("bilstm: empty sequence")
    batch = steps[0].shape[0]

    h = Tensor(np.zeros((batch, fwd.d_h)))
    c = Tensor(np.zeros((batch, fwd.d_h)))
    fwd_states = []
    for t in range(n):
        h, c = lstm_cell_batch(fwd, steps[t], h, c)
        fwd_states.append(h)

    h = Tensor(np.zeros((batch, bwd.d_h)))
    c = Tensor(np.zeros((batch, bwd.d_h)))
    bwd_states = [None] * n
    for t in reversed(range(n)):
        h, c = lstm_cell_batch(bwd, steps[t], h, c)
        bwd_states[t] = h

    return [ad.concat_last_axis([fwd_states[t], bwd_states[t]]) for t in range(n)]


# ---------------------------------------------------------------------------
# multi-head self-attention


@dataclass
class AttentionParams:
    W_q: list[Tensor]  # per head, (d_h, d_k)
    W_k: list[Tensor]
    W_v: list[Tensor]
    W_o: Tensor  # (t * d_k, d_h)

    @property
    def heads(self) -> int:
        return len(self.W_q)

    @property
    def d_k(self) -> int:
        return self.W_q[0].shape[1]

    @property
    def d_h(self) -> int:
        return self.W_q[0].shape[0]


def attention_init(rng: np.random.Generator, d_h: int, heads: int) -> AttentionParams:
    if d_h % heads != 0:
        raise ValueError(f"head count {heads} must divide d_h {d_h}")
    d_k = d_h // heads

    def m(rows, cols):
        a = math.sqrt(6.0 / (rows + cols))
        return Tensor(rng.uniform(-a, a, size=(rows, cols)), requires_grad=True)

    return AttentionParams(
        W_q=[m(d_h, d_k) for _ in range(heads)],
        W_k=[m(d_h, d_k) for _ in range(heads)],
        W_v=[m(d_h, d_k) for _ in range(heads)],
        W_o=m(heads * d_k, d_h),
    )


def multi_head_attention(p: AttentionParams, M: Tensor) -> Tensor:
    """Self-attention over the rows of M with Q = K = V = M.

    Scores are scaled by 1/sqrt(d_k); each attention row is a softmax, so it
    sums to one, and with no positional signal the whole map is equivariant
    under row permutations.
    """
    if M.ndim != 2 or M.shape[1] != p.d_h:
        raise ShapeMismatch(f"attention: input {M.shape}, expected (*, {p.d_h})")
    scale = 1.0 / math.sqrt(p.d_k)
    heads = []
    for Wq, Wk, Wv in zip(p.W_q, p.W_k, p.W_v):
        Q = ad.matmul(M, Wq)
        K = ad.matmul(M, Wk)
        V = ad.matmul(M, Wv)
        scores = ad.scalar_mul(ad.matmul(Q, ad.transpose(K)), scale)
        heads.append(ad.matmul(ad.softmax_rows(scores), V))
    return ad.matmul(ad.concat_last_axis(heads), p.W_o)


def multi_head_attention_batch(p: AttentionParams, M3: Tensor) -> Tensor:
    """Batched attention over (batch, m, d_h); the batch axis never mixes."""
    if M3.ndim != 3 or M3.shape[2] != p.d_h:
        raise ShapeMismatch(f"attention: input {M3.shape}, expected (*, *, {p.d_h})")
    scale = 1.0 / math.sqrt(p.d_k)
    heads = []
    for Wq, Wk, Wv in zip(p.W_q, p.W_k, p.W_v):
        Q = ad.matmul3(M3, Wq)
        K = ad.matmul3(M3, Wk)
        V = ad.matmul3(M3, Wv)
        scores = ad.scalar_mul(ad.bmm(Q, ad.transpose_last2(K)), scale)
        heads.append(ad.bmm(ad.softmax_rows(scores), V))
    return ad.matmul3(ad.concat_last_axis(heads), p.W_o)


def attention_weights(p: AttentionParams, M: Tensor) -> list[np.ndarray]:
    """Per-head attention matrices (values only), for inspection in tests."""
    scale = 1.0 / math.sqrt(p.d_k)
    out = []
    for Wq, Wk in zip(p.W_q, p.W_k):
        Q = ad.matmul(M, Wq)
        K = ad.matmul(M, Wk)
        out.append(ad.softmax_rows(ad.scalar_mul(ad.matmul(Q, ad.transpose(K)), scale)).data)
    return out


# ---------------------------------------------------------------------------
# MLP head


def mlp_forward(hidden: AffineParams, out: AffineParams, x: Tensor) -> Tensor:
    """out(relu(hidden(x))); softmax lives in the loss, not here."""
    return affine_forward(out, ad.relu(affine_forward(hidden, x)))


def mlp_forward_batch(hidden: AffineParams, out: AffineParams, X: Tensor) -> Tensor:
    return affine_forward_batch(out, ad.relu(affine_forward_batch(hidden, X)))


# ---------------------------------------------------------------------------
# dropout


def make_dropout_mask(rng: np.random.Generator, shape, p: float) -> np.ndarray:
    """Inverted-dropout mask: zeros with probability p, survivors scaled."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= p) / (1.0 - p)


def dropout_apply(x: Tensor, p: float, mode: str, rng: np.random.Generator) -> Tensor:
    """Train mode multiplies by a recorded inverted-dropout mask; eval is identity."""
    if mode not in ("train", "eval"):
        raise ValueError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if mode == "eval" or p == 0.0:
        return x
    return ad.mul(x, Tensor(make_dropout_mask(rng, x.shape, p)))
