"""The dialog-act model.

Each utterance's three feature matrices run through their own LSTM and a
tanh projection, giving one d_h vector per feature.  A shared encoder maps
every feature to its universality vector while per-feature encoders produce
individuality vectors; the six vectors are fused by multi-head self-attention
and projected back to d_h.  A conversation-level BiLSTM then contextualizes
the utterance vectors before the classifier MLP.

A "concat" variant skips the shared/private split and attention entirely,
concatenating the three encoded features instead; it is the ablation
baseline.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import autodiff as ad
from . import layers
from .autodiff import Tensor
from .features import (
    EmbeddingTable,
    PosInventory,
    StatisticsSchema,
    Vocab,
    embedding_init,
)
from .layers import AffineParams, AttentionParams, LstmParams, affine_init, lstm_init

CHECKPOINT_VERSION = 1
FEATURES = ("w", "p", "s")
VARIANTS = ("full", "concat")


@dataclass
class ModelConfig:
    num_classes: int
    d_w: int = 50
    d_p: int = 7
    d_s: int = 12
    d_h: int = 224
    lstm_hidden: int = 224
    heads: int = 4
    dropout: float = 0.3
    mlp_hidden: int = 224
    variant: str = "full"

    def __post_init__(self) -> None:
        for name in ("num_classes", "d_w", "d_p", "d_s", "d_h",
                     "lstm_hidden", "heads", "mlp_hidden"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.d_h % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide d_h ({self.d_h})")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


class HiddenPair(NamedTuple):
    universality: Tensor
    individuality: Tensor
    feature: str


@dataclass
class UiimParams:
    """Every learnable tensor of the network except the embedding table.

    enc_shared is one object referenced for all three features; the enc_w/p/s
    encoders are distinct.  The attention/fusion fields are None under the
    "concat" variant, which uses concat_proj instead.
    """

    lstm_w: LstmParams
    lstm_p: LstmParams
    lstm_s: LstmParams
    proj_w: AffineParams
    proj_p: AffineParams
    proj_s: AffineParams
    enc_shared: Optional[AffineParams]
    enc_w: Optional[AffineParams]
    enc_p: Optional[AffineParams]
    enc_s: Optional[AffineParams]
    attention: Optional[AttentionParams]
    fuse_proj: Optional[AffineParams]
    concat_proj: Optional[AffineParams]
    conv_fwd: LstmParams
    conv_bwd: LstmParams
    mlp_hidden: AffineParams
    mlp_out: AffineParams

    def lstm(self, f: str) -> LstmParams:
        return {"w": self.lstm_w, "p": self.lstm_p, "s": self.lstm_s}[f]

    def proj(self, f: str) -> AffineParams:
        return {"w": self.proj_w, "p": self.proj_p, "s": self.proj_s}[f]

    def enc(self, f: str) -> AffineParams:
        return {"w": self.enc_w, "p": self.enc_p, "s": self.enc_s}[f]


def _flatten(obj, prefix=""):
    if obj is None:
        return
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif isinstance(obj, list):
        for i, item in enumerate(obj):
            yield from _flatten(item, f"{prefix}{i}")
    else:
        for name, value in vars(obj).items():
            yield from _flatten(value, f"{prefix}.{name}" if prefix else name)


def named_parameters(params: UiimParams):
    """Stable (name, tensor) listing used by the optimizer and checkpoints."""
    return list(_flatten(params))


def init_params(config: ModelConfig, rng: np.random.Generator) -> UiimParams:
    c = config
    full = c.variant == "full"

    def enc():
        return affine_init(rng, c.d_h, c.d_h) if full else None

    return UiimParams(
        lstm_w=lstm_init(rng, c.d_w, c.lstm_hidden),
        lstm_p=lstm_init(rng, c.d_p, c.lstm_hidden),
        lstm_s=lstm_init(rng, c.d_s, c.lstm_hidden),
        proj_w=affine_init(rng, c.d_h, c.lstm_hidden),
        proj_p=affine_init(rng, c.d_h, c.lstm_hidden),
        proj_s=affine_init(rng, c.d_h, c.lstm_hidden),
        enc_shared=enc(),
        enc_w=enc(),
        enc_p=enc(),
        enc_s=enc(),
        attention=layers.attention_init(rng, c.d_h, c.heads) if full else None,
        fuse_proj=affine_init(rng, c.d_h, 6 * c.d_h) if full else None,
        concat_proj=None if full else affine_init(rng, c.d_h, 3 * c.d_h),
        conv_fwd=lstm_init(rng, c.d_h, c.lstm_hidden),
        conv_bwd=lstm_init(rng, c.d_h, c.lstm_hidden),
        mlp_hidden=affine_init(rng, c.mlp_hidden, 2 * c.lstm_hidden),
        mlp_out=affine_init(rng, c.num_classes, c.mlp_hidden),
    )


# ---------------------------------------------------------------------------
# reference (per-conversation) forward pass


def encode_feature(f: str, bundle, params: UiimParams, config: ModelConfig) -> Tensor:
    """LSTM over one feature's sequence, then tanh projection to d_h."""
    if f == "w":
        seq, true_len = bundle.u_w, bundle.length
    elif f == "p":
        seq, true_len = bundle.u_p, bundle.length
    elif f == "s":
        # the statistics vector runs as a one-step sequence
        seq, true_len = ad.reshape(bundle.u_s, (1, bundle.u_s.shape[0])), 1
    else:
        raise ValueError(f"unknown feature tag {f!r}")
    expected = {"w": config.d_w, "p": config.d_p, "s": config.d_s}[f]
    if seq.shape[1] != expected:
        raise ad.ShapeMismatch(
            f"feature {f!r}: got width {seq.shape[1]}, config says {expected}")
    h = layers.lstm_forward(params.lstm(f), seq, true_len)
    return ad.tanh(layers.affine_forward(params.proj(f), h))


def project_pair(u_f: Tensor, shared: AffineParams, private: AffineParams,
                 feature: str) -> HiddenPair:
    return HiddenPair(
        universality=ad.tanh(layers.affine_forward(shared, u_f)),
        individuality=ad.tanh(layers.affine_forward(private, u_f)),
        feature=feature,
    )


def fuse(pairs, attn: AttentionParams, proj: AffineParams) -> Tensor:
    """Self-attention over the six stacked hidden vectors, then projection."""
    rows = []
    for pair in pairs:
        rows.append(pair.universality)
        rows.append(pair.individuality)
    M = ad.stack_rows(rows)
    X = layers.multi_head_attention(attn, M)
    return ad.tanh(layers.affine_forward(proj, ad.flatten(X)))


def utterance_vector(bundle, params: UiimParams, config: ModelConfig):
    """One utterance -> (d_h vector, HiddenPairs or None for the concat variant)."""
    encoded = {f: encode_feature(f, bundle, params, config) for f in FEATURES}
    if config.variant == "concat":
        cat = ad.concat_last_axis([encoded[f] for f in FEATURES])
        return ad.tanh(layers.affine_forward(params.concat_proj, cat)), None
    pairs = [project_pair(encoded[f], params.enc_shared, params.enc(f), f)
             for f in FEATURES]
    return fuse(pairs, params.attention, params.fuse_proj), pairs


def conversation_forward(params: UiimParams, config: ModelConfig, bundles,
                         mode: str = "eval", rng=None):
    """Full forward pass over one conversation.

    Returns (logits n x |C|, per-utterance HiddenPair lists).  Train mode
    applies dropout before and after the conversation BiLSTM and requires an
    rng when dropout is active.
    """
    if not bundles:
        raise ValueError("empty conversation")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and config.dropout > 0 and rng is None:
        raise ValueError("train mode with dropout needs an rng")
    vs, all_pairs = [], []
    for bundle in bundles:
        v, pairs = utterance_vector(bundle, params, config)
        vs.append(v)
        all_pairs.append(pairs)
    V = layers.dropout_apply(ad.stack_rows(vs), config.dropout, mode, rng)
    H = layers.bilstm_forward(params.conv_fwd, params.conv_bwd, V)
    H = layers.dropout_apply(H, config.dropout, mode, rng)
    logits = layers.mlp_forward_batch(params.mlp_hidden, params.mlp_out, H)
    return logits, all_pairs


def predict(logits_row) -> int:
    """Argmax class index; ties go to the lowest index."""
    data = logits_row.data if isinstance(logits_row, Tensor) else np.asarray(logits_row)
    if data.ndim != 1 or data.size < 2:
        raise ValueError("predict expects one logits row over >= 2 classes")
    return int(np.argmax(data))


# ---------------------------------------------------------------------------
# batched forward pass
#
# Training groups conversations with the same utterance count n into batches
# of B conversations.  All N = B*n utterances run through the feature
# encoders together; row r = step*B + conv, so the conversation BiLSTM sees
# contiguous row blocks per step.


@dataclass
class BatchInputs:
    token_ids: np.ndarray   # (N, L) padded with PAD ids
    pos_ids: np.ndarray     # (N, L) indexes into the POS inventory
    stats: np.ndarray       # (N, d_s)
    lengths: np.ndarray     # (N,) true token counts, >= 1
    conversations: int      # B
    steps: int              # n

    def __post_init__(self) -> None:
        if self.conversations < 1 or self.steps < 1:
            raise ValueError("a batch needs at least one conversation and one step")
        n_rows = self.conversations * self.steps
        if self.token_ids.shape[0] != n_rows:
            raise ValueError(
                f"expected {n_rows} utterance rows, got {self.token_ids.shape[0]}")
        if self.token_ids.shape != self.pos_ids.shape:
            raise ValueError("token_ids and pos_ids must align")
        if self.stats.shape[0] != n_rows or self.lengths.shape != (n_rows,):
            raise ValueError("stats/lengths rows must match the utterance count")
        if self.lengths.min() < 1 or self.lengths.max() > self.token_ids.shape[1]:
            raise ValueError("utterance lengths out of range")


def _onehot_columns(ids: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((ids.shape[0], width))
    out[np.arange(ids.shape[0]), ids] = 1.0
    return out


def forward_batch(params: UiimParams, config: ModelConfig, table: EmbeddingTable,
                  batch: BatchInputs, mode: str = "eval", rng=None):
    """Batched forward pass; returns (logits N x |C|, HiddenPairs of matrices)."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and config.dropout > 0 and rng is None:
        raise ValueError("train mode with dropout needs an rng")
    n_utts, max_len = batch.token_ids.shape

    word_steps = [ad.gather_rows(table.weights, batch.token_ids[:, t])
                  for t in range(max_len)]
    h_w = layers.lstm_forward_batch(params.lstm_w, word_steps, batch.lengths)
    pos_steps = [Tensor(_onehot_columns(batch.pos_ids[:, t], config.d_p))
                 for t in range(max_len)]
    h_p = layers.lstm_forward_batch(params.lstm_p, pos_steps, batch.lengths)
    h_s = layers.lstm_forward_batch(params.lstm_s, [Tensor(batch.stats)],
                                    np.ones(n_utts, dtype=np.int64))

    encoded = {
        "w": ad.tanh(layers.affine_forward_batch(params.proj_w, h_w)),
        "p": ad.tanh(layers.affine_forward_batch(params.proj_p, h_p)),
        "s": ad.tanh(layers.affine_forward_batch(params.proj_s, h_s)),
    }

    if config.variant == "concat":
        cat = ad.concat_last_axis([encoded[f] for f in FEATURES])
        V = ad.tanh(layers.affine_forward_batch(params.concat_proj, cat))
        pairs = None
    else:
        pairs = [
            HiddenPair(
                universality=ad.tanh(layers.affine_forward_batch(params.enc_shared, encoded[f])),
                individuality=ad.tanh(layers.affine_forward_batch(params.enc(f), encoded[f])),
                feature=f,
            )
            for f in FEATURES
        ]
        rows = []
        for pair in pairs:
            rows.append(pair.universality)
            rows.append(pair.individuality)
        M3 = ad.stack_axis1(rows)                              # (N, 6, d_h)
        X3 = layers.multi_head_attention_batch(params.attention, M3)
        flat = ad.reshape(X3, (n_utts, 6 * config.d_h))        # row-major per utterance
        V = ad.tanh(layers.affine_forward_batch(params.fuse_proj, flat))

    V = layers.dropout_apply(V, config.dropout, mode, rng)
    B = batch.conversations
    step_in = [ad.slice_axis0(V, j * B, (j + 1) * B) for j in range(batch.steps)]
    step_out = layers.bilstm_forward_batch(params.conv_fwd, params.conv_bwd, step_in)
    H = layers.dropout_apply(ad.concat_rows(step_out), config.dropout, mode, rng)
    logits = layers.mlp_forward_batch(params.mlp_hidden, params.mlp_out, H)
    return logits, pairs


# ---------------------------------------------------------------------------
# model container and checkpoints


@dataclass
class Model:
    config: ModelConfig
    params: UiimParams
    table: EmbeddingTable
    vocab: Vocab
    pos_inventory: PosInventory

    def named_parameters(self):
        return [("embedding.weights", self.table.weights)] + named_parameters(self.params)


def init_model(config: ModelConfig, vocab: Vocab, pos_inventory: PosInventory,
               rng: np.random.Generator, table: EmbeddingTable = None) -> Model:
    if config.d_p != len(pos_inventory):
        raise ValueError(
            f"config.d_p={config.d_p} but the POS inventory has {len(pos_inventory)} tags")
    if config.d_s != StatisticsSchema().d_s:
        raise ValueError("config.d_s must match the statistics schema")
    if table is None:
        table = embedding_init(rng, len(vocab), config.d_w)
    elif table.weights.shape != (len(vocab), config.d_w):
        raise ValueError(
            f"embedding table {table.weights.shape} does not match "
            f"(|vocab|={len(vocab)}, d_w={config.d_w})")
    return Model(config=config, params=init_params(config, rng), table=table,
                 vocab=vocab, pos_inventory=pos_inventory)


def save_checkpoint(path, model: Model) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "vocab": model.vocab.index_to_token,
        "pos_tags": model.pos_inventory.tags,
    }
    arrays = {"param:" + name: t.data for name, t in model.named_parameters()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> Model:
    """Rebuild a model from disk, validating names and shapes."""
    with np.load(path, allow_pickle=False) as data:
        if "__meta__" not in data:
            raise ValueError(f"{path}: not a model checkpoint")
        meta = json.loads(str(data["__meta__"][()]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        config = ModelConfig(**meta["config"])
        vocab = Vocab()
        for token in meta["vocab"][2:]:
            vocab.add(token)
        if vocab.index_to_token != meta["vocab"]:
            raise ValueError(f"{path}: stored vocabulary is not in canonical form")
        inventory = PosInventory(meta["pos_tags"])
        if inventory.tags != meta["pos_tags"]:
            raise ValueError(f"{path}: stored POS inventory is not in canonical form")
        model = init_model(config, vocab, inventory, np.random.default_rng(0))
        expected = dict(model.named_parameters())
        stored = {k[len("param:"):] for k in data.files if k.startswith("param:")}
        missing = set(expected) - stored
        extra = stored - set(expected)
        if missing or extra:
            raise ValueError(
                f"{path}: parameter names do not match "
                f"(missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]})")
        for name, tensor in expected.items():
            arr = data["param:" + name]
            if arr.shape != tensor.shape:
                raise ValueError(
                    f"{path}: parameter {name} has shape {arr.shape}, "
                    f"expected {tensor.shape}")
            tensor.data = arr.astype(np.float64)
    return model
