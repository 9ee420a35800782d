"""Utterance featurization: word embeddings, POS one-hots, surface statistics.

Every utterance becomes a triple (U_w, U_p, U_s): embedded tokens, one-hot
part-of-speech rows, and a fixed 12-dimensional statistics vector built from
punctuation presence flags plus a one-hot utterance-length bucket.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1

PUNCTUATION_MARKS = (".", ",", "?", "!", "-", "...", '"', ";")
# Inclusive (lo, hi) token-count intervals; None means unbounded above.
LENGTH_BUCKETS = ((0, 4), (5, 9), (10, 14), (15, None))


class Vocab:
    """Token-to-id map with PAD=0 and UNK=1; lookups are case-folded."""

    def __init__(self, tokens=()):
        self.index_to_token = [PAD, UNK]
        self.token_to_index = {PAD: PAD_ID, UNK: UNK_ID}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        tok = token.lower()
        idx = self.token_to_index.get(tok)
        if idx is None:
            idx = len(self.index_to_token)
            self.token_to_index[tok] = idx
            self.index_to_token.append(tok)
        return idx

    def id_of(self, token: str) -> int:
        return self.token_to_index.get(token.lower(), UNK_ID)

    def __len__(self) -> int:
        return len(self.index_to_token)

    def __contains__(self, token: str) -> bool:
        return token.lower() in self.token_to_index


class PosInventory:
    """Ordered POS tag list; unknown tags all land on a dedicated UNK tag."""

    UNK_TAG = "<unk-pos>"

    def __init__(self, tags):
        self.tags = []
        self._index = {}
        for tag in tags:
            if tag not in self._index:
                self._index[tag] = len(self.tags)
                self.tags.append(tag)
        if self.UNK_TAG not in self._index:
            self._index[self.UNK_TAG] = len(self.tags)
            self.tags.append(self.UNK_TAG)
        self.unk_index = self._index[self.UNK_TAG]

    def index_of(self, tag: str) -> int:
        return self._index.get(tag, self.unk_index)

    def __len__(self) -> int:
        return len(self.tags)


@dataclass(frozen=True)
class StatisticsSchema:
    punctuation: tuple = PUNCTUATION_MARKS
    buckets: tuple = LENGTH_BUCKETS

    @property
    def d_s(self) -> int:
        return len(self.punctuation) + len(self.buckets)

    def bucket_of(self, length: int) -> int:
        for k, (lo, hi) in enumerate(self.buckets):
            if length >= lo and (hi is None or length <= hi):
                return k
        raise ValueError(f"no bucket for length {length}")


@dataclass
class EmbeddingTable:
    """|Vocab| x d_w learnable rows; row PAD_ID stays pinned at zero."""

    weights: Tensor

    @property
    def d_w(self) -> int:
        return self.weights.shape[1]

    def zero_pad_row(self) -> None:
        self.weights.data[PAD_ID] = 0.0
        if self.weights.grad is not None:
            self.weights.grad[PAD_ID] = 0.0


def embedding_init(rng: np.random.Generator, vocab_size: int, d_w: int) -> EmbeddingTable:
    if d_w <= 0 or vocab_size < 2:
        raise ValueError("embedding table needs d_w > 0 and room for PAD/UNK")
    data = rng.uniform(-0.1, 0.1, size=(vocab_size, d_w))
    data[PAD_ID] = 0.0
    return EmbeddingTable(Tensor(data, requires_grad=True))


def load_pretrained_embeddings(path, vocab: Vocab, rng=None) -> EmbeddingTable:
    """Read whitespace-separated "token v1 ... v_d" lines into a table.

    A leading "count dim" header line is skipped if present.  In-vocab tokens
    missing from the file get uniform(-0.1, 0.1) rows; the PAD row is zero.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    by_token = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue  # header
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise ValueError(f"{path}:{lineno}: no vector components")
            elif len(values) != dim:
                raise ValueError(
                    f"{path}:{lineno}: expected {dim} components, got {len(values)}")
            folded = token.lower()
            if folded not in by_token:
                by_token[folded] = np.array(values, dtype=np.float64)
    if dim is None:
        raise ValueError(f"{path}: no vectors found")
    data = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    for tok, idx in vocab.token_to_index.items():
        if tok in by_token:
            data[idx] = by_token[tok]
    data[PAD_ID] = 0.0
    return EmbeddingTable(Tensor(data, requires_grad=True))


def embed_words(table: EmbeddingTable, token_ids) -> Tensor:
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("token_ids must be a nonempty id sequence")
    n = table.weights.shape[0]
    if ids.min() < 0 or ids.max() >= n:
        raise IndexError(f"token id out of range for table of {n} rows")
    return ad.gather_rows(table.weights, ids)


def pos_onehot(inv: PosInventory, pos_tags) -> Tensor:
    rows = np.zeros((len(pos_tags), len(inv)))
    for i, tag in enumerate(pos_tags):
        rows[i, inv.index_of(tag)] = 1.0
    return Tensor(rows)


def statistics_vector(schema: StatisticsSchema, tokens) -> Tensor:
    """Punctuation presence flags followed by a one-hot length bucket."""
    out = np.zeros(schema.d_s)
    for k, mark in enumerate(schema.punctuation):
        if any(mark in tok for tok in tokens):
            out[k] = 1.0
    out[len(schema.punctuation) + schema.bucket_of(len(tokens))] = 1.0
    return Tensor(out)


@dataclass
class FeatureBundle:
    u_w: Tensor  # l x d_w
    u_p: Tensor  # l x d_p
    u_s: Tensor  # d_s

    @property
    def length(self) -> int:
        return self.u_w.shape[0]


def build_feature_bundle(utterance, vocab: Vocab, table: EmbeddingTable,
                         inv: PosInventory, schema: StatisticsSchema) -> FeatureBundle:
    """Featurize one utterance (anything exposing .tokens and .pos).

    Empty utterances become a single PAD token with an UNK-POS row; their
    statistics still describe length zero.
    """
    tokens = list(utterance.tokens)
    pos_tags = list(utterance.pos)
    if len(tokens) != len(pos_tags):
        raise ValueError(
            f"utterance has {len(tokens)} tokens but {len(pos_tags)} POS tags")
    u_s = statistics_vector(schema, tokens)
    if not tokens:
        u_w = embed_words(table, [PAD_ID])
        u_p = pos_onehot(inv, [inv.UNK_TAG])
    else:
        u_w = embed_words(table, [vocab.id_of(t) for t in tokens])
        u_p = pos_onehot(inv, pos_tags)
    return FeatureBundle(u_w=u_w, u_p=u_p, u_s=u_s)
