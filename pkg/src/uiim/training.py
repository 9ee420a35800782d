"""Deterministic training: conversation-grouped batching, Adam, early stopping.

Mini-batches only ever mix conversations with the same utterance count, so
every loss aggregates over a dense rectangle of utterances; token padding is
handled inside the recurrent layers and never leaks into losses.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tensor, backward
from .features import (
    PAD_ID,
    PosInventory,
    StatisticsSchema,
    Vocab,
    statistics_vector,
)
from .losses import LossReport, LossWeights, loss_cls, loss_i_rows, loss_u_rows, total_loss
from .model import BatchInputs, Model, forward_batch, save_checkpoint

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

METRICS_HEADER = "epoch,split,loss_cls,loss_u,loss_i,total,accuracy"


@dataclass
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-4
    dropout: float = 0.3
    weights: LossWeights = field(default_factory=LossWeights)
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be nonnegative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def config_hash(model_config, train_config: TrainConfig) -> str:
    blob = json.dumps({"model": asdict(model_config), "train": asdict(train_config)},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# featurization


@dataclass
class FeaturizedUtterance:
    token_ids: np.ndarray
    pos_ids: np.ndarray
    stats: np.ndarray
    label: int


@dataclass
class FeaturizedConversation:
    id: str
    utterances: list


def build_vocabulary(conversations) -> Vocab:
    vocab = Vocab()
    for conv in conversations:
        for u in conv.utterances:
            for tok in u.tokens:
                vocab.add(tok)
    return vocab


def build_pos_inventory(conversations) -> PosInventory:
    tags = []
    seen = set()
    for conv in conversations:
        for u in conv.utterances:
            for tag in u.pos:
                if tag not in seen:
                    seen.add(tag)
                    tags.append(tag)
    return PosInventory(tags)


def featurize_conversations(conversations, vocab: Vocab, inventory: PosInventory,
                            schema: StatisticsSchema, labels):
    """Map raw conversations to id arrays; empty utterances become one PAD."""
    out = []
    for conv in conversations:
        utts = []
        for u in conv.utterances:
            stats = statistics_vector(schema, u.tokens).data
            if u.tokens:
                ids = np.array([vocab.id_of(t) for t in u.tokens], dtype=np.int64)
                pos = np.array([inventory.index_of(t) for t in u.pos], dtype=np.int64)
            else:
                ids = np.array([PAD_ID], dtype=np.int64)
                pos = np.array([inventory.unk_index], dtype=np.int64)
            utts.append(FeaturizedUtterance(token_ids=ids, pos_ids=pos, stats=stats,
                                            label=labels.index_of(u.label)))
        out.append(FeaturizedConversation(id=conv.id, utterances=utts))
    return out


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    inputs: BatchInputs
    gold: np.ndarray           # (N,) class indices, rows ordered step*B + conv
    conversation_ids: list


def _batch_from_group(group) -> Batch:
    B = len(group)
    n = len(group[0].utterances)
    rows = [group[b].utterances[j] for j in range(n) for b in range(B)]
    max_len = max(len(r.token_ids) for r in rows)
    N = len(rows)
    token_ids = np.full((N, max_len), PAD_ID, dtype=np.int64)
    pos_ids = np.zeros((N, max_len), dtype=np.int64)
    stats = np.zeros((N, rows[0].stats.shape[0]))
    lengths = np.zeros(N, dtype=np.int64)
    gold = np.zeros(N, dtype=np.int64)
    for r, row in enumerate(rows):
        l = len(row.token_ids)
        token_ids[r, :l] = row.token_ids
        pos_ids[r, :l] = row.pos_ids
        stats[r] = row.stats
        lengths[r] = l
        gold[r] = row.label
    inputs = BatchInputs(token_ids=token_ids, pos_ids=pos_ids, stats=stats,
                         lengths=lengths, conversations=B, steps=n)
    return Batch(inputs=inputs, gold=gold, conversation_ids=[c.id for c in group])


def make_batches(split, batch_size: int, seed: int):
    """Bucket by utterance count, shuffle, chunk, and shuffle batch order."""
    if not split:
        raise ValueError("cannot batch an empty split")
    rng = np.random.default_rng(seed)
    buckets: dict[int, list] = {}
    for conv in split:
        buckets.setdefault(len(conv.utterances), []).append(conv)
    batches = []
    for n in sorted(buckets):
        group = buckets[n]
        order = rng.permutation(len(group))
        shuffled = [group[k] for k in order]
        for start in range(0, len(shuffled), batch_size):
            batches.append(_batch_from_group(shuffled[start:start + batch_size]))
    order = rng.permutation(len(batches))
    return [batches[k] for k in order]


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0


def adam_init(named_params) -> AdamState:
    return AdamState(m={name: np.zeros_like(t.data) for name, t in named_params},
                     v={name: np.zeros_like(t.data) for name, t in named_params})


def adam_step(state: AdamState, named_params, lr: float) -> None:
    state.step += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.step
    bc2 = 1.0 - ADAM_BETA2 ** state.step
    for name, p in named_params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * np.square(g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


# ---------------------------------------------------------------------------
# train / evaluate


def _zero_loss() -> Tensor:
    return Tensor(np.float64(0.0))


def _batch_losses(model: Model, batch: Batch, weights: LossWeights, mode: str, rng):
    logits, pairs = forward_batch(model.params, model.config, model.table,
                                  batch.inputs, mode=mode, rng=rng)
    cls = loss_cls(logits, batch.gold)
    if pairs is None:
        u_term, i_term = _zero_loss(), _zero_loss()
    else:
        univ = [p.universality for p in pairs]
        u_term = loss_u_rows(univ[0], univ[1], univ[2])
        i_term = loss_i_rows([(p.universality, p.individuality) for p in pairs])
    total = total_loss(weights, cls, u_term, i_term)
    return logits, cls, u_term, i_term, total


@dataclass
class EpochStats:
    report: LossReport
    accuracy: float
    utterances: int


class _Aggregator:
    """Utterance-weighted running means of the loss components and accuracy."""

    def __init__(self):
        self.sums = np.zeros(4)
        self.correct = 0
        self.count = 0

    def add(self, n_utts, cls, u, i, total, logits, gold):
        self.sums += n_utts * np.array([cls, u, i, total])
        self.correct += int((np.argmax(logits, axis=1) == gold).sum())
        self.count += n_utts

    def stats(self) -> EpochStats:
        means = self.sums / self.count
        report = LossReport(loss_cls=means[0], loss_u=means[1], loss_i=means[2],
                            total=means[3])
        return EpochStats(report=report, accuracy=self.correct / self.count,
                          utterances=self.count)


def train_epoch(model: Model, opt: AdamState, batches, config: TrainConfig,
                rng) -> EpochStats:
    named = model.named_parameters()
    agg = _Aggregator()
    for k, batch in enumerate(batches):
        for _, p in named:
            p.zero_grad()
        logits, cls, u_term, i_term, total = _batch_losses(
            model, batch, config.weights, "train", rng)
        values = (cls.item(), u_term.item(), i_term.item(), total.item())
        if not all(np.isfinite(values)):
            raise RuntimeError(
                f"non-finite loss at batch {k}: cls={values[0]}, "
                f"u={values[1]}, i={values[2]}, total={values[3]}")
        backward(total)
        model.table.zero_pad_row()  # PAD embedding stays frozen at zero
        adam_step(opt, named, config.learning_rate)
        agg.add(len(batch.gold), *values, logits.data, batch.gold)
    return agg.stats()


@dataclass
class EvalReport:
    accuracy: float
    report: LossReport
    per_class: dict
    utterances: int


def evaluate(model: Model, split, weights: LossWeights, labels,
             batch_size: int = 64) -> EvalReport:
    """Accuracy, per-class counts and mean losses over a featurized split."""
    if not split:
        raise ValueError("cannot evaluate an empty split")
    per_class = {lab: {"gold": 0, "correct": 0, "predicted": 0}
                 for lab in labels.labels}
    agg = _Aggregator()
    for batch in make_batches(split, batch_size, seed=0):
        logits, cls, u_term, i_term, total = _batch_losses(
            model, batch, weights, "eval", None)
        agg.add(len(batch.gold), cls.item(), u_term.item(), i_term.item(),
                total.item(), logits.data, batch.gold)
        pred = np.argmax(logits.data, axis=1)
        for g, p in zip(batch.gold, pred):
            per_class[labels.labels[g]]["gold"] += 1
            per_class[labels.labels[p]]["predicted"] += 1
            if g == p:
                per_class[labels.labels[g]]["correct"] += 1
    stats = agg.stats()
    return EvalReport(accuracy=stats.accuracy, report=stats.report,
                      per_class=per_class, utterances=stats.utterances)


# ---------------------------------------------------------------------------
# fit


@dataclass
class FitResult:
    best_epoch: int
    best_accuracy: float
    epochs_run: int
    metrics_path: str
    best_checkpoint: str
    latest_checkpoint: str


def _metric_row(epoch: int, split: str, report: LossReport, accuracy: float) -> str:
    vals = [report.loss_cls, report.loss_u, report.loss_i, report.total, accuracy]
    return f"{epoch},{split}," + ",".join(f"{v:.12g}" for v in vals)


def fit(model: Model, train_split, val_split, config: TrainConfig, labels,
        out_dir) -> FitResult:
    """Train with early stopping on validation accuracy.

    Writes metrics.csv (prefixed by a config-hash comment), a checkpoint per
    best-so-far epoch, and a latest.npz alias after every epoch.
    """
    import os

    if not train_split or not val_split:
        raise ValueError("fit needs nonempty train and validation splits")
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    latest_path = os.path.join(out_dir, "latest.npz")

    opt = adam_init(model.named_parameters())
    dropout_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(1,)))

    best_epoch = 0
    best_accuracy = -1.0
    best_path = os.path.join(out_dir, "epoch-000.npz")
    save_checkpoint(best_path, model)
    save_checkpoint(latest_path, model)
    stale = 0
    epochs_run = 0

    with open(metrics_path, "w", encoding="utf-8") as log:
        log.write(f"# config_hash={config_hash(model.config, config)}\n")
        log.write(METRICS_HEADER + "\n")
        for epoch in range(1, config.max_epochs + 1):
            batches = make_batches(train_split, config.batch_size,
                                   seed=config.seed + epoch)
            train_stats = train_epoch(model, opt, batches, config, dropout_rng)
            val = evaluate(model, val_split, config.weights, labels,
                           batch_size=config.batch_size)
            log.write(_metric_row(epoch, "train", train_stats.report,
                                  train_stats.accuracy) + "\n")
            log.write(_metric_row(epoch, "validation", val.report, val.accuracy) + "\n")
            log.flush()
            epochs_run = epoch
            save_checkpoint(latest_path, model)
            if val.accuracy > best_accuracy:
                best_accuracy = val.accuracy
                best_epoch = epoch
                best_path = os.path.join(out_dir, f"epoch-{epoch:03d}.npz")
                save_checkpoint(best_path, model)
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    return FitResult(best_epoch=best_epoch, best_accuracy=max(best_accuracy, 0.0),
                     epochs_run=epochs_run, metrics_path=metrics_path,
                     best_checkpoint=best_path, latest_checkpoint=latest_path)
