"""Command-line pipeline: synth, train, eval, ablate, gradcheck, featurize.

Hyperparameters resolve in three layers: built-in defaults, then a JSON config
file (``--config``), then explicit flags; flags always win.  Exit codes: 0 on
success, 1 on validation errors (bad flags, missing files, out-of-range
values), 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from dataclasses import dataclass, fields
from functools import reduce

import numpy as np

from . import autodiff as ad
from .ablation import ablation_run, split_by_manifest
from .autodiff import grad_check
from .corpus import (
    SplitManifest,
    Utterance,
    builtin_label_set,
    generate_synthetic,
    load_corpus,
    save_corpus,
    warn_on_unexpected_split_sizes,
)
from .features import (
    PosInventory,
    StatisticsSchema,
    Vocab,
    build_feature_bundle,
    embedding_init,
    load_pretrained_embeddings,
)
from .losses import LossWeights, loss_cls, loss_i, loss_u, total_loss
from .model import ModelConfig, conversation_forward, init_model, load_checkpoint
from .training import (
    TrainConfig,
    build_pos_inventory,
    build_vocabulary,
    evaluate,
    featurize_conversations,
    fit,
)

BUILTIN_LABEL_NAMES = ("synthetic-4", "mrda-5", "swda-42")

DEFAULTS = {
    "seed": 0,
    "batch_size": 64,
    "lr": 1e-4,
    "dropout": 0.3,
    "alpha": 1.0,
    "beta": 0.7,
    "gamma": 0.7,
    "d_h": 224,
    "heads": 4,
    "epochs": 200,
    "patience": 10,
    "labels": "synthetic-4",
    "d_w": 50,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse normally sys.exit(2)s; route through exit-code-1 instead
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


@dataclass
class RunConfig:
    """Resolved view of defaults + config file + flags for one invocation."""

    corpus: str = None
    labels: str = DEFAULTS["labels"]
    splits: str = None
    embeddings: str = None
    out: str = None
    seed: int = DEFAULTS["seed"]
    batch_size: int = DEFAULTS["batch_size"]
    lr: float = DEFAULTS["lr"]
    dropout: float = DEFAULTS["dropout"]
    alpha: float = DEFAULTS["alpha"]
    beta: float = DEFAULTS["beta"]
    gamma: float = DEFAULTS["gamma"]
    d_h: int = DEFAULTS["d_h"]
    heads: int = DEFAULTS["heads"]
    epochs: int = DEFAULTS["epochs"]
    patience: int = DEFAULTS["patience"]
    d_w: int = DEFAULTS["d_w"]


_RUN_FIELDS = {f.name for f in fields(RunConfig)}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults <- config file <- flags (unset flags are None)."""
    merged = {}
    path = getattr(args, "config", None)
    if path is not None:
        if not os.path.exists(path):
            raise ValueError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(payload, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        unknown = set(payload) - _RUN_FIELDS
        if unknown:
            raise ValueError(f"{path}: unknown config fields {sorted(unknown)}")
        merged.update(payload)
    for name in _RUN_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise ValueError(f"invalid config: {exc}") from None


def _require(path, what):
    if path is None:
        raise ValueError(f"missing required {what}")
    if not os.path.exists(path):
        raise ValueError(f"{what} not found: {path}")
    return path


def _load_labels(value):
    if value in BUILTIN_LABEL_NAMES:
        return builtin_label_set(value)
    if os.path.exists(value):
        from .corpus import LabelSet

        return LabelSet.from_file(value)
    raise ValueError(f"labels must be one of {BUILTIN_LABEL_NAMES} "
                     f"or an existing file, got {value!r}")


def _default_inside_out(cfg: RunConfig, attr, filename):
    if getattr(cfg, attr) is None and cfg.out is not None:
        candidate = os.path.join(cfg.out, filename)
        if os.path.exists(candidate):
            setattr(cfg, attr, candidate)


def _model_config(cfg: RunConfig, labels, inventory, schema, d_w,
                  variant="full") -> ModelConfig:
    return ModelConfig(num_classes=len(labels), d_w=d_w, d_p=len(inventory),
                       d_s=schema.d_s, d_h=cfg.d_h, lstm_hidden=cfg.d_h,
                       heads=cfg.heads, dropout=cfg.dropout,
                       mlp_hidden=cfg.d_h, variant=variant)


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(batch_size=cfg.batch_size, learning_rate=cfg.lr,
                       dropout=cfg.dropout,
                       weights=LossWeights(cfg.alpha, cfg.beta, cfg.gamma),
                       max_epochs=cfg.epochs, patience=cfg.patience,
                       seed=cfg.seed)


def _make_table(cfg: RunConfig, vocab):
    if cfg.embeddings is not None:
        _require(cfg.embeddings, "embeddings file")
        table = load_pretrained_embeddings(
            cfg.embeddings, vocab, np.random.default_rng(cfg.seed))
        return table, table.weights.data.shape[1]
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed,
                                                       spawn_key=(2,)))
    return embedding_init(rng, len(vocab), cfg.d_w), cfg.d_w


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args) -> int:
    cfg = resolve_config(args)
    if cfg.out is None:
        raise ValueError("synth needs --out")
    os.makedirs(cfg.out, exist_ok=True)
    conversations, manifest = generate_synthetic(args.n, seed=cfg.seed)
    corpus_path = os.path.join(cfg.out, "corpus.jsonl")
    splits_path = os.path.join(cfg.out, "splits.json")
    save_corpus(corpus_path, conversations)
    manifest.save(splits_path)
    utts = sum(len(c.utterances) for c in conversations)
    print(f"wrote {len(conversations)} conversations ({utts} utterances) "
          f"to {corpus_path}")
    print(f"wrote split manifest to {splits_path}")
    return 0


def _load_data(cfg: RunConfig):
    labels = _load_labels(cfg.labels)
    _default_inside_out(cfg, "corpus", "corpus.jsonl")
    _default_inside_out(cfg, "splits", "splits.json")
    corpus_path = _require(cfg.corpus, "corpus file (--corpus)")
    splits_path = _require(cfg.splits, "split manifest (--splits)")
    conversations = load_corpus(corpus_path, labels)
    manifest = SplitManifest.load(splits_path)
    manifest.validate([c.id for c in conversations])
    warn_on_unexpected_split_sizes(labels, manifest)
    return labels, conversations, manifest


def _cmd_train(args) -> int:
    cfg = resolve_config(args)
    if cfg.out is None:
        raise ValueError("train needs --out")
    labels, conversations, manifest = _load_data(cfg)
    train, val, _ = split_by_manifest(conversations, manifest)
    if not train or not val:
        raise ValueError("train and validation splits must be nonempty")
    vocab = build_vocabulary(train)
    inventory = build_pos_inventory(train)
    schema = StatisticsSchema()
    table, d_w = _make_table(cfg, vocab)
    model_config = _model_config(cfg, labels, inventory, schema, d_w)
    train_config = _train_config(cfg)
    model = init_model(model_config, vocab, inventory,
                       np.random.default_rng(cfg.seed), table=table)
    ftr = featurize_conversations(train, vocab, inventory, schema, labels)
    fva = featurize_conversations(val, vocab, inventory, schema, labels)
    result = fit(model, ftr, fva, train_config, labels, cfg.out)
    shutil.copyfile(result.best_checkpoint, os.path.join(cfg.out, "best.npz"))
    print(f"trained {result.epochs_run} epochs; best epoch {result.best_epoch} "
          f"with validation accuracy {result.best_accuracy:.4f}")
    print(f"metrics: {result.metrics_path}")
    print(f"best checkpoint: {os.path.join(cfg.out, 'best.npz')}")
    return 0


def _cmd_eval(args) -> int:
    cfg = resolve_config(args)
    labels, conversations, manifest = _load_data(cfg)
    checkpoint = args.checkpoint
    if checkpoint is None:
        if cfg.out is None:
            raise ValueError("eval needs --checkpoint or --out")
        checkpoint = os.path.join(cfg.out, "best.npz")
    _require(checkpoint, "checkpoint")
    model = load_checkpoint(checkpoint)
    splits = dict(zip(("train", "validation", "test"),
                      split_by_manifest(conversations, manifest)))
    chosen = splits[args.split]
    if not chosen:
        raise ValueError(f"{args.split} split is empty")
    feats = featurize_conversations(chosen, model.vocab, model.pos_inventory,
                                    StatisticsSchema(), labels)
    weights = LossWeights(cfg.alpha, cfg.beta, cfg.gamma)
    report = evaluate(model, feats, weights, labels, batch_size=cfg.batch_size)
    print(f"{args.split} accuracy {report.accuracy:.4f} "
          f"({report.utterances} utterances)")
    print(f"{'label':<16}{'gold':>6}{'predicted':>11}{'correct':>9}{'recall':>8}")
    for lab in labels.labels:
        row = report.per_class[lab]
        recall = row["correct"] / row["gold"] if row["gold"] else 0.0
        print(f"{lab:<16}{row['gold']:>6}{row['predicted']:>11}"
              f"{row['correct']:>9}{recall:>8.3f}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    if cfg.out is None:
        raise ValueError("ablate needs --out")
    labels, conversations, manifest = _load_data(cfg)
    schema = StatisticsSchema()
    # d_p is refit per variant inside the harness; 1 is a placeholder
    model_config = ModelConfig(num_classes=len(labels), d_w=cfg.d_w, d_p=1,
                               d_s=schema.d_s, d_h=cfg.d_h,
                               lstm_hidden=cfg.d_h, heads=cfg.heads,
                               dropout=cfg.dropout, mlp_hidden=cfg.d_h)
    accuracies = ablation_run(conversations, manifest, labels, model_config,
                              _train_config(cfg), cfg.out)
    print("variant,split,accuracy")
    for name, acc in accuracies.items():
        print(f"{name},test,{acc:.6f}")
    return 0


TOY_GRADCHECK = dict(num_classes=3, d_w=4, d_p=3, d_s=12, d_h=8,
                     lstm_hidden=6, heads=2, dropout=0.0, mlp_hidden=5)


def toy_gradcheck(seed: int, max_components: int = 3):
    """Finite-difference check of the whole model on a 2-utterance toy setup."""
    vocab = Vocab(["the", "cat", "sat", "mat", "ok", "?", "!", "."])
    inventory = PosInventory(["D", "N"])
    config = ModelConfig(**TOY_GRADCHECK)
    model = init_model(config, vocab, inventory, np.random.default_rng(seed))
    schema = StatisticsSchema()
    conv = [
        Utterance("A", ["the", "cat", "sat", "?"], ["D", "N", "N", "X"], "q"),
        Utterance("B", ["ok", "."], ["N", "X"], "a"),
    ]
    gold = np.array([0, 2])
    weights = LossWeights()

    def run():
        bundles = [build_feature_bundle(u, model.vocab, model.table,
                                        model.pos_inventory, schema)
                   for u in conv]
        logits, all_pairs = conversation_forward(model.params, model.config,
                                                 bundles)
        cls = loss_cls(logits, gold)
        u_terms = [loss_u(p[0].universality, p[1].universality,
                          p[2].universality) for p in all_pairs]
        i_terms = [loss_i(p) for p in all_pairs]
        u_mean = ad.scalar_mul(reduce(ad.add, u_terms), 1.0 / len(u_terms))
        i_mean = ad.scalar_mul(reduce(ad.add, i_terms), 1.0 / len(i_terms))
        return total_loss(weights, cls, u_mean, i_mean)

    return grad_check(run, model.named_parameters(),
                      max_components=max_components,
                      rng=np.random.default_rng(seed + 1), tiny_floor=1e-6)


def _cmd_gradcheck(args) -> int:
    cfg = resolve_config(args)
    report = toy_gradcheck(cfg.seed)
    print(f"max relative error {report.max_rel_err:.3e} "
          f"({'pass' if report.passed else 'FAIL'} at 1e-4)")
    if not report.passed:
        worst = sorted(report.per_param.items(), key=lambda kv: -kv[1])[:5]
        for name, err in worst:
            print(f"  {name}: {err:.3e}", file=sys.stderr)
        raise RuntimeError("gradient check failed")
    return 0


def _cmd_featurize(args) -> int:
    cfg = resolve_config(args)
    labels = _load_labels(cfg.labels)
    corpus_path = _require(cfg.corpus, "corpus file (--corpus)")
    if cfg.out is None:
        raise ValueError("featurize needs --out")
    conversations = load_corpus(corpus_path, labels)
    vocab = build_vocabulary(conversations)
    inventory = build_pos_inventory(conversations)
    schema = StatisticsSchema()
    table, _ = _make_table(cfg, vocab)
    os.makedirs(os.path.dirname(os.path.abspath(cfg.out)), exist_ok=True)
    count = 0
    with open(cfg.out, "w", encoding="utf-8") as fh:
        for conv in conversations:
            for j, utt in enumerate(conv.utterances):
                bundle = build_feature_bundle(utt, vocab, table, inventory,
                                              schema)
                record = {
                    "conversation": conv.id,
                    "utterance": j,
                    "label": utt.label,
                    "u_w": bundle.u_w.data.tolist(),
                    "u_p": bundle.u_p.data.tolist(),
                    "u_s": bundle.u_s.data.tolist(),
                }
                fh.write(json.dumps(record) + "\n")
                count += 1
    print(f"wrote {count} feature bundles to {cfg.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p, *names):
    groups = {
        "config": lambda: p.add_argument(
            "--config", metavar="FILE",
            help="JSON config file; explicit flags override its fields"),
        "seed": lambda: p.add_argument(
            "--seed", type=int, help=f"RNG seed (default: {DEFAULTS['seed']})"),
        "data": lambda: [
            p.add_argument("--corpus", metavar="FILE",
                           help="corpus JSONL (default: <out>/corpus.jsonl)"),
            p.add_argument("--labels", metavar="NAME|FILE",
                           help="builtin label set name or label file "
                                f"(default: {DEFAULTS['labels']})"),
            p.add_argument("--splits", metavar="FILE",
                           help="split manifest JSON (default: <out>/splits.json)"),
        ],
        "embeddings": lambda: p.add_argument(
            "--embeddings", metavar="FILE",
            help="pretrained word vectors; omit to train embeddings "
                 f"(random init, width {DEFAULTS['d_w']})"),
        "out": lambda: p.add_argument(
            "--out", metavar="DIR", help="output directory"),
        "hyper": lambda: [
            p.add_argument("--batch-size", dest="batch_size", type=int,
                           help=f"conversations per batch (default: {DEFAULTS['batch_size']})"),
            p.add_argument("--lr", type=float,
                           help=f"Adam learning rate (default: {DEFAULTS['lr']})"),
            p.add_argument("--dropout", type=float,
                           help=f"dropout rate (default: {DEFAULTS['dropout']})"),
            p.add_argument("--alpha", type=float,
                           help=f"classification loss weight (default: {DEFAULTS['alpha']})"),
            p.add_argument("--beta", type=float,
                           help=f"universality loss weight (default: {DEFAULTS['beta']})"),
            p.add_argument("--gamma", type=float,
                           help=f"individuality loss weight (default: {DEFAULTS['gamma']})"),
            p.add_argument("--d-h", dest="d_h", type=int,
                           help=f"hidden width (default: {DEFAULTS['d_h']})"),
            p.add_argument("--heads", type=int,
                           help=f"attention heads (default: {DEFAULTS['heads']})"),
            p.add_argument("--epochs", type=int,
                           help=f"max training epochs (default: {DEFAULTS['epochs']})"),
            p.add_argument("--patience", type=int,
                           help=f"early-stopping patience (default: {DEFAULTS['patience']})"),
        ],
    }
    for name in names:
        groups[name]()


def build_parser() -> _Parser:
    parser = _Parser(prog="uiim", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a synthetic corpus + manifest",
                       parents=[], description="Write corpus.jsonl and "
                       "splits.json for a rule-labeled synthetic corpus.")
    p.add_argument("--n", type=int, required=True,
                   help="number of conversations (>= 10)")
    _add_common(p, "config", "seed", "out")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="fit the model; write checkpoints + metrics")
    _add_common(p, "config", "seed", "data", "embeddings", "out", "hyper")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint; print per-class table")
    _add_common(p, "config", "seed", "data", "out", "hyper")
    p.add_argument("--checkpoint", metavar="FILE",
                   help="checkpoint to score (default: <out>/best.npz)")
    p.add_argument("--split", choices=("train", "validation", "test"),
                   default="test", help="which split to score (default: test)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train uiim-full and concat-baseline")
    _add_common(p, "config", "seed", "data", "out", "hyper")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check on a toy model")
    _add_common(p, "config", "seed")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("featurize", help="dump feature bundles as JSONL")
    _add_common(p, "config", "seed", "embeddings")
    p.add_argument("--corpus", metavar="FILE", required=True,
                   help="corpus JSONL to featurize")
    p.add_argument("--labels", metavar="NAME|FILE",
                   help=f"label set (default: {DEFAULTS['labels']})")
    p.add_argument("--out", metavar="FILE", required=True,
                   help="output JSONL; one record per utterance with "
                        "u_w (tokens x d_w), u_p (tokens x d_p), u_s (d_s)")
    p.set_defaults(func=_cmd_featurize)

    return parser


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        print(parser.format_usage(), file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
