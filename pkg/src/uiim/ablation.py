"""Side-by-side comparison of the full model and a plain-concatenation baseline.

Both variants train under identical seeds and dimensions; the baseline skips
the universality/individuality pairing and attention fusion and trains on
cross-entropy alone (auxiliary weights zeroed).
"""

from __future__ import annotations

import os
from dataclasses import replace

import numpy as np

from .features import StatisticsSchema
from .losses import LossWeights
from .model import ModelConfig, init_model, load_checkpoint
from .training import (
    TrainConfig,
    build_pos_inventory,
    build_vocabulary,
    evaluate,
    featurize_conversations,
    fit,
)

VARIANTS = (("uiim-full", "full"), ("concat-baseline", "concat"))

ABLATION_HEADER = "variant,split,accuracy"


def split_by_manifest(conversations, manifest):
    by_id = {c.id: c for c in conversations}
    return ([by_id[i] for i in manifest.train],
            [by_id[i] for i in manifest.validation],
            [by_id[i] for i in manifest.test])


def _train_one(variant_key, conversations, manifest, labels,
               model_config: ModelConfig, train_config: TrainConfig, out_dir):
    train, val, test = split_by_manifest(conversations, manifest)
    vocab = build_vocabulary(train)
    inventory = build_pos_inventory(train)
    schema = StatisticsSchema()
    config = replace(model_config, variant=variant_key,
                     d_p=len(inventory), d_s=schema.d_s)
    if variant_key == "concat":
        train_config = replace(
            train_config,
            weights=LossWeights(alpha=train_config.weights.alpha, beta=0.0,
                                gamma=0.0))
    model = init_model(config, vocab, inventory,
                       np.random.default_rng(train_config.seed))
    ftr = featurize_conversations(train, vocab, inventory, schema, labels)
    fva = featurize_conversations(val, vocab, inventory, schema, labels)
    fte = featurize_conversations(test, vocab, inventory, schema, labels)
    result = fit(model, ftr, fva, train_config, labels, out_dir)
    best = load_checkpoint(result.best_checkpoint)
    report = evaluate(best, fte, train_config.weights, labels,
                      batch_size=train_config.batch_size)
    return report.accuracy, result


def ablation_run(conversations, manifest, labels, model_config: ModelConfig,
                 train_config: TrainConfig, out_dir):
    """Train uiim-full and concat-baseline; write `variant,split,accuracy` CSV.

    Returns {variant-name: test accuracy}; per-variant metrics logs and
    checkpoints land in out_dir/<variant-name>/.
    """
    os.makedirs(out_dir, exist_ok=True)
    accuracies = {}
    for name, key in VARIANTS:
        acc, _ = _train_one(key, conversations, manifest, labels, model_config,
                            train_config, os.path.join(out_dir, name))
        accuracies[name] = acc
    table_path = os.path.join(out_dir, "ablation.csv")
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write(ABLATION_HEADER + "\n")
        for name, _ in VARIANTS:
            fh.write(f"{name},test,{accuracies[name]:.6f}\n")
    return accuracies
