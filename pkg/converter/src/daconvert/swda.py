"""SwDA parsing: per-conversation CSV files with corpus-provided POS tags.

Expects the common research distribution layout: ``sw*utt/sw_*.utt.csv``
files whose rows carry ``conversation_no``, ``act_tag``, ``caller``, ``text``
and a ``pos`` column of ``word/TAG`` pairs.  Tokenization and POS come from
the ``pos`` column; rows without one fall back to the built-in tagger (the
count is reported).
"""

from __future__ import annotations

import csv
import re
from importlib import resources
from pathlib import Path

from . import tagger

REQUIRED_COLUMNS = ("conversation_no", "act_tag", "caller", "text", "pos")

CONTINUATION = "+"

_CARET_SUFFIX = re.compile(r"(.)\^.*")
_DECORATION = re.compile(r"[()@*]")


def _load_table(name):
    text = resources.files("daconvert").joinpath("data", name).read_text(
        encoding="utf-8")
    table = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        raw, mapped = line.split("\t")
        table[raw] = mapped
    return table

_COLLAPSE = _load_table("swda-collapse.tsv")

LABELS_42 = [line for line in resources.files("daconvert")
             .joinpath("data", "swda-42.txt")
             .read_text(encoding="utf-8").splitlines() if line.strip()]


def collapse_act_tag(raw: str) -> str:
    """Fold a raw SWBD-DAMSL act_tag into the 42-label scheme (or "+")."""
    tag = raw.strip().split(",")[0].split(";")[0]
    if tag in _COLLAPSE:
        return _COLLAPSE[tag]
    tag = _CARET_SUFFIX.sub(r"\1", tag)
    tag = _DECORATION.sub("", tag)
    return _COLLAPSE.get(tag, tag)


def parse_pos_column(pos_field: str):
    """Split "word/TAG word/TAG ..." into (tokens, tags); junk items dropped."""
    tokens, tags = [], []
    for item in pos_field.split():
        if "/" not in item:
            continue
        word, tag = item.rsplit("/", 1)
        if not word or not tag:
            continue
        tokens.append(word)
        tags.append(tag)
    return tokens, tags


def iter_raw_files(root):
    files = sorted(Path(root).glob("sw*utt/sw_*.utt.csv"))
    if not files:
        raise FileNotFoundError(
            f"no sw*utt/sw_*.utt.csv files under {root}")
    return files


def read_conversations(root, counts):
    """Yield (conversation_id, [utterance dict, ...]) in file order.

    ``counts`` collects skip statistics: continuations with no antecedent,
    unmappable act tags, and rows tagged by the fallback tagger.
    """
    conversations = {}
    order = []
    for path in iter_raw_files(root):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = set(REQUIRED_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: missing columns {sorted(missing)}")
            for row in reader:
                conv_id = f"sw{row['conversation_no']}"
                if conv_id not in conversations:
                    conversations[conv_id] = []
                    order.append(conv_id)
                _add_row(conversations[conv_id], row, counts)
    return [(cid, conversations[cid]) for cid in order]


def _add_row(utterances, row, counts) -> None:
    label = collapse_act_tag(row["act_tag"])
    tokens, tags = parse_pos_column(row["pos"])
    if not tokens:
        tokens = tagger.tokenize(row["text"])
        tags = tagger.tag(tokens)
        counts["pos_fallback"] += 1
        if not tokens:
            counts["empty_text"] += 1
            return
    speaker = row["caller"]
    if label == CONTINUATION:
        for prev in reversed(utterances):
            if prev["speaker"] == speaker:
                prev["tokens"].extend(tokens)
                prev["pos"].extend(tags)
                return
        counts["orphan_continuation"] += 1
        return
    if label not in LABELS_42:
        counts["unmappable_label"] += 1
        return
    utterances.append({"speaker": speaker, "tokens": tokens, "pos": tags,
                       "label": label})
