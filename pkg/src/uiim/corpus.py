"""Canonical corpus format, label sets, split manifests, synthetic data.

Conversations are stored as JSONL: one conversation object per line with
pre-tokenized, pre-tagged utterances.  All raw-corpus parsing lives outside
this package; here we only validate and (for the synthetic task) generate.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

log = logging.getLogger(__name__)

ACK_WORDS = ("ok", "yes", "sure", "right")
SYNTH_POS_TAGS = ("DET", "NOUN", "VERB", "ADJ", "INTJ", "PUNCT")

# Conversation counts per split reported for the full-scale corpora; releases
# vary, so mismatches warn instead of failing.
EXPECTED_CONVERSATION_SPLITS = {
    "swda-42": (1003, 112, 19),
    "mrda-5": (51, 11, 11),
}


@dataclass
class Utterance:
    speaker: str
    tokens: list
    pos: list
    label: str


@dataclass
class CanonicalConversation:
    id: str
    utterances: list

    def labels(self):
        return [u.label for u in self.utterances]


class LabelSet:
    """Ordered label strings; order fixes the class indices."""

    def __init__(self, name: str, labels):
        self.name = name
        self.labels = list(labels)
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"label set {name!r} has duplicate labels")
        if len(self.labels) < 2:
            raise ValueError(f"label set {name!r} needs at least two labels")
        self._index = {lab: k for k, lab in enumerate(self.labels)}

    def index_of(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ValueError(f"label {label!r} not in label set {self.name!r}") from None

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self._index

    @classmethod
    def from_file(cls, path, name=None) -> "LabelSet":
        with open(path, encoding="utf-8") as fh:
            labels = [line.rstrip("\n") for line in fh if line.strip()]
        return cls(name or str(path), labels)


def builtin_label_set(name: str) -> LabelSet:
    """One of the shipped sets: "mrda-5", "swda-42", "synthetic-4"."""
    ref = resources.files("uiim").joinpath("data", f"{name}.txt")
    try:
        text = ref.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ValueError(f"no builtin label set named {name!r}") from None
    return LabelSet(name, [line for line in text.splitlines() if line.strip()])


@dataclass
class SplitManifest:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def validate(self, corpus_ids) -> None:
        splits = [set(self.train), set(self.validation), set(self.test)]
        names = ("train", "validation", "test")
        for part, ids in zip(names, (self.train, self.validation, self.test)):
            if len(set(ids)) != len(ids):
                raise ValueError(f"{part} split repeats conversation ids")
        for a in range(3):
            for b in range(a + 1, 3):
                overlap = splits[a] & splits[b]
                if overlap:
                    raise ValueError(
                        f"splits {names[a]} and {names[b]} overlap: {sorted(overlap)[:3]}")
        known = set(corpus_ids)
        stray = (splits[0] | splits[1] | splits[2]) - known
        if stray:
            raise ValueError(f"manifest names unknown conversations: {sorted(stray)[:3]}")

    def save(self, path) -> None:
        payload = {"train": self.train, "validation": self.validation, "test": self.test}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=0)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SplitManifest":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        missing = {"train", "validation", "test"} - set(payload)
        if missing:
            raise ValueError(f"{path}: manifest missing keys {sorted(missing)}")
        return cls(train=list(payload["train"]),
                   validation=list(payload["validation"]),
                   test=list(payload["test"]))


def warn_on_unexpected_split_sizes(labels: LabelSet, manifest: SplitManifest) -> bool:
    """Soft check of split sizes against the published conversation counts."""
    expected = EXPECTED_CONVERSATION_SPLITS.get(labels.name)
    if expected is None:
        return True
    actual = (len(manifest.train), len(manifest.validation), len(manifest.test))
    if actual != expected:
        log.warning("split sizes %s differ from the published %s for %s",
                    actual, expected, labels.name)
        return False
    return True


# ---------------------------------------------------------------------------
# JSONL load / save


def _parse_utterance(obj, labels: LabelSet, where: str) -> Utterance:
    for key in ("speaker", "tokens", "pos", "label"):
        if key not in obj:
            raise ValueError(f"{where}: utterance missing field {key!r}")
    tokens, pos = list(obj["tokens"]), list(obj["pos"])
    if len(tokens) != len(pos):
        raise ValueError(
            f"{where}: {len(tokens)} tokens but {len(pos)} POS tags")
    if obj["label"] not in labels:
        raise ValueError(f"{where}: unknown label {obj['label']!r}")
    return Utterance(speaker=str(obj["speaker"]), tokens=tokens, pos=pos,
                     label=obj["label"])


def load_corpus(path, labels: LabelSet):
    """Read and validate a JSONL corpus; errors carry the offending line.

    Blank lines and '#' comment lines (provenance headers written by
    converters) are skipped.
    """
    conversations = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError(f"{where}: invalid JSON ({err.msg})") from None
            if "id" not in obj or "utterances" not in obj:
                raise ValueError(f"{where}: conversation needs 'id' and 'utterances'")
            if not obj["utterances"]:
                raise ValueError(f"{where}: conversation has no utterances")
            if obj["id"] in seen:
                raise ValueError(f"{where}: duplicate conversation id {obj['id']!r}")
            seen.add(obj["id"])
            utts = [_parse_utterance(u, labels, where) for u in obj["utterances"]]
            conversations.append(CanonicalConversation(id=str(obj["id"]), utterances=utts))
    return conversations


def save_corpus(path, conversations) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for conv in conversations:
            obj = {
                "id": conv.id,
                "utterances": [
                    {"speaker": u.speaker, "tokens": u.tokens, "pos": u.pos,
                     "label": u.label}
                    for u in conv.utterances
                ],
            }
            fh.write(json.dumps(obj, ensure_ascii=False))
            fh.write("\n")


def split_corpus(conversations, manifest: SplitManifest):
    """Partition a corpus by manifest -> (train, validation, test) lists."""
    manifest.validate([c.id for c in conversations])
    by_id = {c.id: c for c in conversations}
    return ([by_id[i] for i in manifest.train if i in by_id],
            [by_id[i] for i in manifest.validation if i in by_id],
            [by_id[i] for i in manifest.test if i in by_id])


# ---------------------------------------------------------------------------
# synthetic corpus
#
# Four dialog acts with fully recoverable surface rules: questions end with
# "?", exclamations with "!", acknowledgements are one or two tokens built on
# a closed word list, everything else is a statement.  The rules line up with
# the three feature families (words, POS, statistics) on purpose.


def _make_words(prefixes, suffixes, count):
    words = []
    for s in suffixes:
        for p in prefixes:
            words.append(p + s)
            if len(words) == count:
                return words
    raise ValueError("not enough syllables")


_DETS = ["the", "a", "this", "that", "my", "your", "some", "every"]
_NOUNS = _make_words(["ban", "rel", "mot", "sil", "cor", "dun", "fab", "gim",
                      "hol", "jan", "kes", "lum", "nor", "pav", "quil", "rost"],
                     ["a", "o", "is", "et", "um"], 80)
_VERBS = _make_words(["run", "tak", "mov", "hold", "torn", "weav", "gild",
                      "spar", "lend", "mark", "fent", "grop"],
                     ["s", "ed", "es", "ing", "e"], 60)
_ADJS = _make_words(["bright", "dull", "quick", "slow", "warm", "cold",
                     "tall", "flat", "round", "sharp", "soft"],
                    ["ish", "er", "est", "y"], 44)
_PUNCT = [".", "?", "!", ","]
_WORD_POS = {}
for _w in _DETS:
    _WORD_POS[_w] = "DET"
for _w in _NOUNS:
    _WORD_POS[_w] = "NOUN"
for _w in _VERBS:
    _WORD_POS[_w] = "VERB"
for _w in _ADJS:
    _WORD_POS[_w] = "ADJ"
for _w in ACK_WORDS:
    _WORD_POS[_w] = "INTJ"
for _w in _PUNCT:
    _WORD_POS[_w] = "PUNCT"

SYNTH_VOCABULARY = tuple(_DETS + _NOUNS + _VERBS + _ADJS + list(ACK_WORDS) + _PUNCT)
assert len(SYNTH_VOCABULARY) == len(set(SYNTH_VOCABULARY)) == 200


def rule_label(tokens) -> str:
    """The generator's own labeling rule; also the recoverability oracle."""
    if tokens and tokens[-1] == "?":
        return "question"
    if tokens and tokens[-1] == "!":
        return "exclaim"
    if len(tokens) <= 2 and any(t in ACK_WORDS for t in tokens):
        return "ack"
    return "state"


def _sentence_body(rng: np.random.Generator) -> list:
    # Mostly short bodies; roughly one in ten runs long to exercise the
    # upper length buckets.
    if rng.random() < 0.1:
        n_extra = int(rng.integers(9, 14))
    else:
        n_extra = int(rng.integers(0, 5))
    body = [str(rng.choice(_DETS)), str(rng.choice(_NOUNS)), str(rng.choice(_VERBS))]
    pool = _NOUNS + _VERBS + _ADJS
    body.extend(str(rng.choice(pool)) for _ in range(n_extra))
    if len(body) >= 5 and rng.random() < 0.25:
        body.insert(int(rng.integers(2, len(body) - 1)), ",")
    return body


def _make_utterance(label: str, rng: np.random.Generator) -> Utterance:
    if label == "ack":
        tokens = [str(rng.choice(ACK_WORDS))]
        if rng.random() < 0.5:
            tokens.append(".")
    else:
        tokens = _sentence_body(rng)
        tokens.append({"question": "?", "exclaim": "!", "state": "."}[label])
    assert rule_label(tokens) == label
    pos = [_WORD_POS[t] for t in tokens]
    speaker = "A" if rng.random() < 0.5 else "B"
    return Utterance(speaker=speaker, tokens=tokens, pos=pos, label=label)


def generate_synthetic(num_conversations: int, seed: int):
    """Build a labeled corpus plus an 80/10/10 split manifest."""
    if num_conversations < 10:
        raise ValueError("need at least 10 conversations for a three-way split")
    rng = np.random.default_rng(seed)
    sizes = [int(rng.integers(3, 9)) for _ in range(num_conversations)]
    total = sum(sizes)

    # Deal labels from an exactly balanced, shuffled deck so class counts
    # stay within one utterance of uniform.
    label_names = ["question", "exclaim", "ack", "state"]
    base, rem = divmod(total, len(label_names))
    deck = []
    for k, lab in enumerate(label_names):
        deck.extend([lab] * (base + (1 if k < rem else 0)))
    rng.shuffle(deck)

    conversations = []
    cursor = 0
    for i, size in enumerate(sizes):
        utts = [_make_utterance(deck[cursor + j], rng) for j in range(size)]
        cursor += size
        conversations.append(CanonicalConversation(id=f"synth-{i:04d}", utterances=utts))

    ids = [c.id for c in conversations]
    order = list(rng.permutation(len(ids)))
    n_val = num_conversations // 10
    n_test = num_conversations // 10
    n_train = num_conversations - n_val - n_test
    shuffled = [ids[k] for k in order]
    manifest = SplitManifest(train=sorted(shuffled[:n_train]),
                             validation=sorted(shuffled[n_train:n_train + n_val]),
                             test=sorted(shuffled[n_train + n_val:]))
    return conversations, manifest
