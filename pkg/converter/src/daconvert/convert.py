"""Conversion driver and report-only output validation.

Output files (all inside the descriptor's output directory):

* ``corpus.jsonl`` — one conversation per line, prefixed by a ``#`` header
  recording the converter and tagger versions for provenance;
* ``labels.txt`` — the emitted label set, one label per line;
* ``splits.json`` — train/validation/test conversation ids.

Split policy: ``splits/{train,validation,test}.txt`` id lists under the raw
root are honored when present (SwDA's official split ships as such lists);
otherwise every conversation lands in train and the report says so.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

from . import mrda, swda, tagger

try:
    CONVERTER_VERSION = metadata.version("daconvert")
except metadata.PackageNotFoundError:  # running from a source tree
    CONVERTER_VERSION = "0.1.0"

KINDS = ("swda", "mrda")

# published conversation counts the emitted split is compared against
EXPECTED_SPLIT_SIZES = {"swda": (1003, 112, 19), "mrda": (51, 11, 11)}

SPLIT_NAMES = ("train", "validation", "test")


@dataclass
class RawCorpusDescriptor:
    kind: str
    root: str
    out: str

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not Path(self.root).is_dir():
            raise FileNotFoundError(f"raw corpus root not found: {self.root}")


@dataclass
class ConversionReport:
    kind: str
    conversations: int = 0
    utterances: int = 0
    skipped: Counter = field(default_factory=Counter)
    label_histogram: Counter = field(default_factory=Counter)
    split_sizes: tuple = (0, 0, 0)
    expected_split_sizes: tuple = None
    corpus_path: str = ""
    labels_path: str = ""
    splits_path: str = ""

    def lines(self):
        yield (f"{self.kind}: {self.conversations} conversations, "
               f"{self.utterances} utterances")
        for reason, n in sorted(self.skipped.items()):
            yield f"skipped ({reason}): {n}"
        yield "split sizes (train/validation/test): " + \
            "/".join(str(s) for s in self.split_sizes)
        if self.expected_split_sizes:
            status = "match" if self.split_sizes == self.expected_split_sizes \
                else "differ from"
            yield ("split sizes " + status + " the published " +
                   "/".join(str(s) for s in self.expected_split_sizes))
        for label, n in self.label_histogram.most_common():
            yield f"label {label}: {n}"


def _read_split_lists(root):
    split_dir = Path(root) / "splits"
    if not split_dir.is_dir():
        return None
    lists = {}
    for name in SPLIT_NAMES:
        path = split_dir / f"{name}.txt"
        lists[name] = [ln.strip() for ln in path.read_text(encoding="utf-8")
                       .splitlines() if ln.strip()] if path.exists() else []
    return lists


def _build_manifest(root, conversation_ids, report):
    lists = _read_split_lists(root)
    if lists is None:
        manifest = {"train": list(conversation_ids), "validation": [],
                    "test": []}
        report.skipped["no_split_lists_all_train"] = len(conversation_ids)
    else:
        known = set(conversation_ids)
        manifest = {name: [cid for cid in lists[name] if cid in known]
                    for name in SPLIT_NAMES}
        listed = set().union(*(lists[n] for n in SPLIT_NAMES))
        for cid in conversation_ids:
            if cid not in listed:
                report.skipped["conversation_not_in_split_lists"] += 1
                manifest["train"].append(cid)
    report.split_sizes = tuple(len(manifest[n]) for n in SPLIT_NAMES)
    return manifest


def convert(desc: RawCorpusDescriptor) -> ConversionReport:
    report = ConversionReport(kind=desc.kind,
                              expected_split_sizes=EXPECTED_SPLIT_SIZES[desc.kind])
    counts = report.skipped
    if desc.kind == "swda":
        conversations = swda.read_conversations(desc.root, counts)
        labels = swda.LABELS_42
        pos_source = "corpus-pos"
    else:
        conversations = mrda.read_conversations(desc.root, counts)
        labels = mrda.LABELS_5
        pos_source = tagger.TAGGER_VERSION

    conversations = [(cid, utts) for cid, utts in conversations if utts]
    out = Path(desc.out)
    out.mkdir(parents=True, exist_ok=True)

    report.corpus_path = str(out / "corpus.jsonl")
    with open(report.corpus_path, "w", encoding="utf-8") as fh:
        fh.write(f"# daconvert {CONVERTER_VERSION} kind={desc.kind} "
                 f"pos={pos_source}\n")
        for cid, utts in conversations:
            fh.write(json.dumps({"id": cid, "utterances": utts},
                                ensure_ascii=False) + "\n")
            report.conversations += 1
            report.utterances += len(utts)
            report.label_histogram.update(u["label"] for u in utts)

    report.labels_path = str(out / "labels.txt")
    with open(report.labels_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(labels) + "\n")

    manifest = _build_manifest(desc.root, [cid for cid, _ in conversations],
                               report)
    report.splits_path = str(out / "splits.json")
    with open(report.splits_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=0)
        fh.write("\n")
    return report


# ---------------------------------------------------------------------------
# validation (report-only)


@dataclass
class ValidationReport:
    conversations: int = 0
    utterances: int = 0
    label_histogram: Counter = field(default_factory=Counter)
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def lines(self):
        yield (f"{self.conversations} conversations, "
               f"{self.utterances} utterances, "
               f"{len(self.violations)} violations")
        for v in self.violations[:20]:
            yield f"violation: {v}"
        for label, n in self.label_histogram.most_common():
            yield f"label {label}: {n}"


def validate_output(path, labels_path=None) -> ValidationReport:
    """Schema-check a converted corpus; never raises on content problems."""
    report = ValidationReport()
    allowed = None
    if labels_path is not None:
        allowed = {ln.strip() for ln in Path(labels_path)
                   .read_text(encoding="utf-8").splitlines() if ln.strip()}
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                report.violations.append(f"{where}: invalid JSON ({exc.msg})")
                continue
            if "id" not in obj or "utterances" not in obj:
                report.violations.append(f"{where}: missing id/utterances")
                continue
            if obj["id"] in seen:
                report.violations.append(
                    f"{where}: duplicate conversation id {obj['id']!r}")
                continue
            seen.add(obj["id"])
            if not obj["utterances"]:
                report.violations.append(f"{where}: conversation is empty")
                continue
            report.conversations += 1
            for k, utt in enumerate(obj["utterances"]):
                missing = {"speaker", "tokens", "pos", "label"} - set(utt)
                if missing:
                    report.violations.append(
                        f"{where}: utterance {k} missing {sorted(missing)}")
                    continue
                if len(utt["tokens"]) != len(utt["pos"]):
                    report.violations.append(
                        f"{where}: utterance {k} has {len(utt['tokens'])} "
                        f"tokens but {len(utt['pos'])} POS tags")
                    continue
                if allowed is not None and utt["label"] not in allowed:
                    report.violations.append(
                        f"{where}: utterance {k} label {utt['label']!r} "
                        f"not in the label set")
                    continue
                report.utterances += 1
                report.label_histogram[utt["label"]] += 1
    return report
