"""MRDA parsing: tab-separated meeting transcripts, tagged by the built-in
tagger and mapped to the five-class scheme via data/mrda-map.tsv.

Expects one ``<meeting-id>.txt`` per meeting under the raw root, each line
``speaker<TAB>da_tag<TAB>text``.  Blank lines and '#' comments are skipped.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from . import tagger


def _load_map():
    text = resources.files("daconvert").joinpath("data", "mrda-map.tsv") \
        .read_text(encoding="utf-8")
    table = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        raw, mapped = line.split("\t")
        table[raw] = mapped
    return table

_MAP = _load_map()

LABELS_5 = [line for line in resources.files("daconvert")
            .joinpath("data", "mrda-5.txt")
            .read_text(encoding="utf-8").splitlines() if line.strip()]


def general_tag(raw: str) -> str:
    """Strip pipe/caret refinements: "s^bk|rt" -> "s", "%-" stays itself."""
    tag = raw.strip().split("|")[0]
    if not tag.startswith("%"):
        tag = tag.split("^")[0].split(".")[0]
    return tag


def map_tag(raw: str):
    """Raw MRDA tag -> one of {s,q,f,b,d}, or None when unmappable."""
    tag = general_tag(raw)
    if tag in _MAP:
        return _MAP[tag]
    if tag.startswith("%"):
        return _MAP["%"]
    return None


def iter_raw_files(root):
    files = sorted(p for p in Path(root).glob("*.txt") if p.is_file())
    if not files:
        raise FileNotFoundError(f"no meeting .txt files under {root}")
    return files


def read_conversations(root, counts):
    """Yield (meeting_id, [utterance dict, ...]); skips tracked in counts."""
    out = []
    for path in iter_raw_files(root):
        utterances = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip() or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ValueError(
                        f"{path}:{lineno}: expected speaker<TAB>tag<TAB>text, "
                        f"got {len(parts)} fields")
                speaker, raw_tag, text = parts
                label = map_tag(raw_tag)
                if label is None:
                    counts["unmappable_label"] += 1
                    continue
                tokens = tagger.tokenize(text)
                if not tokens:
                    counts["empty_text"] += 1
                    continue
                utterances.append({"speaker": speaker, "tokens": tokens,
                                   "pos": tagger.tag(tokens), "label": label})
        out.append((path.stem, utterances))
    return out
