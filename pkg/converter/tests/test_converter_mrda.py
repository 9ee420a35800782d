from collections import Counter
from pathlib import Path

import pytest

from daconvert.mrda import LABELS_5, general_tag, map_tag, read_conversations
from daconvert.tagger import TAGGER_VERSION, tag, tokenize

FIXTURE = Path(__file__).parent / "fixtures" / "mrda"


def test_label_list_is_the_five_classes():
    assert LABELS_5 == ["s", "q", "f", "b", "d"]


@pytest.mark.parametrize("raw,expected", [
    ("s", "s"),
    ("s^bk", "s"),
    ("s^bk|rt", "s"),
    ("qy", "q"),
    ("qw^rt", "q"),
    ("qh", "q"),
    ("fg", "f"),
    ("fh", "f"),
    ("h", "f"),
    ("b", "b"),
    ("%", "d"),
    ("%-", "d"),
    ("%--", "d"),
    ("x", None),
    ("z", None),
    ("made-up", None),
])
def test_map_tag(raw, expected):
    assert map_tag(raw) == expected


def test_general_tag_keeps_disruption_marks():
    assert general_tag("%-") == "%-"
    assert general_tag("s^df^e.%") == "s"


def test_tokenizer_splits_punctuation_and_contractions():
    assert tokenize("we're going, okay?") == ["we're", "going", ",", "okay", "?"]
    assert tokenize("at 3.30 tomorrow") == ["at", "3.30", "tomorrow"]


def test_tagger_basics():
    assert tag(["the", "files", "?"]) == ["DT", "NNS", "."]
    assert tag(["uh-huh"]) == ["UH"]
    assert tag(["42"]) == ["CD"]
    assert tag(["running"]) == ["VBG"]
    assert TAGGER_VERSION.startswith("builtin-")


def test_read_conversations_maps_and_skips():
    counts = Counter()
    convs = dict(read_conversations(FIXTURE, counts))
    assert set(convs) == {"Bmr001", "Bmr002"}
    labels = [u["label"] for u in convs["Bmr001"]]
    assert labels == ["s", "s", "q", "b", "d", "f"]
    assert counts["unmappable_label"] == 1  # the x row
    for utts in convs.values():
        for u in utts:
            assert len(u["tokens"]) == len(u["pos"])
            assert u["label"] in LABELS_5


def test_malformed_line_raises(tmp_path):
    (tmp_path / "Bad001.txt").write_text("spk\tonly-two-fields\n")
    with pytest.raises(ValueError, match="Bad001.txt:1"):
        read_conversations(tmp_path, Counter())


def test_missing_root_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_conversations(tmp_path / "nope", Counter())
