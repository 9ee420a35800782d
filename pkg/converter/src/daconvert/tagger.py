"""Small deterministic part-of-speech tagger with a pinned version string.

A lexicon of closed-class words plus suffix heuristics over the Penn tagset.
It stands in for a heavyweight tagger dependency: output quality is secondary
to the conversion pipeline being deterministic and self-contained, and the
version string lets downstream files record exactly which tagger produced
their POS column.
"""

from __future__ import annotations

import re

TAGGER_VERSION = "builtin-lexicon-1.0"

# closed classes and very frequent conversational words
_LEXICON = {
    "the": "DT", "a": "DT", "an": "DT", "this": "DT", "that": "DT",
    "these": "DT", "those": "DT", "some": "DT", "any": "DT", "no": "DT",
    "i": "PRP", "you": "PRP", "he": "PRP", "she": "PRP", "it": "PRP",
    "we": "PRP", "they": "PRP", "me": "PRP", "him": "PRP", "her": "PRP",
    "us": "PRP", "them": "PRP",
    "my": "PRP$", "your": "PRP$", "his": "PRP$", "its": "PRP$",
    "our": "PRP$", "their": "PRP$",
    "is": "VBZ", "am": "VBP", "are": "VBP", "was": "VBD", "were": "VBD",
    "be": "VB", "been": "VBN", "being": "VBG",
    "do": "VBP", "does": "VBZ", "did": "VBD", "done": "VBN",
    "have": "VBP", "has": "VBZ", "had": "VBD",
    "will": "MD", "would": "MD", "can": "MD", "could": "MD", "shall": "MD",
    "should": "MD", "may": "MD", "might": "MD", "must": "MD",
    "not": "RB", "n't": "RB", "very": "RB", "really": "RB", "just": "RB",
    "so": "RB", "too": "RB", "then": "RB", "now": "RB", "here": "RB",
    "there": "EX",
    "and": "CC", "or": "CC", "but": "CC", "nor": "CC",
    "in": "IN", "on": "IN", "at": "IN", "by": "IN", "for": "IN",
    "with": "IN", "about": "IN", "of": "IN", "to": "TO", "from": "IN",
    "as": "IN", "if": "IN", "because": "IN", "while": "IN",
    "what": "WP", "who": "WP", "whom": "WP", "which": "WDT",
    "when": "WRB", "where": "WRB", "why": "WRB", "how": "WRB",
    "yeah": "UH", "yes": "UH", "okay": "UH", "ok": "UH",
    "uh": "UH", "um": "UH", "huh": "UH", "hm": "UH", "mm": "UH",
    "hmm": "UH", "uh-huh": "UH", "mm-hmm": "UH", "oh": "UH", "well": "UH",
    "right": "UH", "sure": "UH",
}

_SUFFIX_RULES = (
    ("ing", "VBG"),
    ("ed", "VBD"),
    ("ly", "RB"),
    ("ness", "NN"),
    ("ment", "NN"),
    ("tion", "NN"),
    ("ous", "JJ"),
    ("ful", "JJ"),
    ("able", "JJ"),
    ("ible", "JJ"),
    ("est", "JJS"),
    ("er", "NN"),
    ("s", "NNS"),
)

_NUMBER = re.compile(r"^[+-]?\d+([.,]\d+)*$")
_PUNCT = re.compile(r"^\W+$", re.UNICODE)

_TOKEN = re.compile(r"[A-Za-z]+(?:[-'][A-Za-z]+)*|\d+(?:[.,]\d+)*|\S")


def tokenize(text: str) -> list:
    """Split into words (keeping hyphens/apostrophes inside), numbers, marks."""
    return _TOKEN.findall(text)


def tag_token(token: str) -> str:
    low = token.lower()
    if low in _LEXICON:
        return _LEXICON[low]
    if _NUMBER.match(token):
        return "CD"
    if _PUNCT.match(token):
        return "."
    for suffix, t in _SUFFIX_RULES:
        if len(low) > len(suffix) + 2 and low.endswith(suffix):
            return t
    if token[:1].isupper():
        return "NNP"
    return "NN"


def tag(tokens) -> list:
    return [tag_token(t) for t in tokens]
