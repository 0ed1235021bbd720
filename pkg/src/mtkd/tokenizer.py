"""Shared tokenizer used by the lexicon matcher, graph builder, and encoders.

Lower-cased word tokens with emoticons and emoji kept as single tokens,
so emotional markers survive into the vocabulary.
"""
from __future__ import annotations

import re

# Longest first so ":-)" wins over ":-".
EMOTICONS = (
    ">:(", ">:)", ":'(", ":')", ":-)", ":-(", ":-D", ":-P", ":-/", ";-)",
    "^_^", "-_-", "T_T", ":)", ":(", ":D", ":P", ":/", ":|", ":o", ":O",
    ";)", ";(", "<3", "xD", "XD", ":@",
)

_EMOJI = "☀-➿⬀-⯿\U0001f000-\U0001faff"

_TOKEN_RE = re.compile(
    "|".join(re.escape(e) for e in EMOTICONS)
    + r"|\w+(?:'\w+)*"
    + f"|[{_EMOJI}]"
)


def tokenize(text: str) -> list[str]:
    """Lower-cased tokens in order of appearance."""
    return [m.group(0).lower() for m in _TOKEN_RE.finditer(text)]
