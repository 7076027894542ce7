"""Shared text normalization: one tokenizer, one canonical-name rule, one
stop-word list. Every module that compares text goes through here so that
entity merging, trie matching, and evidence containment all agree."""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

_WS_RUN = re.compile(r"\s+")
_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


def collapse_ws(text: str) -> str:
    """Trim and collapse internal whitespace runs to single spaces."""
    return _WS_RUN.sub(" ", text).strip()


def canonical_name(text: str) -> str:
    """Canonical comparison form: case-folded, whitespace-collapsed, trimmed."""
    return collapse_ws(text).casefold()


def tokenize(text: str) -> list[str]:
    """Case-folded word tokens. Letters and digits only; punctuation splits."""
    return _TOKEN.findall(text.casefold())


@lru_cache(maxsize=1)
def stopwords() -> frozenset[str]:
    """The packaged stop-word list (versioned data file)."""
    data = resources.files("graphrag").joinpath("data/stopwords.txt").read_text("utf-8")
    return frozenset(
        line.strip() for line in data.splitlines()
        if line.strip() and not line.startswith("#")
    )
