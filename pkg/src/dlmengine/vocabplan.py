"""Planning-token membership: static structural list, capitalized-initial rule, EOS anchor.

Membership is decided on the token's visible text after stripping at most one
leading space marker (a plain space or the U+2581 glyph many tokenizers use
for word-initial tokens). Multi-character operators from the static list only
match as whole token strings.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from enum import Enum
from importlib import resources

from .core import Vocabulary

_SPACE_MARKERS = (" ", "▁")


class PlanningSource(str, Enum):
    STATIC_LIST = "STATIC_LIST"
    CAPITALIZED = "CAPITALIZED"
    EOS = "EOS"


@dataclass(frozen=True)
class PlanningSet:
    """Immutable membership set over token ids, each member tagged by its first matching rule."""

    member_ids: frozenset[int]
    source_tags: dict[int, PlanningSource]

    def __contains__(self, token_id: int) -> bool:
        return token_id in self.member_ids

    def __len__(self) -> int:
        return len(self.member_ids)


def _strip_marker(text: str) -> str:
    if text and text[0] in _SPACE_MARKERS:
        return text[1:]
    return text


def _starts_uppercase(text: str) -> bool:
    return bool(text) and unicodedata.category(text[0]) == "Lu"


def build_planning_set(vocab: Vocabulary, static_list: list[str]) -> PlanningSet:
    """Classify every vocabulary token; EOS is always a member (the terminal anchor)."""
    static = set(static_list)
    tags: dict[int, PlanningSource] = {}
    for token_id, text in enumerate(vocab.tokens):
        if token_id == vocab.mask_id:
            continue
        visible = _strip_marker(text)
        if visible in static:
            tags[token_id] = PlanningSource.STATIC_LIST
        elif _starts_uppercase(visible):
            tags[token_id] = PlanningSource.CAPITALIZED
    if vocab.eos_id not in tags:
        tags[vocab.eos_id] = PlanningSource.EOS
    return PlanningSet(member_ids=frozenset(tags), source_tags=tags)


def is_planning(planning_set: PlanningSet, token_id: int) -> bool:
    return token_id in planning_set.member_ids


def parse_static_list(text: str) -> list[str]:
    """Parse the one-entry-per-line list format.

    A line is a comment only when its first two characters are '# '; the bare
    line '#' is the single-character token. Blank lines are skipped.
    """
    entries = []
    for line in text.split("\n"):
        if line.startswith("# ") or line == "":
            continue
        entries.append(line)
    return entries


def load_static_list(path: str) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_static_list(fh.read())


def default_static_list() -> list[str]:
    """The shipped structural list (control flow, operators, punctuation, built-ins, methods, math)."""
    text = resources.files("dlmengine.data").joinpath("planning_tokens.txt").read_text("utf-8")
    return parse_static_list(text)
