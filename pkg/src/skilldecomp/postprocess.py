"""Raw-list checks, normalization and near-duplicate suppression for candidate lists."""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from skilldecomp.normalize import DEFAULT_POLICY, NormalizationPolicy, normalize, token_normalize

__all__ = [
    "DedupPolicy",
    "FilterReport",
    "NormalizationPolicy",
    "SurfacePolicy",
    "dedup",
    "load_lexicon",
    "normalize",
    "normalize_all",
    "surface_filter",
]

PARENT_REPETITION = "parent-repetition"
TOO_SHORT = "too-short"
TOO_LONG = "too-long"
BLOCKLIST = "blocklist"
VERB_HEAD = "verb-head"


def load_lexicon(source: str | Path | None = None, *, name: str | None = None) -> frozenset[str]:
    """Read a one-entry-per-line lexicon; ``#`` starts a comment line.

    Pass ``name`` to read one of the lexicons bundled with the package.
    """
    if name is not None:
        text = resources.files("skilldecomp.lexicons").joinpath(name).read_text(encoding="utf-8")
    elif source is not None:
        text = Path(source).read_text(encoding="utf-8")
    else:
        return frozenset()
    entries = (token_normalize(line) for line in text.splitlines() if not line.lstrip().startswith("#"))
    return frozenset(e for e in entries if e)


@dataclass(frozen=True)
class SurfacePolicy:
    min_chars: int = 3
    max_chars: int = 80
    max_words: int = 8
    type_blocklist: frozenset[str] = frozenset()
    verb_head_stoplist: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.min_chars >= self.max_chars:
            raise ValueError("min_chars must be below max_chars")

    @classmethod
    def with_default_lexicons(cls, **kw) -> SurfacePolicy:
        return cls(
            type_blocklist=load_lexicon(name="type_blocklist.txt"),
            verb_head_stoplist=load_lexicon(name="verb_heads.txt"),
            **kw,
        )

    def to_dict(self) -> dict:
        return {
            "min_chars": self.min_chars,
            "max_chars": self.max_chars,
            "max_words": self.max_words,
            "type_blocklist": sorted(self.type_blocklist),
            "verb_head_stoplist": sorted(self.verb_head_stoplist),
        }


@dataclass(frozen=True)
class DedupPolicy:
    rho: float = 0.90
    keep: str = "first-in-order"

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        if self.keep != "first-in-order":
            raise ValueError("only the first-in-order keep rule is supported")


@dataclass
class FilterReport:
    dropped: list[tuple[str, str]] = field(default_factory=list)
    kept_count: int = 0

    def to_dict(self) -> dict:
        return {"kept_count": self.kept_count, "dropped": [list(d) for d in self.dropped]}

    @property
    def input_count(self) -> int:
        return self.kept_count + len(self.dropped)


def normalize_all(items: Iterable[str], policy: NormalizationPolicy = DEFAULT_POLICY) -> list[str]:
    return [normalize(item, policy) for item in items]


def surface_filter(items: Sequence[str], parent_label: str, policy: SurfacePolicy = SurfacePolicy()) -> tuple[list[str], FilterReport]:
    """Drop parent repetitions, out-of-bounds lengths, blocklisted types and verb-headed items.

    ``items`` are expected to be normalized already; the parent label is
    normalized here with the default policy.
    """
    parent = token_normalize(parent_label)
    kept: list[str] = []
    report = FilterReport()
    for item in items:
        words = item.split()
        if item == parent:
            reason = PARENT_REPETITION
        elif len(item) < policy.min_chars:
            reason = TOO_SHORT
        elif len(item) > policy.max_chars or len(words) > policy.max_words:
            reason = TOO_LONG
        elif item in policy.type_blocklist:
            reason = BLOCKLIST
        elif words and words[0] in policy.verb_head_stoplist:
            reason = VERB_HEAD
        else:
            kept.append(item)
            continue
        report.dropped.append((item, reason))
    report.kept_count = len(kept)
    return kept, report


def dedup(items: Sequence[str], policy: DedupPolicy, embedder) -> tuple[list[str], FilterReport]:
    """Greedy near-duplicate suppression in generation order.

    An item is dropped when its cosine to any already-kept item is at least
    ``rho``; the report names the first kept item it collided with.
    """
    report = FilterReport()
    if not items:
        return [], report
    vecs = [v.values for v in embedder.embed_batch(list(items))]
    kept_idx: list[int] = []
    for j, item in enumerate(items):
        clash = next((i for i in kept_idx if float(np.dot(vecs[i], vecs[j])) >= policy.rho), None)
        if clash is None:
            kept_idx.append(j)
        else:
            report.dropped.append((item, f"duplicate-of({items[clash]})"))
    report.kept_count = len(kept_idx)
    return [items[i] for i in kept_idx], report
