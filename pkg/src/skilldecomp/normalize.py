"""Unicode-aware label normalization used for lookups, leakage checks and candidates."""

from __future__ import annotations

import unicodedata
from dataclasses import asdict, dataclass

SOFT_HYPHEN = "­"


@dataclass(frozen=True)
class NormalizationPolicy:
    casefold: bool = True
    unicode_form: str = "NFKC"
    collapse_whitespace: bool = True
    strip_edge_punctuation: bool = True
    dehyphenate: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_POLICY = NormalizationPolicy()


def _is_edge_junk(ch: str) -> bool:
    cat = unicodedata.category(ch)
    return ch.isspace() or cat.startswith("P") or cat in ("Cf", "Cc")


def normalize(item: str, policy: NormalizationPolicy = DEFAULT_POLICY) -> str:
    """Normalize one label. Deterministic and idempotent for every policy.

    >>> normalize("  Data   Cleaning. ")
    'data cleaning'
    """
    text = item
    if policy.dehyphenate:
        # soft hyphens join the word halves; visible hyphens stay
        text = text.replace(SOFT_HYPHEN, "")
    text = unicodedata.normalize(policy.unicode_form, text)
    if policy.casefold:
        # casefold can emit decomposed sequences, so renormalize afterwards
        text = unicodedata.normalize(policy.unicode_form, text.casefold())
    if policy.collapse_whitespace:
        text = " ".join(text.split())
    if policy.strip_edge_punctuation:
        start, end = 0, len(text)
        while start < end and _is_edge_junk(text[start]):
            start += 1
        while end > start and _is_edge_junk(text[end - 1]):
            end -= 1
        text = text[start:end]
    return text


def token_normalize(label: str) -> str:
    """The fixed normalization used for the ontology label index and leakage checks."""
    return normalize(label, DEFAULT_POLICY)
