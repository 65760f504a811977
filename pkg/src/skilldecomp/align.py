"""Alignment of free-text candidates to descendants of a parent concept."""

from __future__ import annotations

from collections.abc import Collection, Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np

from skilldecomp.ontology import ConceptId, SkillOntology


class Outcome(str, Enum):
    EXACT_CHILD = "ExactChild"
    DEEPER_DESCENDANT = "DeeperDescendant"
    OTHER_DESCENDANT = "OtherDescendant"
    UNVERIFIABLE = "Unverifiable"


@dataclass(frozen=True)
class AlignerConfig:
    tau: float = 0.78

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")


@dataclass(frozen=True)
class AlignmentResult:
    candidate: str
    node: ConceptId | None
    score: float | None
    outcome: Outcome
    gold: ConceptId | None = None  # the gold child behind ExactChild / DeeperDescendant
    no_descendants: bool = False

    def to_dict(self) -> dict:
        return {
            "candidate": self.candidate,
            "node": self.node,
            "score": self.score,
            "outcome": self.outcome.value,
            "gold": self.gold,
        }


@dataclass(frozen=True)
class ClosedWorldConfig:
    enabled: bool = False
    radius_d: int = 1

    def __post_init__(self):
        if self.enabled and self.radius_d < 1:
            raise ValueError("radius_d must be >= 1 when the closed world is enabled")


def _best_match(candidate: str, onto: SkillOntology, nodes: Collection[ConceptId], embedder) -> tuple[ConceptId, float] | None:
    if not nodes:
        return None
    ordered = sorted(nodes)
    vecs = embedder.embed_batch([candidate] + [onto.label(v) for v in ordered])
    cand = vecs[0].values
    scores = np.array([float(np.dot(cand, v.values)) for v in vecs[1:]])
    # argmax returns the first maximum, i.e. the smallest ConceptId among ties
    best = int(np.argmax(scores))
    return ordered[best], float(scores[best])


def classify(onto: SkillOntology, node: ConceptId, gold: Collection[ConceptId]) -> tuple[Outcome, ConceptId | None]:
    if node in gold:
        return Outcome.EXACT_CHILD, node
    above = sorted(g for g in gold if onto.is_strictly_below(node, g))
    if above:
        # every ancestor gold child yields the same partial credit; smallest id wins
        return Outcome.DEEPER_DESCENDANT, above[0]
    return Outcome.OTHER_DESCENDANT, None


def align(
    candidate: str,
    onto: SkillOntology,
    parent: ConceptId,
    gold: Collection[ConceptId],
    embedder,
    config: AlignerConfig = AlignerConfig(),
) -> AlignmentResult:
    """Link ``candidate`` to its most similar descendant of ``parent``, or to nothing.

    Similarity is cosine against each descendant's preferred label. The link
    is accepted when the best score reaches ``config.tau``.
    """
    desc = onto.descendants(parent)
    found = _best_match(candidate, onto, desc, embedder)
    if found is None:
        return AlignmentResult(candidate, None, None, Outcome.UNVERIFIABLE, no_descendants=True)
    node, score = found
    if score < config.tau:
        return AlignmentResult(candidate, None, score, Outcome.UNVERIFIABLE)
    outcome, g = classify(onto, node, gold)
    return AlignmentResult(candidate, node, score, outcome, g)


def align_all(
    candidates: Sequence[str],
    onto: SkillOntology,
    parent: ConceptId,
    gold: Collection[ConceptId],
    embedder,
    config: AlignerConfig = AlignerConfig(),
) -> list[AlignmentResult]:
    return [align(c, onto, parent, gold, embedder, config) for c in candidates]


def closed_world_filter(
    candidates: Sequence[str],
    onto: SkillOntology,
    parent: ConceptId,
    cw: ClosedWorldConfig,
    embedder,
    tau: float = 0.78,
) -> list[str]:
    """Keep candidates whose best label match within ``radius_d`` hops of ``parent`` clears ``tau``."""
    if not cw.enabled:
        raise ValueError("closed_world_filter requires an enabled ClosedWorldConfig")
    hood = onto.neighborhood(parent, cw.radius_d)
    kept = []
    for c in candidates:
        found = _best_match(c, onto, hood, embedder)
        if found is not None and found[1] >= tau:
            kept.append(c)
    return kept
