"""Zero-shot and few-shot prompt construction with leakage-safe exemplar selection."""

from __future__ import annotations

import statistics
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from string import Template

from skilldecomp.errors import InsufficientPoolError, LeakageError
from skilldecomp.normalize import token_normalize
from skilldecomp.ontology import BenchmarkItem, ConceptId, SkillOntology

TEMPLATE_VERSION = "v1"
EXEMPLAR_SLOTS = 5
SECTION_HEADERS = (
    ("context", "Context."),
    ("instruction", "Instruction."),
    ("input", "Input Text."),
    ("formatting", "Formatting Indicator."),
)


class Strategy(str, Enum):
    ZS = "ZS"
    FS = "FS"

    @property
    def display(self) -> str:
        return "Zero-shot" if self is Strategy.ZS else "Few-shot"


@dataclass(frozen=True)
class Decoding:
    temperature: float = 0.2
    top_p: float = 1.0
    max_tokens: int = 512


@dataclass(frozen=True)
class PromptControls:
    language: str = "fr"
    k: int = 5
    decoding: Decoding = field(default_factory=Decoding)
    allow_any_k: bool = False

    def __post_init__(self):
        if self.k < 1 or (not self.allow_any_k and not 5 <= self.k <= 12):
            raise ValueError(f"k={self.k} outside [5, 12]; set allow_any_k to override")
        if self.decoding.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Exemplar:
    parent_label: str
    child_labels: tuple[str, ...]
    parent_id: ConceptId
    depth_hint: int = 1


@dataclass(frozen=True)
class PromptText:
    text: str
    strategy: Strategy
    sections: dict[str, tuple[int, int]]
    parent_label: str = ""
    parent_id: ConceptId | None = None
    controls: PromptControls = field(default_factory=PromptControls)

    def section(self, name: str) -> str:
        start, end = self.sections[name]
        return self.text[start:end]


@lru_cache(maxsize=None)
def _template(name: str) -> Template:
    text = resources.files("skilldecomp.templates").joinpath(f"{name}_{TEMPLATE_VERSION}.txt").read_text(encoding="utf-8")
    return Template(text.rstrip("\n"))


def _sections(text: str) -> dict[str, tuple[int, int]]:
    # headers start a line, so a label that happens to contain one is skipped
    starts = []
    for name, header in SECTION_HEADERS:
        if text.startswith(header):
            pos = 0
        else:
            pos = text.find("\n" + header) + 1
        if pos == 0 and not text.startswith(header):
            raise ValueError(f"template lacks the {header!r} section")
        starts.append((name, pos))
    bounds = {}
    for idx, (name, pos) in enumerate(starts):
        end = starts[idx + 1][1] if idx + 1 < len(starts) else len(text)
        bounds[name] = (pos, end)
    return bounds


def _slots(k: int) -> str:
    return "s1, s2, ..., s" + str(k)


def build_zero_shot(parent_label: str, controls: PromptControls, parent_id: ConceptId | None = None) -> PromptText:
    if not parent_label.strip():
        raise ValueError("parent_label must be non-empty")
    text = _template("zero_shot").substitute(
        parent=parent_label, k=controls.k, lang=controls.language, slots=_slots(controls.k)
    )
    return PromptText(text, Strategy.ZS, _sections(text), parent_label, parent_id, controls)


def check_leakage(exemplars: Iterable[Exemplar], gold_labels: Iterable[str]) -> bool:
    """True when no exemplar child label matches a gold label after token normalization."""
    shown = {token_normalize(c) for ex in exemplars for c in ex.child_labels}
    gold = {token_normalize(g) for g in gold_labels}
    return not (shown & gold)


def build_few_shot(
    parent_label: str,
    exemplars: Sequence[Exemplar],
    controls: PromptControls,
    *,
    gold_labels: Iterable[str],
    parent_id: ConceptId | None = None,
) -> PromptText:
    if not parent_label.strip():
        raise ValueError("parent_label must be non-empty")
    if not exemplars:
        raise ValueError("few-shot prompts need at least one exemplar")
    if not check_leakage(exemplars, gold_labels):
        raise LeakageError(f"exemplars for {parent_label!r} reveal a gold child label")
    block = _template("exemplar_block")
    blocks = "\n".join(
        block.substitute(index=i, ex_parent=ex.parent_label, ex_children=", ".join(ex.child_labels))
        for i, ex in enumerate(exemplars, 1)
    )
    text = _template("few_shot").substitute(
        parent=parent_label,
        k=controls.k,
        lang=controls.language,
        slots=_slots(controls.k),
        k_fs=len(exemplars),
        exemplar_blocks=blocks,
    )
    return PromptText(text, Strategy.FS, _sections(text), parent_label, parent_id, controls)


def gold_lexical_forms(onto: SkillOntology, item: BenchmarkItem) -> set[str]:
    """Normalized preferred and alternative labels of every gold child."""
    return {token_normalize(form) for g in item.gold_children for form in onto.concept(g).lexical_forms}


def _mentions(label: str, gold: set[str]) -> bool:
    padded = f" {token_normalize(label)} "
    return any(f" {g} " in padded for g in gold)


def exemplar_for(onto: SkillOntology, item: BenchmarkItem, slots: int = EXEMPLAR_SLOTS) -> Exemplar:
    children = item.gold_children
    depths = [onto.depth_between(item.parent, c) or 0 for c in children]
    return Exemplar(
        parent_label=onto.label(item.parent),
        child_labels=tuple(onto.label(c) for c in children[:slots]),
        parent_id=item.parent,
        depth_hint=int(statistics.median_low(depths)) if depths else 0,
    )


def select_exemplars(
    onto: SkillOntology,
    target: BenchmarkItem,
    pool: Sequence[BenchmarkItem],
    k_fs: int = 2,
    seed: int = 0,
) -> list[Exemplar]:
    """Pick ``k_fs`` leakage-safe exemplars whose child depth is closest to the target's.

    Gold children are direct children, so the target depth is 1. Candidates
    whose parent label or shown child labels contain any lexical form of a
    target gold child as a whole-word span are skipped. Ranking is (depth gap, ConceptId); the
    result is a pure function of the inputs. ``seed`` is recorded by callers
    for provenance and does not change the ranking.
    """
    if k_fs not in (2, 3):
        raise ValueError("k_fs must be 2 or 3")
    target_depth = 1
    gold = gold_lexical_forms(onto, target)
    target_norm = token_normalize(onto.label(target.parent))
    safe: list[tuple[int, ConceptId, Exemplar]] = []
    for item in pool:
        if item.parent == target.parent or not item.gold_children:
            continue
        ex = exemplar_for(onto, item)
        if token_normalize(ex.parent_label) == target_norm:
            continue
        if any(_mentions(label, gold) for label in (ex.parent_label, *ex.child_labels)):
            continue
        safe.append((abs(ex.depth_hint - target_depth), item.parent, ex))
    if len(safe) < k_fs:
        raise InsufficientPoolError(f"only {len(safe)} leakage-safe exemplars for {target.parent!r}, need {k_fs}")
    safe.sort(key=lambda t: (t[0], t[1]))
    return [ex for _, _, ex in safe[:k_fs]]
