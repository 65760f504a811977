"""Skill ontology loading, graph queries, benchmark curation and dataset statistics.

The ontology is a directed graph over concepts whose edges are ``narrower``
relations (parent -> more specific child). ``broader`` edges read from SKOS
sources are folded in as inverted ``narrower`` edges, so there is a single
decomposition relation.
"""

from __future__ import annotations

import json
import logging
import statistics
from collections import deque
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass
from pathlib import Path
from types import MappingProxyType

from skilldecomp.errors import CycleError, DanglingEdgeError, ParseError, UnknownConceptError
from skilldecomp.normalize import token_normalize

log = logging.getLogger(__name__)

ConceptId = str

SKOS_NS = "http://www.w3.org/2004/02/skos/core#"


@dataclass(frozen=True)
class Concept:
    id: ConceptId
    pref_label: str
    alt_labels: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.id:
            raise ParseError("concept id must be non-empty")
        if not self.pref_label or not self.pref_label.strip():
            raise ParseError(f"concept {self.id!r} has an empty pref_label")

    @property
    def lexical_forms(self) -> frozenset[str]:
        return frozenset({self.pref_label}) | self.alt_labels


class SkillOntology:
    """Immutable concept graph. Safe to share between threads once built.

    Use :func:`load_ontology` or :meth:`from_records`; the constructor validates
    edges and rejects cycles.
    """

    def __init__(self, concepts: Mapping[ConceptId, Concept], narrower: Mapping[ConceptId, Iterable[ConceptId]]):
        self._concepts = dict(concepts)
        nar: dict[ConceptId, tuple[ConceptId, ...]] = {}
        for src, targets in narrower.items():
            if src not in self._concepts:
                raise DanglingEdgeError(src, src)
            uniq = set(targets)
            for t in uniq:
                if t not in self._concepts:
                    raise DanglingEdgeError(src, t)
            if uniq:
                nar[src] = tuple(sorted(uniq))
        self._narrower = nar
        bro: dict[ConceptId, set[ConceptId]] = {}
        for src, targets in nar.items():
            for t in targets:
                bro.setdefault(t, set()).add(src)
        self._broader = {k: tuple(sorted(v)) for k, v in bro.items()}
        self._check_acyclic()

        index: dict[str, set[ConceptId]] = {}
        for c in self._concepts.values():
            for form in c.lexical_forms:
                key = token_normalize(form)
                if key:
                    index.setdefault(key, set()).add(c.id)
        self._label_index = {k: frozenset(v) for k, v in index.items()}
        self._desc_cache: dict[ConceptId, frozenset[ConceptId]] = {}
        self.ignored_triples = 0

    @classmethod
    def from_records(cls, records: Iterable[Mapping]) -> SkillOntology:
        concepts: dict[ConceptId, Concept] = {}
        narrower: dict[ConceptId, list[ConceptId]] = {}
        for rec in records:
            cid = rec["id"]
            if cid in concepts:
                raise ParseError(f"duplicate concept id {cid!r}")
            concepts[cid] = Concept(cid, rec["pref_label"], frozenset(rec.get("alt_labels") or ()))
            narrower[cid] = list(rec.get("narrower") or ())
        return cls(concepts, narrower)

    def _check_acyclic(self) -> None:
        # iterative three-colour DFS; reports the first cycle found in id order
        WHITE, GREY, BLACK = 0, 1, 2
        colour = dict.fromkeys(self._concepts, WHITE)
        for root in sorted(self._narrower):
            if colour[root] != WHITE:
                continue
            stack = [(root, iter(self._narrower.get(root, ())))]
            path = [root]
            colour[root] = GREY
            while stack:
                node, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    colour[node] = BLACK
                    stack.pop()
                    path.pop()
                elif colour[nxt] == GREY:
                    cycle = path[path.index(nxt):] + [nxt]
                    raise CycleError(cycle)
                elif colour[nxt] == WHITE:
                    colour[nxt] = GREY
                    path.append(nxt)
                    stack.append((nxt, iter(self._narrower.get(nxt, ()))))

    # -- accessors -------------------------------------------------------

    @property
    def concepts(self) -> Mapping[ConceptId, Concept]:
        return MappingProxyType(self._concepts)

    @property
    def label_index(self) -> Mapping[str, frozenset[ConceptId]]:
        return MappingProxyType(self._label_index)

    def __len__(self) -> int:
        return len(self._concepts)

    def __contains__(self, cid: object) -> bool:
        return cid in self._concepts

    def _require(self, cid: ConceptId) -> None:
        if cid not in self._concepts:
            raise UnknownConceptError(cid)

    def concept(self, cid: ConceptId) -> Concept:
        self._require(cid)
        return self._concepts[cid]

    def label(self, cid: ConceptId) -> str:
        return self.concept(cid).pref_label

    def edge_count(self) -> int:
        return sum(len(v) for v in self._narrower.values())

    def parents(self, cid: ConceptId) -> tuple[ConceptId, ...]:
        self._require(cid)
        return self._broader.get(cid, ())

    def lookup_label(self, text: str) -> frozenset[ConceptId]:
        return self._label_index.get(token_normalize(text), frozenset())

    def iter_edges(self):
        for src in sorted(self._narrower):
            for t in self._narrower[src]:
                yield src, t

    def to_records(self) -> list[dict]:
        return [
            {
                "id": c.id,
                "pref_label": c.pref_label,
                "alt_labels": sorted(c.alt_labels),
                "narrower": list(self._narrower.get(c.id, ())),
            }
            for c in (self._concepts[k] for k in sorted(self._concepts))
        ]

    # -- graph queries ---------------------------------------------------

    def children(self, cid: ConceptId) -> tuple[ConceptId, ...]:
        self._require(cid)
        return self._narrower.get(cid, ())

    def descendants(self, cid: ConceptId) -> frozenset[ConceptId]:
        self._require(cid)
        cached = self._desc_cache.get(cid)
        if cached is not None:
            return cached
        seen: set[ConceptId] = set()
        stack = list(self._narrower.get(cid, ()))
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            stack.extend(self._narrower.get(node, ()))
        result = frozenset(seen)
        self._desc_cache[cid] = result
        return result

    def depth_between(self, u: ConceptId, v: ConceptId) -> int | None:
        """Minimum number of narrower hops from ``u`` down to ``v``; ``None`` if unreachable."""
        self._require(u)
        self._require(v)
        if u == v:
            return 0
        dist = {u: 0}
        queue = deque([u])
        while queue:
            node = queue.popleft()
            for nxt in self._narrower.get(node, ()):
                if nxt in dist:
                    continue
                dist[nxt] = dist[node] + 1
                if nxt == v:
                    return dist[nxt]
                queue.append(nxt)
        return None

    def neighborhood(self, cid: ConceptId, radius: int) -> frozenset[ConceptId]:
        """Descendants reachable within ``radius`` narrower hops (the node itself excluded)."""
        self._require(cid)
        dist = {cid: 0}
        queue = deque([cid])
        while queue:
            node = queue.popleft()
            if dist[node] == radius:
                continue
            for nxt in self._narrower.get(node, ()):
                if nxt not in dist:
                    dist[nxt] = dist[node] + 1
                    queue.append(nxt)
        del dist[cid]
        return frozenset(dist)

    def is_strictly_below(self, node: ConceptId, ancestor: ConceptId) -> bool:
        return node != ancestor and node in self.descendants(ancestor)


# -- loading ----------------------------------------------------------------


def _load_jsonl(text: str) -> SkillOntology:
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}: {exc.msg}") from exc
        if not isinstance(rec, dict) or "id" not in rec or "pref_label" not in rec:
            raise ParseError(f"line {lineno}: record needs 'id' and 'pref_label'")
        records.append(rec)
    return SkillOntology.from_records(records)


def _pick_literal(values: list, lang: str | None) -> list[str]:
    """Order literals: requested language first, then untagged, then the rest."""
    def rank(lit):
        tag = getattr(lit, "language", None)
        if lang is not None and tag == lang:
            return 0
        return 1 if tag is None else 2
    return [str(v) for v in sorted(values, key=lambda v: (rank(v), str(v)))]


def _load_turtle(text: str, lang: str | None = "fr") -> SkillOntology:
    import rdflib
    from rdflib.term import Literal

    graph = rdflib.Graph()
    try:
        graph.parse(data=text, format="turtle")
    except Exception as exc:  # rdflib raises several unrelated types
        raise ParseError(f"turtle parse failed: {exc}") from exc

    pref: dict[str, list] = {}
    alt: dict[str, list] = {}
    narrower: dict[str, set[str]] = {}
    mentioned: set[str] = set()
    ignored = 0
    for s, p, o in graph:
        pred = str(p)
        if not pred.startswith(SKOS_NS):
            ignored += 1
            continue
        local = pred[len(SKOS_NS):]
        subj = str(s)
        if local in ("prefLabel", "altLabel") and isinstance(o, Literal):
            (pref if local == "prefLabel" else alt).setdefault(subj, []).append(o)
        elif local == "narrower":
            narrower.setdefault(subj, set()).add(str(o))
            mentioned.update((subj, str(o)))
        elif local == "broader":
            narrower.setdefault(str(o), set()).add(subj)
            mentioned.update((subj, str(o)))
        else:
            ignored += 1
    if ignored:
        log.warning("turtle reader ignored %d triples outside the supported SKOS subset", ignored)

    concepts: dict[str, Concept] = {}
    for cid, labels in pref.items():
        ordered = _pick_literal(labels, lang)
        chosen = ordered[0]
        alts = {str(v) for v in alt.get(cid, []) if lang is None or getattr(v, "language", None) in (lang, None)}
        concepts[cid] = Concept(cid, chosen, frozenset(alts))
    for cid in sorted(mentioned):
        if cid not in concepts:
            src = next((s for s, ts in sorted(narrower.items()) if cid in ts), cid)
            raise DanglingEdgeError(src, cid)
    onto = SkillOntology(concepts, narrower)
    onto.ignored_triples = ignored
    return onto


def load_ontology(source: str | Path, fmt: str | None = None, *, lang: str | None = "fr") -> SkillOntology:
    """Load an ontology from a JSON-lines or SKOS-Turtle file.

    ``fmt`` is ``"jsonl"`` or ``"turtle"``; when omitted it is inferred from the
    file suffix (``.ttl`` means Turtle, anything else JSON-lines). ``lang``
    selects which language's prefLabel wins in Turtle sources.
    """
    path = Path(source)
    if fmt is None:
        fmt = "turtle" if path.suffix.lower() in (".ttl", ".turtle") else "jsonl"
    text = path.read_text(encoding="utf-8")
    if fmt == "jsonl":
        return _load_jsonl(text)
    if fmt == "turtle":
        return _load_turtle(text, lang=lang)
    raise ValueError(f"unknown ontology format {fmt!r}")


def loads_ontology(text: str, fmt: str = "jsonl", *, lang: str | None = "fr") -> SkillOntology:
    if fmt == "jsonl":
        return _load_jsonl(text)
    if fmt == "turtle":
        return _load_turtle(text, lang=lang)
    raise ValueError(f"unknown ontology format {fmt!r}")


# -- benchmark ----------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkItem:
    parent: ConceptId
    gold_children: tuple[ConceptId, ...]
    k_target: int

    def to_dict(self) -> dict:
        return {"parent": self.parent, "gold_children": list(self.gold_children), "k_target": self.k_target}


def make_item(onto: SkillOntology, parent: ConceptId, k_min: int = 5, k_max: int = 12) -> BenchmarkItem:
    """Build an item for any parent; ``k_target`` clamps the gold size into ``[k_min, k_max]``."""
    gold = onto.children(parent)
    return BenchmarkItem(parent, gold, max(k_min, min(k_max, len(gold))))


def curate_benchmark(onto: SkillOntology, k_min: int = 5, k_max: float = 12) -> list[BenchmarkItem]:
    if not (1 <= k_min <= k_max):
        raise ValueError(f"need 1 <= k_min <= k_max, got {k_min}, {k_max}")
    items = []
    for parent in sorted(onto.concepts):
        n = len(onto.children(parent))
        if k_min <= n <= k_max:
            items.append(BenchmarkItem(parent, onto.children(parent), n))
    return items


@dataclass(frozen=True)
class OntologyStats:
    total_concepts: int
    parent_count: int
    narrower_edge_count: int
    mean_children: float
    median_children: float
    std_children: float
    min_children: int
    max_children: int
    parents_in_band: int
    k_min: int = 5
    k_max: int = 12

    def to_dict(self) -> dict:
        return asdict(self)

    def rows(self) -> list[tuple[str, str]]:
        return [
            ("Total labeled concepts (nodes)", str(self.total_concepts)),
            ("Parents with at least one child", str(self.parent_count)),
            ("Total skos:narrower edges", str(self.narrower_edge_count)),
            ("Average children per parent", f"{self.mean_children:.2f}"),
            ("Median children per parent", f"{self.median_children:.2f}"),
            ("Std. dev. of children per parent", f"{self.std_children:.2f}"),
            ("Min children per parent", str(self.min_children)),
            ("Max children per parent", str(self.max_children)),
            (f"Parents with {self.k_min}--{self.k_max} children", str(self.parents_in_band)),
        ]

    def render_text(self) -> str:
        rows = self.rows()
        width = max(len(name) for name, _ in rows)
        vwidth = max(len(v) for _, v in rows)
        return "\n".join(f"{name:<{width}}  {value:>{vwidth}}" for name, value in rows)


def ontology_stats(onto: SkillOntology, k_min: int = 5, k_max: int = 12) -> OntologyStats:
    """Child-count statistics over nodes with at least one narrower child.

    The standard deviation is the sample estimate (n - 1 denominator).
    """
    counts = [len(onto.children(c)) for c in onto.concepts if onto.children(c)]
    if not counts:
        return OntologyStats(len(onto), 0, 0, 0.0, 0.0, 0.0, 0, 0, 0, k_min, k_max)
    std = statistics.stdev(counts) if len(counts) > 1 else 0.0
    return OntologyStats(
        total_concepts=len(onto),
        parent_count=len(counts),
        narrower_edge_count=sum(counts),
        mean_children=statistics.fmean(counts),
        median_children=float(statistics.median(counts)),
        std_children=std,
        min_children=min(counts),
        max_children=max(counts),
        parents_in_band=sum(1 for n in counts if k_min <= n <= k_max),
        k_min=k_min,
        k_max=k_max,
    )
