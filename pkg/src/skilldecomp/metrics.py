"""Matching-based semantic and hierarchy-aware precision/recall/F1.

Predictions and gold children are compared through a cosine matrix ``S``
(rows = predictions, columns = gold). A maximum-weight one-to-one matching
gives the matched mass ``sigma``; precision is ``sigma / p`` and recall
``sigma / q``. The hierarchy-aware variant runs the same matching on ``S``
scaled by a discrete placement credit.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from skilldecomp.align import AlignmentResult, Outcome
from skilldecomp.errors import DimensionMismatchError
from skilldecomp.ontology import ConceptId, SkillOntology

EXACT_CREDIT = 1.0
DEEPER_CREDIT = 0.5
TIE_TOL = 1e-10


@dataclass(frozen=True)
class MetricsConfig:
    epsilon: float = 1e-8
    clamp_negative: bool = True

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class SimilarityMatrix:
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("similarity matrix must be 2-D")
        if not np.all(np.isfinite(arr)):
            raise ValueError("similarity matrix entries must be finite")
        object.__setattr__(self, "values", arr)

    @property
    def p(self) -> int:
        return self.values.shape[0]

    @property
    def q(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Matching:
    pairs: tuple[tuple[int, int], ...]
    total_weight: float


@dataclass(frozen=True)
class Scores:
    P: float
    R: float
    F1: float
    sigma: float = 0.0


ZERO = Scores(0.0, 0.0, 0.0, 0.0)


# -- assignment ---------------------------------------------------------------


def _hungarian_min(cost: list[list[float]]) -> tuple[list[int], list[float], list[float]]:
    """Shortest-augmenting-path Hungarian method on a square cost matrix.

    Returns the row->column assignment plus row and column potentials ``u``,
    ``v`` with ``cost[i][j] - u[i] - v[j] >= 0`` everywhere and equality on
    assigned pairs.
    """
    n = len(cost)
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    match_col = [0] * (n + 1)  # match_col[j] = row (1-based) holding column j
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        match_col[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = match_col[j0]
            row = cost[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match_col[j0] = match_col[j1]
            j0 = j1
    assignment = [0] * n
    for j in range(1, n + 1):
        assignment[match_col[j] - 1] = j - 1
    return assignment, u[1:], v[1:]


def _has_perfect_matching(adj: list[list[int]], rows: list[int], cols: set[int]) -> bool:
    owner: dict[int, int] = {}

    def augment(r: int, seen: set[int]) -> bool:
        for c in adj[r]:
            if c in cols and c not in seen:
                seen.add(c)
                if c not in owner or augment(owner[c], seen):
                    owner[c] = r
                    return True
        return False

    return all(augment(r, set()) for r in rows)


def hungarian_max(matrix: SimilarityMatrix | np.ndarray) -> Matching:
    """Maximum-weight matching of size ``min(p, q)``.

    The matrix is padded to square with zero-weight dummy entries and solved
    as a minimum-cost assignment on ``1 - S``. Among all optimal matchings the
    lexicographically smallest sorted pair list is returned: every optimum is a
    perfect matching of the tight-edge subgraph of the optimal duals, so rows
    are fixed greedily to the smallest column that still completes one.
    """
    W = matrix.values if isinstance(matrix, SimilarityMatrix) else np.asarray(matrix, dtype=np.float64)
    p, q = W.shape
    if p == 0 or q == 0:
        return Matching((), 0.0)
    n = max(p, q)
    padded = np.zeros((n, n))
    padded[:p, :q] = W
    cost = (1.0 - padded).tolist()
    _, u, v = _hungarian_min(cost)
    scale = max(1.0, float(np.max(np.abs(padded))))
    tol = TIE_TOL * scale * n
    adj = [[j for j in range(n) if cost[i][j] - u[i] - v[j] <= tol] for i in range(n)]

    chosen: dict[int, int] = {}
    free_cols = set(range(n))
    for i in range(n):
        rest = [r for r in range(i + 1, n)]
        # real columns first, in order; a dummy column (j >= q) means "unmatched"
        options = [j for j in adj[i] if j in free_cols and j < q]
        dummies = [j for j in adj[i] if j in free_cols and j >= q]
        if dummies:
            options.append(dummies[0])
        for j in options:
            if _has_perfect_matching(adj, rest, free_cols - {j}):
                chosen[i] = j
                free_cols.discard(j)
                break
        else:  # pragma: no cover - unreachable with valid duals
            raise RuntimeError("tight-edge subgraph lost its perfect matching")
    pairs = tuple(sorted((i, j) for i, j in chosen.items() if i < p and j < q))
    weight = float(sum(W[i, j] for i, j in pairs))
    return Matching(pairs, weight)


# -- scores -------------------------------------------------------------------


def similarity_matrix(
    predictions: Sequence[str],
    gold_labels: Sequence[str],
    embedder,
    config: MetricsConfig = MetricsConfig(),
) -> SimilarityMatrix:
    p, q = len(predictions), len(gold_labels)
    if p == 0 or q == 0:
        return SimilarityMatrix(np.zeros((p, q)))
    vecs = embedder.embed_batch(list(predictions) + list(gold_labels))
    A = np.stack([vec.values for vec in vecs[:p]])
    B = np.stack([vec.values for vec in vecs[p:]])
    S = A @ B.T
    if config.clamp_negative:
        S = np.clip(S, 0.0, 1.0)
    return SimilarityMatrix(S)


def f1(precision: float, recall: float, epsilon: float) -> float:
    return 2.0 * precision * recall / (precision + recall + epsilon)


def semantic_scores(matrix: SimilarityMatrix, config: MetricsConfig = MetricsConfig()) -> Scores:
    p, q = matrix.p, matrix.q
    if p == 0 or q == 0:
        return ZERO
    sigma = hungarian_max(matrix).total_weight
    P, R = sigma / p, sigma / q
    return Scores(P, R, f1(P, R, config.epsilon), sigma)


def credit(onto: SkillOntology, alignment: AlignmentResult, gold_child: ConceptId) -> float:
    if alignment.outcome is Outcome.UNVERIFIABLE or alignment.node is None:
        return 0.0
    if alignment.node == gold_child:
        return EXACT_CREDIT
    if onto.is_strictly_below(alignment.node, gold_child):
        return DEEPER_CREDIT
    return 0.0


def credit_matrix(
    matrix: SimilarityMatrix,
    alignments: Sequence[AlignmentResult],
    gold: Sequence[ConceptId],
    onto: SkillOntology,
) -> SimilarityMatrix:
    if len(alignments) != matrix.p or len(gold) != matrix.q:
        raise DimensionMismatchError(
            f"matrix is {matrix.p}x{matrix.q} but got {len(alignments)} alignments and {len(gold)} gold children"
        )
    C = np.array([[credit(onto, a, g) for g in gold] for a in alignments], dtype=np.float64).reshape(matrix.p, matrix.q)
    return SimilarityMatrix(matrix.values * C)


def hier_scores(H: SimilarityMatrix, config: MetricsConfig = MetricsConfig()) -> Scores:
    return semantic_scores(H, config)


# -- aggregation --------------------------------------------------------------


@dataclass(frozen=True)
class ParentScores:
    parent: ConceptId
    p: int
    q: int
    sem: Scores
    hier: Scores
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ParentScores:
        return cls(d["parent"], d["p"], d["q"], Scores(**d["sem"]), Scores(**d["hier"]), d["wall_time"])


METRIC_KEYS = ("P_sem", "R_sem", "F1_sem", "P_hier", "R_hier", "F1_hier")


def _metric_values(ps: ParentScores) -> tuple[float, ...]:
    return (ps.sem.P, ps.sem.R, ps.sem.F1, ps.hier.P, ps.hier.R, ps.hier.F1)


@dataclass
class MacroReport:
    per_parent: list[ParentScores]
    macro: dict[str, float]
    parent_count: int
    model_name: str = ""
    strategy: str = ""
    benchmark_id: str = ""
    excluded_count: int = 0
    # macro F1 is the mean of per-parent F1, not F1 of the macro P and R
    f1_averaging: str = field(default="per-parent")

    def to_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "strategy": self.strategy,
            "benchmark_id": self.benchmark_id,
            "parent_count": self.parent_count,
            "excluded_count": self.excluded_count,
            "f1_averaging": self.f1_averaging,
            "macro": dict(self.macro),
            "per_parent": [ps.to_dict() for ps in self.per_parent],
        }

    @classmethod
    def from_dict(cls, d: dict) -> MacroReport:
        return cls(
            per_parent=[ParentScores.from_dict(x) for x in d["per_parent"]],
            macro=dict(d["macro"]),
            parent_count=d["parent_count"],
            model_name=d.get("model_name", ""),
            strategy=d.get("strategy", ""),
            benchmark_id=d.get("benchmark_id", ""),
            excluded_count=d.get("excluded_count", 0),
            f1_averaging=d.get("f1_averaging", "per-parent"),
        )


def macro_average(per_parent: Sequence[ParentScores], **meta) -> MacroReport:
    if not per_parent:
        raise ValueError("macro_average needs at least one parent")
    n = len(per_parent)
    cols = list(zip(*(_metric_values(ps) for ps in per_parent)))
    macro = {key: math.fsum(col) / n for key, col in zip(METRIC_KEYS, cols)}
    return MacroReport(list(per_parent), macro, n, **meta)


def score_parent(
    parent: ConceptId,
    predictions: Sequence[str],
    gold: Sequence[ConceptId],
    alignments: Sequence[AlignmentResult],
    onto: SkillOntology,
    embedder,
    config: MetricsConfig = MetricsConfig(),
    wall_time: float = 0.0,
) -> ParentScores:
    """Semantic and hierarchy-aware scores for one parent."""
    S = similarity_matrix(predictions, [onto.label(g) for g in gold], embedder, config)
    sem = semantic_scores(S, config)
    if S.p == 0 or S.q == 0:
        return ParentScores(parent, S.p, S.q, ZERO, ZERO, wall_time)
    H = credit_matrix(S, alignments, gold, onto)
    return ParentScores(parent, S.p, S.q, sem, hier_scores(H, config), wall_time)
