"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import itertools


def brute_force_matching(W) -> tuple[float, tuple[tuple[int, int], ...]]:
    """Best weight of a size-min(p, q) matching by exhaustive search.

    Returns the weight and the lexicographically smallest optimal pair tuple
    (ties decided with a 1e-12 slack).
    """
    p, q = len(W), len(W[0]) if W else 0
    if p == 0 or q == 0:
        return 0.0, ()
    if p <= q:
        candidates = [tuple(zip(range(p), cols)) for cols in itertools.permutations(range(q), p)]
    else:
        candidates = [tuple(sorted(zip(rows, range(q)))) for rows in itertools.permutations(range(p), q)]
    weights = [sum(W[i][j] for i, j in pairs) for pairs in candidates]
    best = max(weights)
    best_pairs = min(pairs for pairs, w in zip(candidates, weights) if w >= best - 1e-12)
    return best, best_pairs


def greedy_dedup(items, vectors, rho):
    """O(n^2) reference for first-kept greedy suppression."""
    kept = []
    for j in range(len(items)):
        ok = True
        for i in kept:
            s = 0.0
            for a, b in zip(vectors[i], vectors[j]):
                s += a * b
            if s >= rho:
                ok = False
                break
        if ok:
            kept.append(j)
    return [items[i] for i in kept]
