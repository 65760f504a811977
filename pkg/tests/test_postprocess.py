import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from skilldecomp.embedding import deterministic_test_embed
from skilldecomp.postprocess import (
    DedupPolicy,
    SurfacePolicy,
    dedup,
    load_lexicon,
    normalize_all,
    surface_filter,
)

from conftest import TableEmbedder
from oracles import greedy_dedup


def test_parent_repetition():
    kept, rep = surface_filter(["data analysis", "data cleaning"], "Data Analysis", SurfacePolicy())
    assert kept == ["data cleaning"]
    assert rep.dropped == [("data analysis", "parent-repetition")]
    assert rep.kept_count + len(rep.dropped) == 2


def test_length_and_word_bounds():
    long_words = "a b c d e f g h i"
    kept, rep = surface_filter(["x", "abc", "y" * 81, long_words], "p", SurfacePolicy())
    assert kept == ["abc"]
    assert [r for _, r in rep.dropped] == ["too-short", "too-long", "too-long"]


def test_blocklist_and_verb_head():
    policy = SurfacePolicy(type_blocklist=frozenset({"excel"}), verb_head_stoplist=frozenset({"use"}))
    kept, rep = surface_filter(["excel", "use excel", "excel macros"], "p", policy)
    assert kept == ["excel macros"]
    assert rep.dropped == [("excel", "blocklist"), ("use excel", "verb-head")]


def test_default_lexicons_load():
    policy = SurfacePolicy.with_default_lexicons()
    assert "excel" in policy.type_blocklist
    assert policy.verb_head_stoplist
    assert load_lexicon() == frozenset()


def test_lexicon_file(tmp_path):
    path = tmp_path / "lex.txt"
    path.write_text("# comment\nMS  Excel\n\nplombier\n", encoding="utf-8")
    assert load_lexicon(path) == {"ms excel", "plombier"}


def test_policy_validation():
    with pytest.raises(ValueError):
        SurfacePolicy(min_chars=10, max_chars=10)
    with pytest.raises(ValueError):
        DedupPolicy(rho=0)


@given(st.lists(st.text(max_size=30), max_size=10), st.text(min_size=1, max_size=20))
def test_surface_monotone_and_accounting(items, parent):
    norm = normalize_all(items)
    kept, rep = surface_filter(norm, parent, SurfacePolicy.with_default_lexicons())
    assert rep.kept_count + len(rep.dropped) == len(norm)
    assert all(k in norm for k in kept)
    assert normalize_all([parent])[0] not in kept


def test_dedup_identical(embedder):
    kept, rep = dedup(["data cleaning", "data cleaning"], DedupPolicy(), embedder)
    assert kept == ["data cleaning"]
    assert rep.dropped == [("data cleaning", "duplicate-of(data cleaning)")]


def test_dedup_orthogonal():
    emb = TableEmbedder({"a": [1, 0, 0], "b": [0, 1, 0], "c": [0, 0, 1]})
    kept, rep = dedup(["a", "b", "c"], DedupPolicy(), emb)
    assert kept == ["a", "b", "c"] and not rep.dropped


def test_dedup_empty(embedder):
    assert dedup([], DedupPolicy(), embedder)[0] == []


VOCAB = ["data", "cleaning", "clean", "analysis", "sql", "query", "querying", "report", "reports", "model", "models"]


def random_list(rng):
    out = []
    for _ in range(rng.randint(0, 12)):
        base = " ".join(rng.choice(VOCAB) for _ in range(rng.randint(1, 3)))
        if out and rng.random() < 0.3:
            base = rng.choice(out) + rng.choice(["", "s", "!"])
        out.append(base)
    return out


@pytest.mark.parametrize("seed", range(100))
def test_dedup_against_greedy_oracle(seed, embedder):
    rng = random.Random(seed)
    items = random_list(rng)
    vecs = [deterministic_test_embed(t).values.tolist() for t in items]
    kept, rep = dedup(items, DedupPolicy(0.90), embedder)
    assert kept == greedy_dedup(items, vecs, 0.90)
    assert rep.kept_count + len(rep.dropped) == len(items)
    for i, a in enumerate(kept):
        for b in kept[i + 1:]:
            va, vb = deterministic_test_embed(a).values, deterministic_test_embed(b).values
            assert float(va @ vb) < 0.90
