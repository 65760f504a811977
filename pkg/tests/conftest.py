from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from skilldecomp.embedding import EmbeddingProvider, EmbeddingVector, ProviderConfig
from skilldecomp.ontology import SkillOntology, load_ontology

DATA = Path(__file__).parent / "data"
FIXTURE = DATA / "fixture_ontology.jsonl"


@pytest.fixture(scope="session")
def fixture_path() -> Path:
    return FIXTURE


@pytest.fixture(scope="session")
def onto() -> SkillOntology:
    return load_ontology(FIXTURE)


@pytest.fixture
def embedder() -> EmbeddingProvider:
    return EmbeddingProvider(ProviderConfig.deterministic())


class TableEmbedder:
    """Embedder stub backed by a text -> vector table."""

    provider_id = "table"

    def __init__(self, table: dict[str, list[float]]):
        self.table = {k: np.asarray(v, dtype=float) / np.linalg.norm(v) for k, v in table.items()}
        self.calls = 0

    def embed_batch(self, texts):
        self.calls += 1
        return [EmbeddingVector(self.table[t], self.provider_id) for t in texts]


def chain_ontology(*edges: tuple[str, str], labels: dict[str, str] | None = None) -> SkillOntology:
    nodes = sorted({n for e in edges for n in e})
    labels = labels or {}
    return SkillOntology.from_records(
        {"id": n, "pref_label": labels.get(n, n), "narrower": [b for a, b in edges if a == n]} for n in nodes
    )


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(name: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
