"""Exception hierarchy shared by all pipeline stages."""

from __future__ import annotations


class SkillDecompError(Exception):
    """Base class for every error raised by this package."""


class OntologyError(SkillDecompError):
    pass


class ParseError(OntologyError):
    pass


class DanglingEdgeError(OntologyError):
    def __init__(self, source: str, target: str):
        super().__init__(f"edge {source!r} -> {target!r} points to undeclared concept {target!r}")
        self.source = source
        self.target = target


class CycleError(OntologyError):
    def __init__(self, cycle: list[str]):
        super().__init__("narrower cycle detected: " + " -> ".join(cycle))
        self.cycle = cycle


class UnknownConceptError(OntologyError, KeyError):
    def __init__(self, concept_id: str):
        super().__init__(concept_id)
        self.concept_id = concept_id

    def __str__(self) -> str:
        return f"unknown concept {self.concept_id!r}"


class EmbeddingError(SkillDecompError):
    pass


class EmptyTextError(EmbeddingError, ValueError):
    pass


class DimensionMismatchError(EmbeddingError, ValueError):
    pass


class BackendError(SkillDecompError):
    """A remote backend (embedding or LLM) failed after retries."""


class AuthError(BackendError):
    pass


class LeakageError(SkillDecompError):
    pass


class InsufficientPoolError(SkillDecompError):
    pass


class EmptyCompletionError(SkillDecompError):
    pass


class UnknownScenarioError(SkillDecompError, ValueError):
    pass


class NoFreshLatencyError(SkillDecompError):
    pass


class BenchmarkMismatchError(SkillDecompError):
    pass
