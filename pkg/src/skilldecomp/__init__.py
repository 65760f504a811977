"""Ontology-grounded evaluation of LLM skill decompositions."""

from skilldecomp.errors import SkillDecompError

__version__ = "0.1.0"

__all__ = ["SkillDecompError", "__version__"]
