"""LLM generation: HTTP chat backend or offline mocks, completion cache, list parsing."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from collections.abc import Callable, Mapping
from dataclasses import asdict, dataclass, field
from pathlib import Path

from filelock import FileLock

from skilldecomp.errors import AuthError, BackendError, EmptyCompletionError, UnknownScenarioError
from skilldecomp.ontology import BenchmarkItem, ConceptId, SkillOntology
from skilldecomp.prompts import PromptText, Strategy

log = logging.getLogger(__name__)

MOCK = "mock"
SCENARIOS = ("echo-gold", "perturbed-gold", "off-topic", "wrong-k", "duplicate-heavy")


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    backoff: float = 1.0  # seconds, doubled after each failed attempt

    def __post_init__(self):
        if self.attempts < 1:
            raise ValueError("attempts must be >= 1")


@dataclass(frozen=True)
class GeneratorConfig:
    endpoint: str = MOCK
    model_name: str = "mock"
    auth_env_var: str = "LLM_API_KEY"
    max_in_flight: int = 4
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    request_timeout: float = 120.0
    # mock-only knobs
    mock_scenario: str = "echo-gold"
    mock_delay: float | None = None
    mock_jitter: float = 0.0

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RawCompletion:
    text: str
    wall_time: float
    model_name: str
    prompt_hash: str
    cached: bool = False


@dataclass(frozen=True)
class CandidateList:
    items: tuple[str, ...]
    source_strategy: Strategy
    cardinality_flag: bool = False
    format_warning: bool = False

    def to_dict(self) -> dict:
        return {
            "items": list(self.items),
            "source_strategy": self.source_strategy.value,
            "cardinality_flag": self.cardinality_flag,
            "format_warning": self.format_warning,
        }


def prompt_hash(prompt: PromptText | str) -> str:
    text = prompt.text if isinstance(prompt, PromptText) else prompt
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# -- completion cache -------------------------------------------------------------


def _decoding_of(prompt: PromptText) -> dict:
    return asdict(prompt.controls.decoding)


class CompletionCache:
    """Append-only JSON-lines store of completions keyed by model, prompt hash and decoding."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._file_lock = FileLock(str(self.path) + ".lock")
        self._records: dict[str, dict] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self._records[rec["key"]] = rec

    @staticmethod
    def key(model_name: str, phash: str, decoding: Mapping) -> str:
        blob = json.dumps([model_name, phash, dict(decoding)], sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def __len__(self) -> int:
        return len(self._records)

    def get(self, key: str) -> dict | None:
        with self._lock:
            return self._records.get(key)

    def append(self, key: str, completion: RawCompletion, decoding: Mapping) -> None:
        rec = {
            "key": key,
            "model_name": completion.model_name,
            "prompt_hash": completion.prompt_hash,
            "decoding": dict(decoding),
            "text": completion.text,
            "wall_time": completion.wall_time,
        }
        with self._lock, self._file_lock:
            if key in self._records:
                return
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
            self._records[key] = rec


# -- mocks --------------------------------------------------------------------------

MockBackend = Callable[[PromptText], "str | RawCompletion"]

_SYNONYMS = {
    "analysis": "analytics",
    "management": "administration",
    "development": "engineering",
    "design": "conception",
    "data": "information",
    "testing": "verification",
    "planning": "scheduling",
    "maintenance": "upkeep",
    "analyse": "étude",
    "gestion": "administration",
    "développement": "élaboration",
    "conception": "design",
    "contrôle": "vérification",
    "suivi": "surveillance",
}

_RARE = "qxzjkvwy"


def _perturb(label: str, rng: random.Random) -> str:
    edit = rng.randrange(3)
    if edit == 0:
        words = label.split()
        swapped = [_SYNONYMS.get(w.lower(), w) for w in words]
        if swapped != words:
            return " ".join(swapped)
        edit = 1
    if edit == 1:
        return label.upper() if rng.random() < 0.5 else label.title()
    return label + rng.choice([".", " !", "?", " ;"])


def _pseudo_word(rng: random.Random) -> str:
    return "".join(rng.choice(_RARE) for _ in range(rng.randint(5, 8)))


def mock_generate(
    prompt: PromptText,
    scenario: str,
    onto: SkillOntology,
    target: BenchmarkItem,
    seed: int = 0,
) -> RawCompletion:
    """Deterministic synthetic completion for offline runs."""
    if scenario not in SCENARIOS:
        raise UnknownScenarioError(f"unknown mock scenario {scenario!r}; expected one of {SCENARIOS}")
    rng = random.Random(f"{seed}:{target.parent}:{scenario}")
    labels = [onto.label(g) for g in target.gold_children]
    k = prompt.controls.k
    if scenario == "echo-gold":
        items = labels
    elif scenario == "perturbed-gold":
        items = [_perturb(lab, rng) for lab in labels]
    elif scenario == "off-topic":
        items = [f"{_pseudo_word(rng)} {_pseudo_word(rng)}" for _ in range(k)]
    elif scenario == "wrong-k":
        items = labels[: max(k - 2, 0)]
    else:  # duplicate-heavy: each gold label followed by a casing/punctuation twin
        items = []
        for i in range(k):
            base = labels[(i // 2) % len(labels)]
            items.append(base if i % 2 == 0 else base.upper() + ".")
    latency_rng = random.Random(f"{seed}:{target.parent}:latency")
    wall = latency_rng.lognormvariate(0.0, 0.25)
    return RawCompletion(", ".join(items), wall, MOCK, prompt_hash(prompt))


class FixtureMock:
    """Returns canned text keyed by prompt hash."""

    def __init__(self, fixtures: Mapping[str, str]):
        self.fixtures = dict(fixtures)

    def __call__(self, prompt: PromptText) -> str:
        try:
            return self.fixtures[prompt_hash(prompt)]
        except KeyError:
            raise BackendError(f"no mock fixture for prompt {prompt_hash(prompt)[:12]}") from None


class ScenarioMock:
    """Scenario-driven mock bound to a benchmark.

    Without ``delay`` the simulated latency from :func:`mock_generate` is used
    and no time passes. With ``delay`` the call sleeps ``delay +/- jitter``
    seconds (uniform, seeded per parent) and the client measures real time.
    """

    def __init__(
        self,
        scenario: str,
        onto: SkillOntology,
        items: Mapping[ConceptId, BenchmarkItem],
        seed: int = 0,
        delay: float | None = None,
        jitter: float = 0.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if scenario not in SCENARIOS:
            raise UnknownScenarioError(f"unknown mock scenario {scenario!r}")
        self.scenario = scenario
        self.onto = onto
        self.items = dict(items)
        self.seed = seed
        self.delay = delay
        self.jitter = jitter
        self.sleep = sleep

    def delay_for(self, parent: ConceptId) -> float:
        rng = random.Random(f"{self.seed}:{parent}:delay")
        return max(0.0, rng.uniform(self.delay - self.jitter, self.delay + self.jitter))

    def __call__(self, prompt: PromptText) -> str | RawCompletion:
        item = self.items[prompt.parent_id]
        raw = mock_generate(prompt, self.scenario, self.onto, item, self.seed)
        if self.delay is None:
            return raw
        self.sleep(self.delay_for(item.parent))
        return raw.text


# -- client -----------------------------------------------------------------------


class GeneratorClient:
    """Sends prompts to the configured backend and records wall time.

    Wall time is measured on a monotonic clock around the whole request,
    retries included. Completions are written through to ``cache``; a cache
    hit returns the stored text and its original wall time flagged ``cached``.
    """

    def __init__(
        self,
        config: GeneratorConfig,
        *,
        cache: CompletionCache | None = None,
        mock: MockBackend | None = None,
        http_client=None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self.cache = cache
        self.mock = mock
        self._http = http_client
        self._sleep = sleep
        self._inflight = threading.BoundedSemaphore(config.max_in_flight)
        if config.endpoint == MOCK and mock is None:
            raise ValueError("mock endpoint requires a mock backend")

    @property
    def cache_identity(self) -> str:
        """Model identity used in cache keys; mock runs are kept apart per scenario."""
        if self.config.endpoint == MOCK:
            return f"{self.config.model_name}@mock/{self.config.mock_scenario}"
        return self.config.model_name

    def generate(self, prompt: PromptText) -> RawCompletion:
        if not prompt.text.strip():
            raise ValueError("prompt must be non-empty")
        phash = prompt_hash(prompt)
        decoding = _decoding_of(prompt)
        key = CompletionCache.key(self.cache_identity, phash, decoding)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return RawCompletion(hit["text"], hit["wall_time"], self.config.model_name, phash, cached=True)
        with self._inflight:
            start = time.perf_counter()
            if self.config.endpoint == MOCK:
                out = self.mock(prompt)
            else:
                out = self._request_with_retries(prompt)
            elapsed = time.perf_counter() - start
        if isinstance(out, RawCompletion):
            completion = RawCompletion(out.text, out.wall_time, self.config.model_name, phash)
        else:
            completion = RawCompletion(out, elapsed, self.config.model_name, phash)
        if self.cache is not None:
            self.cache.append(key, completion, decoding)
        return completion

    def _request_with_retries(self, prompt: PromptText) -> str:
        import httpx

        retry = self.config.retry
        wait = retry.backoff
        last: Exception | None = None
        for attempt in range(retry.attempts):
            try:
                return self._request(prompt)
            except AuthError:
                raise
            except (httpx.TransportError, _Retryable) as exc:
                last = exc
                log.warning("generation attempt %d/%d failed: %s", attempt + 1, retry.attempts, exc)
                if attempt + 1 < retry.attempts:
                    self._sleep(wait)
                    wait *= 2
        if isinstance(last, httpx.TimeoutException):
            raise BackendError(f"request timed out after {retry.attempts} attempts") from last
        raise BackendError(f"generation failed after {retry.attempts} attempts: {last}") from last

    def _request(self, prompt: PromptText) -> str:
        import httpx

        token = os.environ.get(self.config.auth_env_var, "")
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        dec = prompt.controls.decoding
        payload = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt.text}],
            "temperature": dec.temperature,
            "top_p": dec.top_p,
            "max_tokens": dec.max_tokens,
        }
        client = self._http or httpx.Client(timeout=self.config.request_timeout)
        try:
            resp = client.post(self.config.endpoint, json=payload, headers=headers)
        finally:
            if self._http is None:
                client.close()
        if resp.status_code in (401, 403):
            raise AuthError(f"backend rejected credentials from ${self.config.auth_env_var} ({resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise _Retryable(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise BackendError(f"malformed chat-completion response: {exc}") from exc


class _Retryable(Exception):
    pass


def generate(prompt: PromptText, config: GeneratorConfig, **kwargs) -> RawCompletion:
    return GeneratorClient(config, **kwargs).generate(prompt)


# -- parsing ----------------------------------------------------------------------

_LIST_MARK = re.compile(r"^\s*(?:[-*•·]+|\(?\d{1,3}[.)]|\(?[a-zA-Z][)])\s+")
_FENCE = re.compile(r"^\s*```")
_WRAPPERS = "\"'`*«»“”"


def _clean(fragment: str) -> str:
    text = _LIST_MARK.sub("", fragment.strip(), count=1)
    text = text.strip().strip(_WRAPPERS).strip()
    return text.rstrip(". ").strip()


def _split(line: str) -> list[str]:
    return [item for item in (_clean(frag) for frag in line.split(",")) if item]


def serialize_candidates(items: list[str]) -> str:
    return ", ".join(items)


def parse_candidates(
    completion: RawCompletion | str,
    expected_k: int,
    strategy: Strategy = Strategy.ZS,
) -> CandidateList:
    """Split a completion into candidate sub-skills.

    The expected shape is one comma-separated line. For multi-line output the
    format-warning flag is set; preamble lines ending in ``:`` and code fences
    are skipped, and when two or more lines carry list markers (``1.``, ``-``,
    ...) every line is parsed instead of only the first.
    """
    text = completion.text if isinstance(completion, RawCompletion) else completion
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise EmptyCompletionError("completion is empty")
    multi = len(lines) > 1
    body = [ln for ln in lines if not _FENCE.match(ln)]
    while len(body) > 1 and body[0].rstrip().endswith(":"):
        body = body[1:]
    if sum(1 for ln in body if _LIST_MARK.match(ln)) >= 2:
        items = [item for ln in body for item in _split(ln)]
    else:
        items = _split(body[0]) if body else []
    return CandidateList(tuple(items), strategy, len(items) != expected_k, multi)
