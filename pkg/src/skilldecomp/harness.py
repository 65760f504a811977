"""End-to-end benchmark runs, audit trail, latency accounting and report rendering."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import statistics
import threading
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from skilldecomp.align import AlignerConfig, ClosedWorldConfig, align_all, closed_world_filter
from skilldecomp.embedding import EmbeddingProvider, ProviderConfig
from skilldecomp.errors import (
    BenchmarkMismatchError,
    EmptyCompletionError,
    NoFreshLatencyError,
    SkillDecompError,
)
from skilldecomp.generator import (
    MOCK,
    CompletionCache,
    GeneratorClient,
    GeneratorConfig,
    RetryPolicy,
    ScenarioMock,
    parse_candidates,
    prompt_hash,
)
from skilldecomp.metrics import METRIC_KEYS, MacroReport, MetricsConfig, ParentScores, macro_average, score_parent
from skilldecomp.normalize import NormalizationPolicy, token_normalize
from skilldecomp.ontology import BenchmarkItem, SkillOntology, curate_benchmark, load_ontology
from skilldecomp.postprocess import DedupPolicy, SurfacePolicy, dedup, load_lexicon, normalize_all, surface_filter
from skilldecomp.prompts import (
    TEMPLATE_VERSION,
    Decoding,
    PromptControls,
    Strategy,
    build_few_shot,
    build_zero_shot,
    gold_lexical_forms,
    select_exemplars,
)

log = logging.getLogger(__name__)


# -- configuration ----------------------------------------------------------------


@dataclass(frozen=True)
class SurfaceSettings:
    """Serializable surface-policy settings; lexicons are file paths or ``"default"``."""

    min_chars: int = 3
    max_chars: int = 80
    max_words: int = 8
    type_blocklist: str | None = "default"
    verb_head_stoplist: str | None = "default"

    def build(self) -> SurfacePolicy:
        def lex(source, bundled):
            if source == "default":
                return load_lexicon(name=bundled)
            return load_lexicon(source)

        return SurfacePolicy(
            self.min_chars,
            self.max_chars,
            self.max_words,
            lex(self.type_blocklist, "type_blocklist.txt"),
            lex(self.verb_head_stoplist, "verb_heads.txt"),
        )


@dataclass(frozen=True)
class RunConfig:
    ontology_path: str
    strategy: Strategy = Strategy.ZS
    k_fs: int = 2
    ontology_format: str | None = None
    language: str = "fr"
    k_min: int = 5
    k_max: int = 12
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    embedder: ProviderConfig = field(default_factory=ProviderConfig.deterministic)
    normalization: NormalizationPolicy = field(default_factory=NormalizationPolicy)
    surface: SurfaceSettings = field(default_factory=SurfaceSettings)
    dedup: DedupPolicy = field(default_factory=DedupPolicy)
    aligner: AlignerConfig = field(default_factory=AlignerConfig)
    closed_world: ClosedWorldConfig = field(default_factory=ClosedWorldConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    decoding: Decoding = field(default_factory=Decoding)
    seed: int = 0
    parallelism: int = 1
    output_dir: str = "runs/latest"
    completion_cache: str | None = None
    include_cached_latency: bool = False
    limit: int | None = None

    def __post_init__(self):
        if not isinstance(self.strategy, Strategy):
            object.__setattr__(self, "strategy", Strategy(str(self.strategy).upper()))
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    @property
    def completion_cache_path(self) -> Path:
        return Path(self.completion_cache) if self.completion_cache else Path(self.output_dir) / "completions.jsonl"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> RunConfig:
        nested = {
            "generator": GeneratorConfig,
            "embedder": ProviderConfig,
            "normalization": NormalizationPolicy,
            "surface": SurfaceSettings,
            "dedup": DedupPolicy,
            "aligner": AlignerConfig,
            "closed_world": ClosedWorldConfig,
            "metrics": MetricsConfig,
            "decoding": Decoding,
        }
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            if key in nested and isinstance(value, Mapping):
                value = dict(value)
                if key == "generator" and isinstance(value.get("retry"), Mapping):
                    value["retry"] = RetryPolicy(**value["retry"])
                value = nested[key](**value)
            kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        """Read a TOML or JSON run config; relative ontology paths resolve against the file."""
        path = Path(path)
        if path.suffix.lower() == ".toml":
            import tomli

            data = tomli.loads(path.read_text(encoding="utf-8"))
        else:
            data = json.loads(path.read_text(encoding="utf-8"))
        onto = Path(data.get("ontology_path", ""))
        if data.get("ontology_path") and not onto.is_absolute():
            data["ontology_path"] = str((path.parent / onto).resolve())
        return cls.from_dict(data)

    def metadata(self) -> dict:
        return {
            "thresholds": {
                "tau": self.aligner.tau,
                "rho": self.dedup.rho,
                "epsilon": self.metrics.epsilon,
                "k_min": self.k_min,
                "k_max": self.k_max,
                "k_fs": self.k_fs,
                "seed": self.seed,
            },
            "template_version": TEMPLATE_VERSION,
            "surface_policy": self.surface.build().to_dict(),
            "config": self.to_dict(),
        }


# -- records ----------------------------------------------------------------------


@dataclass
class RunRecord:
    parent: str
    parent_label: str = ""
    strategy: str = ""
    prompt_hash: str | None = None
    exemplars: list[str] = field(default_factory=list)
    completion: str | None = None
    wall_time: float | None = None
    cached: bool = False
    raw_candidates: list[str] = field(default_factory=list)
    normalized: list[str] = field(default_factory=list)
    filtered: list[str] = field(default_factory=list)
    surface_report: dict | None = None
    dedup_report: dict | None = None
    exemplar_copies: list[str] = field(default_factory=list)
    cardinality_flag: bool = False
    format_warning: bool = False
    alignments: list[dict] = field(default_factory=list)
    scores: ParentScores | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.scores is not None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scores"] = self.scores.to_dict() if self.scores else None
        return d


@dataclass(frozen=True)
class LatencySummary:
    mean: float
    median: float
    min: float
    max: float
    count: int
    total: float
    strategy: str = ""
    model_name: str = ""

    def plot_tuples(self) -> list[tuple[str, str, float]]:
        return [(self.strategy, self.model_name, self.mean)]

    def to_dict(self) -> dict:
        return asdict(self)


def latency_summary(
    records: Iterable[RunRecord],
    include_cached: bool = False,
    *,
    strategy: str = "",
    model_name: str = "",
) -> LatencySummary:
    """Per-parent wall-time statistics over successful generations.

    Cache hits carry the latency of the original request and are left out
    unless ``include_cached`` is set.
    """
    times = [
        r.wall_time
        for r in records
        if r.wall_time is not None and r.error is None and (include_cached or not r.cached)
    ]
    if not times:
        raise NoFreshLatencyError("no records with fresh latency")
    return LatencySummary(
        mean=math.fsum(times) / len(times),
        median=float(statistics.median(times)),
        min=min(times),
        max=max(times),
        count=len(times),
        total=math.fsum(times),
        strategy=strategy,
        model_name=model_name,
    )


@dataclass
class RunResult:
    report: MacroReport
    latency: LatencySummary | None
    records: list[RunRecord]
    excluded_count: int = 0


# -- pipeline ---------------------------------------------------------------------


def benchmark_id(items: Sequence[BenchmarkItem]) -> str:
    blob = "\n".join(f"{it.parent}\t{','.join(it.gold_children)}" for it in items)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


class _Pipeline:
    def __init__(self, config: RunConfig, onto: SkillOntology, pool: list[BenchmarkItem], client, embedder):
        self.cfg = config
        self.onto = onto
        self.pool = pool
        self.client = client
        self.embedder = embedder
        self.surface = config.surface.build()

    def prompt_for(self, item: BenchmarkItem):
        cfg = self.cfg
        label = self.onto.label(item.parent)
        controls = PromptControls(cfg.language, item.k_target, cfg.decoding, allow_any_k=True)
        if cfg.strategy is Strategy.ZS:
            return build_zero_shot(label, controls, parent_id=item.parent), []
        exemplars = select_exemplars(self.onto, item, self.pool, cfg.k_fs, cfg.seed)
        prompt = build_few_shot(
            label, exemplars, controls, gold_labels=gold_lexical_forms(self.onto, item), parent_id=item.parent
        )
        return prompt, exemplars

    def run_one(self, item: BenchmarkItem) -> RunRecord:
        cfg = self.cfg
        onto = self.onto
        rec = RunRecord(item.parent, onto.label(item.parent), cfg.strategy.value)
        try:
            prompt, exemplars = self.prompt_for(item)
            rec.prompt_hash = prompt_hash(prompt)
            rec.exemplars = [ex.parent_id for ex in exemplars]
            completion = self.client.generate(prompt)
        except SkillDecompError as exc:
            rec.error = f"{type(exc).__name__}: {exc}"
            return rec
        rec.prompt_hash = completion.prompt_hash
        rec.completion = completion.text
        rec.wall_time = completion.wall_time
        rec.cached = completion.cached
        try:
            cands = parse_candidates(completion, item.k_target, cfg.strategy)
            rec.raw_candidates = list(cands.items)
            rec.cardinality_flag = cands.cardinality_flag
            rec.format_warning = cands.format_warning
        except EmptyCompletionError:
            rec.cardinality_flag = True
        rec.normalized = normalize_all(rec.raw_candidates, cfg.normalization)
        kept, srep = surface_filter(rec.normalized, rec.parent_label, self.surface)
        kept, drep = dedup(kept, cfg.dedup, self.embedder)
        if cfg.closed_world.enabled:
            kept = closed_world_filter(kept, onto, item.parent, cfg.closed_world, self.embedder, cfg.aligner.tau)
        rec.filtered = kept
        rec.surface_report = srep.to_dict()
        rec.dedup_report = drep.to_dict()
        shown = {token_normalize(c) for ex in exemplars for c in ex.child_labels}
        rec.exemplar_copies = [c for c in kept if c in shown]
        alignments = align_all(kept, onto, item.parent, item.gold_children, self.embedder, cfg.aligner)
        rec.alignments = [a.to_dict() for a in alignments]
        rec.scores = score_parent(
            item.parent, kept, item.gold_children, alignments, onto, self.embedder, cfg.metrics, completion.wall_time
        )
        return rec


def run_benchmark(
    config: RunConfig,
    *,
    onto: SkillOntology | None = None,
    mock=None,
    http_client=None,
    embedder: EmbeddingProvider | None = None,
    write_outputs: bool = True,
) -> RunResult:
    """Run every curated parent through prompt, generation, post-processing, alignment and scoring.

    Parents whose generation fails hard are recorded with their error and left
    out of the macro averages; the number left out is reported.
    """
    onto = onto or load_ontology(config.ontology_path, config.ontology_format, lang=config.language)
    pool = curate_benchmark(onto, config.k_min, config.k_max)
    bench = pool[: config.limit] if config.limit is not None else pool
    if not bench:
        raise SkillDecompError("benchmark is empty for the configured k band")
    embedder = embedder or EmbeddingProvider(config.embedder)
    # without outputs, a disk cache is only used when one is configured explicitly
    cache = CompletionCache(config.completion_cache_path) if write_outputs or config.completion_cache else None
    gen = config.generator
    if gen.endpoint == MOCK and mock is None:
        mock = ScenarioMock(
            gen.mock_scenario, onto, {it.parent: it for it in pool}, config.seed, gen.mock_delay, gen.mock_jitter
        )
    client = GeneratorClient(gen, cache=cache, mock=mock, http_client=http_client)
    pipeline = _Pipeline(config, onto, pool, client, embedder)

    out_dir = Path(config.output_dir)
    records: list[RunRecord] = []
    audit = None
    if write_outputs:
        out_dir.mkdir(parents=True, exist_ok=True)
        audit = open(out_dir / "audit.jsonl", "w", encoding="utf-8")
    write_lock = threading.Lock()
    try:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool_exec:
            futures = [pool_exec.submit(pipeline.run_one, item) for item in bench]
            for fut in futures:
                rec = fut.result()
                records.append(rec)
                if audit is not None:
                    with write_lock:
                        audit.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")
                        audit.flush()
    finally:
        if audit is not None:
            audit.close()

    ok = [r for r in records if r.ok]
    excluded = len(records) - len(ok)
    if excluded:
        log.warning("%d of %d parents failed and are excluded from the macro report", excluded, len(records))
    if not ok:
        raise SkillDecompError(f"all {len(records)} parents failed; first error: {records[0].error}")
    report = macro_average(
        [r.scores for r in ok],
        model_name=gen.model_name,
        strategy=config.strategy.value,
        benchmark_id=benchmark_id(bench),
        excluded_count=excluded,
    )
    try:
        latency = latency_summary(
            records, config.include_cached_latency, strategy=config.strategy.value, model_name=gen.model_name
        )
    except NoFreshLatencyError:
        latency = None
    result = RunResult(report, latency, records, excluded)
    if write_outputs:
        write_run_outputs(result, config, out_dir)
    return result


def write_run_outputs(result: RunResult, config: RunConfig, out_dir: Path) -> None:
    (out_dir / "report.json").write_text(emit_report(result.report, "json"), encoding="utf-8")
    (out_dir / "report.md").write_text(emit_report(result.report, "markdown-table"), encoding="utf-8")
    (out_dir / "report.csv").write_text(emit_report(result.report, "csv"), encoding="utf-8")
    meta = config.metadata()
    meta["excluded_count"] = result.excluded_count
    meta["record_count"] = len(result.records)
    (out_dir / "run_metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    if result.latency is not None:
        (out_dir / "latency.json").write_text(json.dumps(result.latency.to_dict(), indent=2), encoding="utf-8")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy", "model", "mean_wall_time_s"])
        w.writerows(result.latency.plot_tuples())
        (out_dir / "latency_tuples.csv").write_text(buf.getvalue(), encoding="utf-8")


# -- reports ----------------------------------------------------------------------

TABLE_HEADER = "| LLM Generator | Strategy | Precision | Recall | F1 | Hier-F1 |"
TABLE_RULE = "|---|---|---|---|---|---|"


def format_row(precision: float, recall: float, f1: float, hier_f1: float) -> str:
    return " | ".join(f"{v:.4f}" for v in (precision, recall, f1, hier_f1))


def _strategy_display(value: str) -> str:
    try:
        return Strategy(value).display
    except ValueError:
        return value


def render_table(reports: Sequence[MacroReport]) -> str:
    """Markdown table with one ZS and one FS row per model; missing strategies are omitted."""
    models: dict[str, dict[str, MacroReport]] = {}
    for rep in reports:
        models.setdefault(rep.model_name, {})[rep.strategy] = rep
    lines = [TABLE_HEADER, TABLE_RULE]
    for model, by_strategy in models.items():
        first = True
        for strat in (Strategy.ZS.value, Strategy.FS.value, *sorted(set(by_strategy) - {"ZS", "FS"})):
            rep = by_strategy.get(strat)
            if rep is None:
                continue
            m = rep.macro
            row = format_row(m["P_sem"], m["R_sem"], m["F1_sem"], m["F1_hier"])
            lines.append(f"| {model if first else ''} | {_strategy_display(strat)} | {row} |")
            first = False
    return "\n".join(lines) + "\n"


def emit_report(report: MacroReport, fmt: str = "json") -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if fmt in ("markdown", "markdown-table", "md"):
        return render_table([report])
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "strategy", "parent", "p", "q", *METRIC_KEYS, "wall_time"])
        for ps in report.per_parent:
            w.writerow([
                report.model_name, report.strategy, ps.parent, ps.p, ps.q,
                *(f"{v:.6f}" for v in (ps.sem.P, ps.sem.R, ps.sem.F1, ps.hier.P, ps.hier.R, ps.hier.F1)),
                f"{ps.wall_time:.6f}",
            ])
        w.writerow([report.model_name, report.strategy, "MACRO", "", "", *(f"{report.macro[k]:.6f}" for k in METRIC_KEYS), ""])
        return buf.getvalue()
    raise ValueError(f"unknown report format {fmt!r}")


def load_report(path: str | Path) -> MacroReport:
    return MacroReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class StrategyDelta:
    model_name: str
    deltas: dict[str, float]

    def sign(self, key: str) -> str:
        d = round(self.deltas[key], 4)
        return "+" if d > 0 else "-" if d < 0 else "0"

    def render(self) -> str:
        lines = [f"| {'Metric':<8} | {'FS - ZS':>8} | Sign |", "|---|---|---|"]
        for key, value in self.deltas.items():
            lines.append(f"| {key:<8} | {value:+.4f} | {self.sign(key)} |")
        return f"Model: {self.model_name}\n" + "\n".join(lines) + "\n"


def compare_strategies(report_zs: MacroReport, report_fs: MacroReport) -> StrategyDelta:
    if report_zs.benchmark_id != report_fs.benchmark_id:
        raise BenchmarkMismatchError(
            f"reports cover different benchmarks ({report_zs.benchmark_id!r} vs {report_fs.benchmark_id!r})"
        )
    if report_zs.model_name != report_fs.model_name:
        raise BenchmarkMismatchError(f"reports come from different models ({report_zs.model_name!r} vs {report_fs.model_name!r})")
    deltas = {k: report_fs.macro[k] - report_zs.macro[k] for k in METRIC_KEYS}
    return StrategyDelta(report_zs.model_name, deltas)


def with_overrides(config: RunConfig, **changes) -> RunConfig:
    return replace(config, **{k: v for k, v in changes.items() if v is not None})
