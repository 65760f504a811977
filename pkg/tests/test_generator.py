import json
import threading
import time

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from skilldecomp.embedding import deterministic_test_embed
from skilldecomp.errors import AuthError, BackendError, EmptyCompletionError, UnknownScenarioError
from skilldecomp.generator import (
    CompletionCache,
    FixtureMock,
    GeneratorClient,
    GeneratorConfig,
    RawCompletion,
    RetryPolicy,
    ScenarioMock,
    generate,
    mock_generate,
    parse_candidates,
    prompt_hash,
    serialize_candidates,
)
from skilldecomp.normalize import token_normalize
from skilldecomp.ontology import curate_benchmark, make_item
from skilldecomp.prompts import PromptControls, Strategy, build_zero_shot

from oracles import greedy_dedup

# (completion, expected_k, expected items, format warning)
CORPUS = [
    ("a, b, c", 3, ["a", "b", "c"], False),
    ("a, b", 3, ["a", "b"], False),
    ("1. a\n2. b", 2, ["a", "b"], True),
    ("  data cleaning ,  sql querying.  ", 2, ["data cleaning", "sql querying"], False),
    ("a,, b, ,", 2, ["a", "b"], False),
    ("Here are the sub-skills:\na, b, c", 3, ["a", "b", "c"], True),
    ("```\na, b, c\n```", 3, ["a", "b", "c"], True),
    ("- a\n- b\n- c", 3, ["a", "b", "c"], True),
    ("* a\n* b", 2, ["a", "b"], True),
    ("1) a\n2) b\n3) c", 3, ["a", "b", "c"], True),
    ('"a", "b", "c"', 3, ["a", "b", "c"], False),
    ("a, b, c.\nThese cover the main areas.", 3, ["a", "b", "c"], True),
    ("«a», «b»", 2, ["a", "b"], False),
    ("1. a, b\n2. c", 3, ["a", "b", "c"], True),
    ("a; b, c", 2, ["a; b", "c"], False),
    ("\n\n a, b \n", 2, ["a", "b"], False),
    ("e.g. b, c", 2, ["e.g. b", "c"], False),
    ("**a**, **b**", 2, ["a", "b"], False),
    ("Sub-skills:\n- a\n- b", 2, ["a", "b"], True),
    ("a) x\nb) y", 2, ["x", "y"], True),
]


@pytest.mark.parametrize("text,k,items,warn", CORPUS)
def test_parse_corpus(text, k, items, warn):
    out = parse_candidates(text, k)
    assert list(out.items) == items
    assert out.format_warning is warn
    assert out.cardinality_flag is (len(items) != k)


def test_parse_flags_and_strategy():
    out = parse_candidates(RawCompletion("a, b, c, d, e, f", 1.0, "m", "h"), 5, Strategy.FS)
    assert out.cardinality_flag and out.source_strategy is Strategy.FS
    assert not parse_candidates("a, b, c", 3).cardinality_flag


def test_parse_empty():
    with pytest.raises(EmptyCompletionError):
        parse_candidates("  \n ", 5)


word = st.text(alphabet=st.characters(whitelist_categories=("Ll", "Lu", "Nd")), min_size=1, max_size=8)
label = st.tuples(st.lists(word, min_size=1, max_size=4), st.sampled_from([" ", "-", "/", " & "])).map(
    lambda t: t[1].join(t[0])
)


@given(st.lists(label, min_size=1, max_size=12))
def test_round_trip(items):
    assert list(parse_candidates(serialize_candidates(items), len(items)).items) == items


@pytest.fixture
def bench(onto):
    return {it.parent: it for it in curate_benchmark(onto)}


def zs_prompt(onto, item):
    ctl = PromptControls(k=item.k_target, allow_any_k=True)
    return build_zero_shot(onto.label(item.parent), ctl, parent_id=item.parent)


def test_mock_scenarios(onto, bench):
    item = bench["sk:data-analysis"]
    prompt = zs_prompt(onto, item)
    labels = [onto.label(g) for g in item.gold_children]
    echo = mock_generate(prompt, "echo-gold", onto, item)
    assert echo.text == ", ".join(labels)
    assert echo.wall_time > 0
    assert len(parse_candidates(mock_generate(prompt, "wrong-k", onto, item), item.k_target).items) == item.k_target - 2
    off = parse_candidates(mock_generate(prompt, "off-topic", onto, item), item.k_target).items
    assert len(off) == item.k_target
    pert = mock_generate(prompt, "perturbed-gold", onto, item, seed=3)
    assert pert.text == mock_generate(prompt, "perturbed-gold", onto, item, seed=3).text
    with pytest.raises(UnknownScenarioError):
        mock_generate(prompt, "nope", onto, item)


def test_perturbed_gold_edits_labels(onto, bench):
    changed = 0
    for item in bench.values():
        prompt = zs_prompt(onto, item)
        got = parse_candidates(mock_generate(prompt, "perturbed-gold", onto, item), item.k_target).items
        gold = [onto.label(g) for g in item.gold_children]
        assert len(got) == len(gold)
        changed += sum(a != b for a, b in zip(got, gold))
    assert changed > 0


def test_duplicate_heavy_has_near_duplicates(onto, bench):
    for item in bench.values():
        prompt = zs_prompt(onto, item)
        items = [token_normalize(x) for x in parse_candidates(mock_generate(prompt, "duplicate-heavy", onto, item), 5).items]
        vecs = [deterministic_test_embed(x).values.tolist() for x in items]
        assert len(items) - len(greedy_dedup(items, vecs, 0.90)) >= 1


def test_fixture_mock_and_wall_time(onto, bench):
    item = bench["sk:data-analysis"]
    prompt = zs_prompt(onto, item)
    mock = FixtureMock({prompt_hash(prompt): "x, y, z"})
    out = generate(prompt, GeneratorConfig(), mock=mock)
    assert out.text == "x, y, z" and out.wall_time > 0
    assert out.prompt_hash == prompt_hash(prompt)
    other = zs_prompt(onto, bench["sk:welding"])
    with pytest.raises(BackendError):
        generate(other, GeneratorConfig(), mock=mock)


def test_cache_hit_flagged(tmp_path, onto, bench):
    item = bench["sk:data-analysis"]
    prompt = zs_prompt(onto, item)
    calls = []

    def mock(p):
        calls.append(p)
        return RawCompletion("a, b", 2.5, "mock", prompt_hash(p))

    cache = CompletionCache(tmp_path / "c.jsonl")
    first = GeneratorClient(GeneratorConfig(), cache=cache, mock=mock).generate(prompt)
    reopened = CompletionCache(tmp_path / "c.jsonl")
    second = GeneratorClient(GeneratorConfig(), cache=reopened, mock=mock).generate(prompt)
    assert len(calls) == 1
    assert second.cached and not first.cached
    assert (second.text, second.wall_time) == (first.text, 2.5)
    line = json.loads((tmp_path / "c.jsonl").read_text().splitlines()[0])
    assert line["prompt_hash"] == prompt_hash(prompt)
    assert line["decoding"] == {"temperature": 0.2, "top_p": 1.0, "max_tokens": 512}


def test_cache_key_includes_decoding():
    a = CompletionCache.key("m", "h", {"temperature": 0.2})
    assert a != CompletionCache.key("m", "h", {"temperature": 0.7})
    assert a != CompletionCache.key("n", "h", {"temperature": 0.2})


def test_injected_delay_measured(onto, bench):
    item = bench["sk:data-analysis"]
    prompt = zs_prompt(onto, item)
    mock = ScenarioMock("echo-gold", onto, bench, delay=0.1)
    out = GeneratorClient(GeneratorConfig(), mock=mock).generate(prompt)
    assert 0.100 <= out.wall_time <= 0.150


def test_max_in_flight(onto, bench):
    active = []
    peak = []
    lock = threading.Lock()

    def mock(p):
        with lock:
            active.append(1)
            peak.append(len(active))
        time.sleep(0.02)
        with lock:
            active.pop()
        return "a, b"

    client = GeneratorClient(GeneratorConfig(max_in_flight=2), mock=mock)
    prompts = [zs_prompt(onto, it) for it in list(bench.values())[:8]]
    threads = [threading.Thread(target=client.generate, args=(p,)) for p in prompts]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert max(peak) <= 2


def chat_client(statuses, seen=None):
    queue = list(statuses)

    def handler(request: httpx.Request):
        if seen is not None:
            seen.append(request)
        status = queue.pop(0) if queue else 200
        if isinstance(status, Exception):
            raise status
        if status == 200:
            return httpx.Response(200, json={"choices": [{"message": {"content": "a, b, c"}}]})
        return httpx.Response(status, text="nope")

    return httpx.Client(transport=httpx.MockTransport(handler))


def http_config(**kw):
    return GeneratorConfig(endpoint="http://llm.test/v1/chat", model_name="m", retry=RetryPolicy(3, 0.5), **kw)


def test_http_payload_and_auth_header(onto, bench, monkeypatch):
    monkeypatch.setenv("LLM_API_KEY", "secret-token")
    seen = []
    prompt = zs_prompt(onto, bench["sk:data-analysis"])
    out = GeneratorClient(http_config(), http_client=chat_client([200], seen)).generate(prompt)
    assert out.text == "a, b, c"
    body = json.loads(seen[0].content)
    assert body == {"model": "m", "messages": [{"role": "user", "content": prompt.text}],
                    "temperature": 0.2, "top_p": 1.0, "max_tokens": 512}
    assert seen[0].headers["authorization"] == "Bearer secret-token"


def test_http_retries_then_succeeds(onto, bench):
    sleeps = []
    client = GeneratorClient(http_config(), http_client=chat_client([503, httpx.ConnectError("x"), 200]),
                             sleep=sleeps.append)
    assert client.generate(zs_prompt(onto, bench["sk:welding"])).text == "a, b, c"
    assert sleeps == [0.5, 1.0]


def test_http_gives_up(onto, bench):
    client = GeneratorClient(http_config(), http_client=chat_client([429, 500, 502]), sleep=lambda s: None)
    with pytest.raises(BackendError):
        client.generate(zs_prompt(onto, bench["sk:welding"]))


def test_http_timeout(onto, bench):
    client = GeneratorClient(http_config(), http_client=chat_client([httpx.ReadTimeout("slow")] * 3),
                             sleep=lambda s: None)
    with pytest.raises(BackendError, match="timed out"):
        client.generate(zs_prompt(onto, bench["sk:welding"]))


def test_http_auth_error_not_retried(onto, bench):
    seen = []
    client = GeneratorClient(http_config(), http_client=chat_client([401], seen), sleep=lambda s: None)
    with pytest.raises(AuthError):
        client.generate(zs_prompt(onto, bench["sk:welding"]))
    assert len(seen) == 1


def test_config_validation():
    with pytest.raises(ValueError):
        RetryPolicy(attempts=0)
    with pytest.raises(ValueError):
        GeneratorConfig(max_in_flight=0)
    with pytest.raises(ValueError):
        GeneratorClient(GeneratorConfig())


def test_scenario_mock_requires_known_scenario(onto, bench):
    with pytest.raises(UnknownScenarioError):
        ScenarioMock("bogus", onto, bench)


def test_make_item_prompt_hash_stable(onto):
    item = make_item(onto, "sk:data-analysis")
    assert prompt_hash(zs_prompt(onto, item)) == prompt_hash(zs_prompt(onto, item))
