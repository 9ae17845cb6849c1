import random
import time
from contextlib import contextmanager

import pytest

from websynth.corpus_graph import build_graph


ACCEPTANCE_LINES = []


@contextmanager
def criterion(number, title, limit_s):
    """Time an acceptance check and record one PASS/FAIL line for the summary."""
    start = time.perf_counter()
    ok = False
    try:
        yield
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        status = "PASS" if ok and elapsed < limit_s else "FAIL"
        ACCEPTANCE_LINES.append(f"{status}  criterion {number}: {title} ({elapsed:.2f}s, limit {limit_s}s)")
    assert elapsed < limit_s, f"took {elapsed:.2f}s, limit {limit_s}s"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def page(url, outlinks=(), title=None, content=None):
    return {
        "url": url,
        "title": title or url.rsplit("/", 1)[-1],
        "content": content or f"Page at {url}.",
        "outlinks": list(outlinks),
    }


def random_records(n, rng, max_links=4, base="https://site.test/p"):
    """n pages with random absolute links among themselves."""
    recs = []
    for i in range(n):
        links = [f"{base}{rng.randrange(n)}" for _ in range(rng.randint(0, max_links))]
        recs.append(page(f"{base}{i}", links, content=f"page {i} " + " ".join(rng.choice("abcdefgh") for _ in range(20))))
    return recs


@pytest.fixture
def small_graph():
    recs = [
        page("https://a.test/", ["/b", "/c"]),
        page("https://a.test/b", ["/d", "https://a.test/c"]),
        page("https://a.test/c", ["/d", "/e"]),
        page("https://a.test/d", ["/a-missing"]),
        page("https://a.test/e", ["/"]),
    ]
    return build_graph(recs)


@pytest.fixture
def graph50():
    return build_graph(random_records(50, random.Random(50), max_links=3))


def toy_entity_subgraph(rng, n_entities=5, theme="Theme Label"):
    """Star-plus-chain entity subgraph built directly, without any model calls."""
    from websynth.entities import Entity, EntitySubgraph, Theme, entity_id
    from websynth.sampler import DependencySubgraph

    seed = "seed0000000000000"
    prov = DependencySubgraph(seed, (seed,), (), 0, "bfs")
    tid = entity_id(theme)
    ents = {tid: Entity(tid, theme, (seed,), "")}
    ids = []
    for i in range(n_entities):
        surface = f"Entity{rng.randrange(10**6):06d}x{i}"
        eid = entity_id(surface)
        ents[eid] = Entity(eid, surface, (seed,), f"relation {i}")
        ids.append(eid)
    edges = [(tid, ids[0], "linked page")]
    for a, b in zip(ids, ids[1:]):
        edges.append((a, b, "related to"))
    if len(ids) > 2:
        edges.append((tid, ids[2], "mentions"))
    return EntitySubgraph(Theme(theme, seed, (0, len(theme))), ents, tuple(edges), prov, tid)


def obfuscation_script(es, leak_ids=()):
    """Sticky obfuscate records: a clean description per entity, leaking ones first when requested."""
    recs = []
    for eid in es.non_theme_ids():
        surface = es.entities[eid].surface
        if eid in leak_ids:
            recs.append({"role": "obfuscate", "match": f"Entity: {surface}\n", "response": f"the famous {surface}"})
        recs.append({"role": "obfuscate", "match": f"Entity: {surface}\n", "response": f"an entity numbered {eid[-4:]}",
                     "sticky": True})
    return recs


def toy_record(rng, question_final, n_entities=4, theme="Theme Label"):
    """A complete QARecord with every non-theme entity obfuscated."""
    from websynth.gateway import mock_gateway
    from websynth.qa import QARecord, language_of, obfuscate_entities, record_id

    es = toy_entity_subgraph(rng, n_entities, theme)
    fuzzy, omap = obfuscate_entities(es, 1.0, mock_gateway(obfuscation_script(es)).handle("obfuscate"), rng_seed=0)
    a, b = (es.entities[e].surface for e in es.non_theme_ids()[:2])
    return QARecord(record_id(es.provenance.seed, theme, question_final), es.provenance.seed,
                    f"What connects {a} and {b}?", question_final, theme, es, fuzzy, omap, language_of(question_final))


class PolicyLLM:
    """Duck-typed gateway handle driven by a Python function instead of a script.

    ``policy(messages)`` returns reply text (or a Completion); every message
    list the loop submits is kept in ``seen`` for inspection.
    """

    def __init__(self, policy):
        self.policy = policy
        self.seen = []

    def complete(self, messages, tools=None):
        from websynth.gateway import Completion

        self.seen.append(list(messages))
        out = self.policy(messages)
        return out if isinstance(out, Completion) else Completion(out)

    def ask(self, prompt, system=None):
        return self.complete([{"role": "user", "content": prompt}]).text


def counting_teacher(n_calls, answer="done"):
    """Makes n_calls tool calls (alternating search and fetch), then answers."""
    def policy(messages):
        done = sum(1 for m in messages if m["role"] == "assistant")
        calls = policy.calls
        if calls >= n_calls:
            return f"<think>enough</think><answer>{answer}</answer>"
        policy.calls += 1
        if calls % 2:
            return f'<think>read {calls}</think><tool_call>{{"name": "fetch", "arguments": {{"url": "u{calls}"}}}}</tool_call>'
        return f'<think>look {calls}</think><tool_call>{{"name": "search", "arguments": {{"query": "q{calls} {done}"}}}}</tool_call>'
    policy.calls = 0
    return PolicyLLM(policy)


def echo_tools():
    from websynth.tools import FETCH_SCHEMA, SEARCH_SCHEMA, ToolRegistry

    reg = ToolRegistry()
    reg.register(SEARCH_SCHEMA, lambda query, top_n=5: f"results for {query}")
    reg.register(FETCH_SCHEMA, lambda url: f"content of {url}")
    return reg


def summarizer():
    import re

    def policy(messages):
        m = re.search(r"Tool response:\n(.*)", messages[-1]["content"], re.S)
        return "summary: " + m.group(1).strip()[:40]
    return PolicyLLM(policy)


class AcceptedRecord:
    def __init__(self, question, rid="qa-test", language="en"):
        self.id = rid
        self.question_final = question
        self.language = language
        self.verdicts = {"accepted": True}
