import json
import math
import random

import httpx
import pytest

from conftest import page
from websynth.corpus_graph import build_graph
from websynth.errors import ExternalUnavailable, MalformedAction, NotFound, UnknownTool
from websynth.tools import (
    FETCH_SCHEMA,
    SEARCH_SCHEMA,
    ExternalClient,
    ExternalConfig,
    ToolRegistry,
    build_index,
    external_registry,
    fetch_page,
    html_to_text,
    local_registry,
    search,
    tokenize,
)

VOCAB = "river harbour school medal novel archive bridge market council lamp salt grain wool timber".split()


def corpus(n, seed):
    rng = random.Random(seed)
    recs = []
    for i in range(n):
        words = [rng.choice(VOCAB) for _ in range(rng.randint(3, 60))]
        recs.append(page(f"https://d.test/{i}", title=f"doc {rng.choice(VOCAB)}", content=" ".join(words)))
    return build_graph(recs)


def brute_force_bm25(graph, query, k1=1.2, b=0.75):
    """Score every document from scratch: no postings, no cached statistics."""
    docs = {nid: tokenize(f"{p.title}\n{p.content}") for nid, p in graph.nodes.items()}
    n = len(docs)
    avg = sum(len(d) for d in docs.values()) / n
    terms = set(tokenize(query))
    scores = {}
    for nid, toks in docs.items():
        s = 0.0
        for term in terms:
            tf = toks.count(term)
            if not tf:
                continue
            df = sum(1 for d in docs.values() if term in d)
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            s += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(toks) / avg))
        if any(t in toks for t in terms):
            scores[nid] = s
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


def test_tokenize():
    assert tokenize("Hello, World! x_y 42") == ["hello", "world", "x", "y", "42"]
    assert tokenize("北京大学") == ["北京", "京大", "大学"]
    assert tokenize("学") == ["学"]
    assert tokenize("abc北京def") == ["abc", "北京", "def"]


@pytest.mark.parametrize("seed", range(3))
def test_bm25_matches_brute_force(seed):
    g = corpus(40, seed)
    idx = build_index(g)
    rng = random.Random(seed + 100)
    for _ in range(10):
        q = " ".join(rng.choice(VOCAB) for _ in range(rng.randint(1, 4)))
        got = search(idx, q, top_n=100)
        want = brute_force_bm25(g, q)
        assert [r.node_id for r in got] == [nid for nid, _ in want]
        for r, (_, s) in zip(got, want):
            assert r.score == pytest.approx(s, rel=1e-12)


def test_index_statistics_consistent():
    g = corpus(30, 9)
    idx = build_index(g)
    for term, post in idx.postings.items():
        assert all(nid in g.nodes for nid in post)
    for nid, length in idx.doc_lengths.items():
        assert length == sum(p.get(nid, 0) for p in idx.postings.values())
    assert idx.avg_length == pytest.approx(sum(idx.doc_lengths.values()) / len(idx.doc_lengths))


def test_search_edge_cases():
    g = corpus(10, 1)
    idx = build_index(g)
    assert search(idx, "zzzz unseen") == []
    assert len(search(idx, "river", top_n=2)) <= 2
    assert search(idx, "river river") == search(idx, "river")
    with pytest.raises(ValueError):
        search(idx, "river", top_n=0)


def test_fetch_and_caps():
    long = " ".join(["word"] * 5000)
    g = build_graph([page("https://f.test/a", content=long), page("https://f.test/b")])
    text = fetch_page(g, "HTTPS://F.TEST/a/", cap=100)
    assert text.endswith("[... truncated ...]") and len(text) < len(long)
    assert fetch_page(g, "https://f.test/b") == "Page at https://f.test/b."
    with pytest.raises(NotFound):
        fetch_page(g, "https://f.test/zzz")


def test_local_registry():
    g = corpus(10, 2)
    reg = local_registry(g, obs_cap=50)
    out = reg.execute("search", {"query": "river"})
    assert out.startswith("[1] ") or out == "No results found."
    assert reg.execute("fetch", {"url": "https://d.test/nope"}).startswith("Error: page not found")
    assert [s["name"] for s in reg.function_specs()] == ["fetch", "search"]
    assert "- search(query: string, top_n: integer)" in reg.describe()
    with pytest.raises(UnknownTool):
        reg.execute("browse", {})


@pytest.mark.parametrize("name, args", [
    ("browse", {"url": "x"}),
    ("search", {}),
    ("search", {"query": 3}),
    ("search", {"query": "x", "top_n": True}),
    ("fetch", {"url": "x", "extra": 1}),
])
def test_registry_validation(name, args):
    reg = local_registry(corpus(3, 0))
    with pytest.raises(MalformedAction):
        reg.validate(name, args)


def test_registry_names_unique():
    reg = ToolRegistry()
    reg.register(SEARCH_SCHEMA, lambda **k: "")
    with pytest.raises(ValueError):
        reg.register(SEARCH_SCHEMA, lambda **k: "")


def test_html_to_text():
    html = "<html><head><style>x{}</style><script>var a</script></head><body><h1>Title</h1><p>Para <b>one</b></p></body></html>"
    text = html_to_text(html)
    assert "Title" in text and "Para one" in text
    assert "var a" not in text and "x{}" not in text


def _client(handler, **cfg):
    conf = ExternalConfig(search_endpoint="https://search.test/q", **cfg)
    return ExternalClient(conf, httpx.Client(transport=httpx.MockTransport(handler)))


def test_external_client(monkeypatch):
    monkeypatch.setenv("SEARCH_KEY", "k1")

    def handler(req):
        if req.url.host == "search.test":
            assert req.headers["authorization"] == "Bearer k1"
            body = json.loads(req.content)
            assert body["query"] == "river"
            return httpx.Response(200, json={"results": [{"title": "T", "url": "https://x.test/", "snippet": "s"}]})
        if req.url.path == "/missing":
            return httpx.Response(404)
        return httpx.Response(200, text="<p>Hello <i>there</i></p>", headers={"content-type": "text/html"})

    client = _client(handler, api_key_env="SEARCH_KEY")
    res = client.search("river", 3)
    assert [(r.title, r.url) for r in res] == [("T", "https://x.test/")]
    assert client.fetch("https://x.test/page") == "Hello there"
    with pytest.raises(NotFound):
        client.fetch("https://x.test/missing")
    reg = external_registry(client)
    assert reg.execute("fetch", {"url": "https://x.test/missing"}).startswith("Error: NotFound")
    assert reg.execute("search", {"query": "river"}).startswith("[1] T")


def test_external_unavailable():
    def down(req):
        raise httpx.ConnectError("no route")

    client = _client(down)
    with pytest.raises(ExternalUnavailable):
        client.search("x")
    assert external_registry(client).execute("search", {"query": "x"}).startswith("Error:")
