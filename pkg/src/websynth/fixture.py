"""Deterministic synthetic corpus plus a fully scripted mock, for hermetic runs.

Each topic is a fictional researcher with four linked fact pages (home town,
school, award, book). The script answers every model role so that the whole
pipeline runs offline, and a few topics are wired to fail in specific ways
(too easy, unsolvable, too few hops, answer leak, ungrounded theme) so every
rejection path is exercised.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

import yaml

BASE = "https://wiki.example.org"
NUM_TOPICS = 40
RNG_SEED = 7

TOO_EASY = {0, 1, 2, 3}
UNSOLVABLE = {4, 5, 6}
FEW_HOPS = {7, 8}
ANSWER_LEAK = {9}
UNGROUNDED = {10}
MALFORMED_FIRST = {11}
CJK_TOPICS = {12: 0, 13: 1, 14: 2}

_SYLLABLES = (
    "bar bel bren cal dor fen gal hal ith kan kel lor mar mev nor obr ors pel "
    "quin ral sel tas thor ulm ven vor wyn yar zel"
).split()
_FILLER = (
    "the a local archive records several minor notes about weather harvest market "
    "roads bridges council meetings seasonal fairs old maps letters visitors "
    "and ledgers from quiet years when little else happened in the region while "
    "clerks copied inventories of grain timber salt wool lamps and tools"
).split()

_CJK = (
    {"theme": "林晓岚", "city": "青川镇", "river": "白溪河", "school": "南屿大学", "founder": "许文川",
     "award": "星河奖", "academy": "东岭学会", "book": "雾中灯塔", "publisher": "长风书局"},
    {"theme": "周映雪", "city": "临水县", "river": "碧江", "school": "北麓学院", "founder": "韩知远",
     "award": "金穗奖", "academy": "西山研究会", "book": "远山来信", "publisher": "新叶出版社"},
    {"theme": "陈望舒", "city": "松阳镇", "river": "清澜河", "school": "云台理工学院", "founder": "杜明章",
     "award": "晨光奖", "academy": "南湖学社", "book": "海上旧事", "publisher": "青石书屋"},
)
_CJK_FILLER = "当地档案记载了许多琐事，例如天气、集市、桥梁、议事会议和季节庙会。书记员抄录了粮食、木材、盐与羊毛的清单。"


@dataclass
class Topic:
    index: int
    slug: str
    lang: str
    names: dict[str, str]
    years: dict[str, int]

    def url(self, kind: str) -> str:
        return f"{BASE}/{kind}/{self.slug}"


def _word(rng: random.Random, parts: int) -> str:
    return "".join(rng.choice(_SYLLABLES) for _ in range(parts)).capitalize()


def _make_topics(rng: random.Random) -> list[Topic]:
    used: set[str] = set()

    def fresh(parts: int) -> str:
        while True:
            w = _word(rng, parts)
            if len(w) >= 6 and not any(w.lower() in u.lower() or u.lower() in w.lower() for u in used):
                used.add(w)
                return w

    topics = []
    for i in range(NUM_TOPICS):
        years = {k: rng.randint(1400, 1990) for k in ("city", "school", "award", "book")}
        if i in CJK_TOPICS:
            names = dict(_CJK[CJK_TOPICS[i]])
            topics.append(Topic(i, f"t{i:02d}", "zh", names, years))
            continue
        first, last = fresh(2), fresh(3)
        names = {
            "theme": f"{first} {last}",
            "city": fresh(2) + "mouth",
            "river": f"River {fresh(2)}",
            "school": f"{fresh(2)} Polytechnic",
            "founder": f"{fresh(2)} {fresh(2)}",
            "award": f"{fresh(3)} Medal",
            "academy": f"Academy of {fresh(2)}",
            "book": f"The {fresh(2)} Orchard",
            "publisher": f"{fresh(2)} Lane Press",
        }
        topics.append(Topic(i, f"{last.lower()}-{i:02d}", "en", names, years))
    return topics


def _filler(rng: random.Random, lang: str, chars: int) -> str:
    if lang == "zh":
        return _CJK_FILLER * (chars // len(_CJK_FILLER) + 1)
    words: list[str] = []
    while sum(len(w) + 1 for w in words) < chars:
        words.append(rng.choice(_FILLER))
    return " ".join(words).capitalize() + "."


def _pages(t: Topic, nxt: Topic, rng: random.Random) -> list[dict]:
    n, y = t.names, t.years
    zh = t.lang == "zh"
    if zh:
        lead = {
            "topic": f"{n['theme']}是一位虚构的学者，出生于{n['city']}，就读于{n['school']}，曾获{n['award']}，代表作为《{n['book']}》。",
            "city": f"{n['city']}建于{y['city']}年，位于{n['river']}沿岸，是学者{n['theme']}的故乡。",
            "school": f"{n['school']}由{n['founder']}于{y['school']}年创办。",
            "award": f"{n['award']}由{n['academy']}于{y['award']}年设立。",
            "book": f"《{n['book']}》于{y['book']}年由{n['publisher']}出版，作者为{n['theme']}。",
        }
    else:
        lead = {
            "topic": f"{n['theme']} is a fictional researcher born in {n['city']}. {n['theme']} studied at "
                     f"{n['school']}, received the {n['award']} and wrote {n['book']}.",
            "city": f"{n['city']} is a harbour town on the {n['river']}, founded in {y['city']}.",
            "school": f"{n['school']} is a technical school founded by {n['founder']} in {y['school']}.",
            "award": f"The {n['award']} is a prize awarded by the {n['academy']} since {y['award']}.",
            "book": f"{n['book']} is a novel published by {n['publisher']} in {y['book']}.",
        }
    titles = {"topic": n["theme"], "city": n["city"], "school": n["school"], "award": n["award"], "book": n["book"]}
    links = {
        # exercises case folding, fragments, trailing slashes, a repeat and a dangling link
        "topic": [f"https://WIKI.example.org/city/{t.slug}/#history", f"/school/{t.slug}", f"/award/{t.slug}",
                  f"../book/{t.slug}", f"/school/{t.slug}", f"/topic/missing-{t.slug}"],
        "city": [f"/city/{nxt.slug}"],
        "school": [],
        "award": [],
        "book": [f"../topic/{t.slug}"],
    }
    pages = []
    for kind in ("topic", "city", "school", "award", "book"):
        content = lead[kind] + ("" if zh else "\n\n") + _filler(rng, t.lang, 1000 if zh else 1800)
        pages.append({"url": t.url(kind), "title": titles[kind], "content": content, "outlinks": links[kind]})
    return pages


def _extraction(t: Topic, kind: str) -> dict:
    n = t.names
    zh = t.lang == "zh"
    if kind == "topic":
        rel = (("出生地", "就读学校", "所获奖项", "代表作") if zh
               else ("home town of the researcher", "school the researcher attended", "prize the researcher received",
                     "novel the researcher wrote"))
        return {
            "entities": [{"surface": n[k], "relation": r} for k, r in zip(("city", "school", "award", "book"), rel)],
            "relations": [
                {"source": n["theme"], "target": n["city"], "label": "born in"},
                {"source": n["theme"], "target": n["school"], "label": "studied at"},
                {"source": n["theme"], "target": n["award"], "label": "received"},
                {"source": n["theme"], "target": n["book"], "label": "wrote"},
                # not supported by any page link; must be dropped
                {"source": n["river"], "target": n["academy"], "label": "sponsors"},
            ],
        }
    second = {"city": ("river", "flows through", "river of the home town"),
              "school": ("founder", "founded by", "founder of the school"),
              "award": ("academy", "awarded by", "body that awards the prize"),
              "book": ("publisher", "published by", "publisher of the novel")}[kind]
    key, label, relation = second
    own_rel = {"city": "home town of the researcher", "school": "school the researcher attended",
               "award": "prize the researcher received", "book": "novel the researcher wrote"}[kind]
    return {
        "entities": [{"surface": n[kind], "relation": own_rel}, {"surface": n[key], "relation": relation}],
        "relations": [{"source": n[kind], "target": n[key], "label": label}],
    }


def _descriptions(t: Topic) -> dict[str, str]:
    y = t.years
    if t.lang == "zh":
        return {"city": f"一座建于{y['city']}年的小镇", "school": f"一所{y['school']}年创办的学校",
                "award": f"一个{y['award']}年设立的奖项", "book": f"一部{y['book']}年出版的小说",
                "river": "一条流经小镇的河", "founder": "一位办学者", "academy": "一个学术团体", "publisher": "一家出版机构"}
    return {"city": f"a harbour town founded in {y['city']}", "school": f"a technical school opened in {y['school']}",
            "award": f"a prize first given in {y['award']}", "book": f"a novel first printed in {y['book']}",
            "river": "a river that runs past a harbour", "founder": "the person who started a school",
            "academy": "a learned society", "publisher": "a small publishing house"}


def _questions(t: Topic) -> tuple[str, str]:
    n, d = t.names, _descriptions(t)
    if t.lang == "zh":
        init = f"哪位学者出生于{n['city']}，毕业于{n['school']}，并写下了《{n['book']}》？"
        final = f"哪位学者出生于{d['city']}，毕业于{d['school']}，并写下了{d['book']}？"
        return init, final
    if t.index in FEW_HOPS:
        return f"Which researcher wrote {n['book']}?", ""
    init = f"Which researcher was born in {n['city']}, studied at {n['school']} and wrote {n['book']}?"
    final = f"Which researcher was born in {d['city']}, studied at {d['school']} and wrote {d['book']}?"
    if t.index in ANSWER_LEAK:
        final = f"Which researcher, known as {n['theme']}, was born in {d['city']}?"
    return init, final


def _teacher_turns(t: Topic, final: str) -> list[dict]:
    n = t.names
    turns = []
    if t.index in MALFORMED_FIRST:
        turns.append("I should look for the novel first.")
    turns.append(f"<think>The question mentions a novel; searching for related titles.</think>\n"
                 f'<tool_call>{{"name": "search", "arguments": {{"query": "{n["book"]}"}}}}</tool_call>')
    if t.index % 3 == 0:
        turns.append({"text": "<think>The home town may narrow things down.</think>",
                      "tool_call": {"name": "fetch", "arguments": {"url": t.url("city")}}})
    turns.append({"text": "<think>The search points at one researcher page; reading it.</think>",
                  "tool_call": {"name": "fetch", "arguments": {"url": t.url("topic")}}})
    turns.append(f"<think>The page confirms the town, the school and the novel.</think>\n<answer>{n['theme']}</answer>")
    return [{"role": "teacher", "match": [final], "response": r} for r in turns]


def build_fixture(rng_seed: int = RNG_SEED) -> tuple[list[str], list[dict], dict]:
    """Return (corpus lines, mock script records, pipeline config)."""
    rng = random.Random(rng_seed)
    topics = _make_topics(rng)
    lines: list[str] = []
    script: list[dict] = []
    for t in topics:
        pages = _pages(t, topics[(t.index + 1) % len(topics)], rng)
        lines.extend(json.dumps(p, ensure_ascii=False) for p in pages)
        n = t.names
        theme_reply = "Someone Else Entirely" if t.index in UNGROUNDED else n["theme"]
        script.append({"role": "theme", "match": f"URL: {t.url('topic')}\n", "sticky": True,
                       "response": json.dumps({"theme": theme_reply}, ensure_ascii=False)})
        for kind in ("topic", "city", "school", "award", "book"):
            script.append({"role": "extract", "match": f"URL: {t.url(kind)}\n", "sticky": True,
                           "response": json.dumps(_extraction(t, kind), ensure_ascii=False)})
        for key, desc in _descriptions(t).items():
            script.append({"role": "obfuscate", "match": f"Entity: {n[key]}\n", "sticky": True, "response": desc})
        init, final = _questions(t)
        script.append({"role": "generate", "match": f"must be: {n['theme']}\n", "sticky": True, "response": init})
        if not final:
            continue
        script.append({"role": "rewrite", "match": f"\n{init}\n", "sticky": True, "response": final})
        easy = t.index in TOO_EASY
        script.append({"role": "closed_book", "match": final, "sticky": True,
                       "response": n["theme"] if easy else "I do not know."})
        script.append({"role": "oracle", "match": final, "sticky": True,
                       "response": "Unknown" if t.index in UNSOLVABLE else n["theme"]})
        script.extend(_teacher_turns(t, final))
        for tool in ("search", "fetch"):
            script.append({"role": "summarizer", "match": [final, f'"name": "{tool}"'], "sticky": True,
                           "response": f"The {tool} result mentions {n['book']} and its author."})
    # one duplicate record and one unreadable line
    lines.insert(7, lines[3])
    lines.insert(11, '{"url": "https://wiki.example.org/broken", "title": ')
    config = {
        "corpus": {"path": "corpus.jsonl", "format": "jsonl"},
        "sampler": {"k": 8, "expansion": "bfs", "seed_policy": "min-outdegree", "min_outdegree": 3,
                    "num_seeds": NUM_TOPICS},
        "qa": {"min_hops": 2, "obfuscation_ratio": 0.7},
        "verify": {"attempts": 1, "judge_mode": "normalized-exact"},
        "trajectory": {"max_tool_calls": 200, "context_budget": 256000, "summary_budget": 512, "obs_cap": 16000},
        "export": {"scheme": "full-sequence"},
        "roles": {"default": {"backend": "mock", "script": "mock_script.jsonl"}},
        "output_dir": "out",
        "rng_seed": rng_seed,
    }
    return lines, script, config


def write_fixture(directory: str | Path, rng_seed: int = RNG_SEED) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines, script, config = build_fixture(rng_seed)
    paths = {
        "corpus": directory / "corpus.jsonl",
        "script": directory / "mock_script.jsonl",
        "config": directory / "pipeline.yaml",
    }
    paths["corpus"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    paths["script"].write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in script), encoding="utf-8")
    paths["config"].write_text(yaml.safe_dump(config, sort_keys=False, allow_unicode=True), encoding="utf-8")
    return paths
