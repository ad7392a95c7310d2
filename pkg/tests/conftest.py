from __future__ import annotations

import numpy as np
import pytest

from nser.graph import Graph, RelationDef

SCHEMA = [
    ("purchase", "user", "item"),
    ("purchase_by", "item", "user"),
    ("described_by", "item", "feature"),
    ("describes", "feature", "item"),
    ("mention", "user", "feature"),
    ("mentioned_by", "feature", "user"),
]


def build_graph(entities, relations, triples) -> Graph:
    """entities: [(type, name)]; relations: [(name, head_type, tail_type)];
    triples: [("type:name", relation, "type:name")]."""
    types: list[str] = []
    for t, _ in entities:
        if t not in types:
            types.append(t)
    ents = [(types.index(t), n) for t, n in entities]
    gid = {f"{t}:{n}": k for k, (t, n) in enumerate(entities)}
    rels = [RelationDef(k, name, types.index(h), types.index(t)) for k, (name, h, t) in enumerate(relations)]
    rid = {name: k for k, (name, _, _) in enumerate(relations)}
    return Graph(types, ents, rels, [(gid[h], rid[r], gid[t]) for h, r, t in triples])


def with_inverses(pairs):
    inv = {"purchase": "purchase_by", "described_by": "describes", "mention": "mentioned_by"}
    out = []
    for h, r, t in pairs:
        out.append((h, r, t))
        out.append((t, inv[r], h))
    return out


@pytest.fixture
def small_graph() -> Graph:
    """Three users, four items, two features, both relation directions."""
    entities = [("user", f"u{k}") for k in range(3)] + [("item", f"i{k}") for k in range(4)] + [
        ("feature", f"f{k}") for k in range(2)
    ]
    pairs = [
        ("user:u0", "purchase", "item:i0"),
        ("user:u0", "purchase", "item:i1"),
        ("user:u1", "purchase", "item:i1"),
        ("user:u1", "purchase", "item:i2"),
        ("user:u2", "purchase", "item:i3"),
        ("item:i0", "described_by", "feature:f0"),
        ("item:i2", "described_by", "feature:f0"),
        ("item:i3", "described_by", "feature:f1"),
        ("user:u0", "mention", "feature:f0"),
        ("user:u2", "mention", "feature:f1"),
    ]
    return build_graph(entities, SCHEMA, with_inverses(pairs))


def random_graph(rng: np.random.Generator, n_users=6, n_items=8, n_feats=3, p=0.3) -> Graph:
    entities = (
        [("user", f"u{k}") for k in range(n_users)]
        + [("item", f"i{k}") for k in range(n_items)]
        + [("feature", f"f{k}") for k in range(n_feats)]
    )
    pairs = []
    for u in range(n_users):
        for i in range(n_items):
            if rng.random() < p:
                pairs.append((f"user:u{u}", "purchase", f"item:i{i}"))
        for f in range(n_feats):
            if rng.random() < p:
                pairs.append((f"user:u{u}", "mention", f"feature:f{f}"))
    for i in range(n_items):
        for f in range(n_feats):
            if rng.random() < p:
                pairs.append((f"item:i{i}", "described_by", f"feature:f{f}"))
    return build_graph(entities, SCHEMA, with_inverses(pairs))


# acceptance criteria report one line each at the end of the run
_CRITERIA: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    n, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if rep.passed else "FAIL"
    _CRITERIA[n] = f"criterion {n:2d} {status}  {title}" + (f"  [{detail}]" if detail else "")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[n])
