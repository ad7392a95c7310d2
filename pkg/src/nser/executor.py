"""Fine-grained explanations: run a layout over the graph and rank the reached items."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .graph import EntityRef, Graph, InvalidPathError, PathInstance, check_path, path_from_ids
from .layout import MetaLayout
from .model import Model, relation_forward


class LayoutSchemaError(ValueError):
    pass


@dataclass(frozen=True)
class ReasoningPath:
    """A walk emitted at a layout leaf, scored by <leaf vector, end entity>."""

    path: PathInstance
    leaf_id: int
    score: float


@dataclass
class RecEntry:
    item: EntityRef
    score: float
    paths: list[ReasoningPath] = field(default_factory=list)


@dataclass
class RecResult:
    user: EntityRef
    entries: list[RecEntry]

    @property
    def items(self) -> list[int]:
        return [e.item.global_id for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def node_vectors(m: Model, u: EntityRef, layout: MetaLayout) -> dict[int, np.ndarray]:
    """Module output per node id, computed breadth-first from the user embedding."""
    uvec = m.vector(u.global_id)
    vecs = {layout.root.node_id: uvec}
    queue = deque([layout.root])
    while queue:
        node = queue.popleft()
        for c in node.children:
            vecs[c.node_id] = relation_forward(m, c.relation, uvec, vecs[node.node_id])
            queue.append(c)
    return {k: v.data for k, v in vecs.items()}


def execute_layout(
    m: Model,
    g: Graph,
    u: EntityRef,
    layout: MetaLayout,
    exclude: Iterable[int] | None = None,
) -> list[ReasoningPath]:
    """Expand each partial walk to its top-k_x neighbours under the node's module output.

    Candidates are the graph neighbours along the node's relation, scored by
    <e_hat, embedding>, ties broken by ascending id. A hop identical to one
    already on the walk is never taken. Ids in ``exclude`` are not used as
    the final entity at a leaf. Walks are returned leaf by leaf in pre-order.
    """
    if u.type_id != g.user_type:
        raise TypeError(f"{g.qualified_name(u.global_id)} is not a user")
    for _, node in layout.nodes():
        if node.relation is not None and not 0 <= node.relation < len(g.relations):
            raise LayoutSchemaError(f"layout relation id {node.relation} is not in the graph schema")
    for leaf, trail in layout.root_to_leaf():
        types = [g.user_type]
        for n in trail:
            rel = g.relations[n.relation]
            if rel.head_type != types[-1]:
                raise LayoutSchemaError(f"relation {rel.name} cannot follow a {g.type_names[types[-1]]}")
            types.append(rel.tail_type)

    skip = frozenset(int(x) for x in exclude) if exclude is not None else frozenset()
    vecs = node_vectors(m, u, layout)
    emb = m.embedding.data
    # frontier entries: (entity ids, relation ids, hop set)
    frontier: dict[int, list[tuple[tuple[int, ...], tuple[int, ...], frozenset]]] = {
        layout.root.node_id: [((u.global_id,), (), frozenset())]
    }
    queue = deque([layout.root])
    while queue:
        node = queue.popleft()
        parent_paths = frontier[node.node_id]
        for c in node.children:
            vec = vecs[c.node_id]
            r = c.relation
            out = []
            for ents, rels, hops in parent_paths:
                last = ents[-1]
                cands = [
                    t for t in g.tails(last, r)
                    if (last, r, t) not in hops and not (c.is_leaf and t in skip)
                ]
                if not cands or c.k <= 0:
                    continue
                cands = np.asarray(cands, dtype=np.int64)
                scores = emb[cands] @ vec
                order = np.lexsort((cands, -scores))[: c.k]
                for t in cands[order]:
                    t = int(t)
                    out.append((ents + (t,), rels + (r,), hops | {(last, r, t)}))
            frontier[c.node_id] = out
            queue.append(c)

    results = []
    for leaf in layout.leaves():
        vec = vecs[leaf.node_id]
        for ents, rels, _ in frontier.get(leaf.node_id, []):
            score = float(np.dot(emb[ents[-1]], vec))
            results.append(ReasoningPath(path_from_ids(g, ents, rels), leaf.node_id, score))
    return results


def recommend(
    paths: Sequence[ReasoningPath],
    N: int,
    exclude: Iterable[int] = (),
    aggregate: str = "max",
) -> RecResult:
    """Deduplicate end items, score them over their supporting paths, keep the top N.

    Ties are broken by ascending item id; items in ``exclude`` are dropped.
    """
    skip = set(int(x) for x in exclude)
    by_item: dict[int, RecEntry] = {}
    user = paths[0].path.user if paths else None
    for rp in paths:
        end = rp.path.end
        if end.global_id in skip:
            continue
        entry = by_item.get(end.global_id)
        if entry is None:
            entry = by_item[end.global_id] = RecEntry(end, rp.score)
        entry.paths.append(rp)
    for entry in by_item.values():
        scores = [p.score for p in entry.paths]
        if aggregate == "max":
            entry.score = max(scores)
        elif aggregate == "mean":
            entry.score = float(np.mean(scores))
        else:
            raise ValueError(f"unknown aggregate {aggregate!r}")
    ranked = sorted(by_item.values(), key=lambda e: (-e.score, e.item.global_id))[:N]
    return RecResult(user, ranked)


def explain(path: PathInstance, g: Graph) -> str:
    """Render a walk as ``u --rel--> e --rel--> ...`` using entity names."""
    try:
        check_path(g, path)
    except InvalidPathError as exc:
        raise InvalidPathError(f"cannot explain path: {exc}") from None
    parts = [g.entity_name[path.user.global_id]]
    for r, e in path.steps:
        parts.append(f"--{g.relations[r].name}-->")
        parts.append(g.entity_name[e.global_id])
    return " ".join(parts)
