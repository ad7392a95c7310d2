"""Coarse-grained explanations: metapath values, budget allocation and layout trees."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .graph import EntityRef, Graph, Metapath, enumerate_paths
from .model import Model, path_forward

log = logging.getLogger(__name__)

NEG_INF = float("-inf")


def heuristic_value(
    m: Model,
    g: Graph,
    u: EntityRef,
    pi: Metapath,
    positives: Iterable[int],
    sample_limit: int = 16,
    seed: int | np.random.Generator = 0,
) -> float:
    """Mean chained log-likelihood of sampled positive walks; -inf when none exist."""
    return heuristic_values(m, g, u, [pi], positives, sample_limit, seed)[0]


def heuristic_values(
    m: Model,
    g: Graph,
    u: EntityRef,
    metapaths: Sequence[Metapath],
    positives: Iterable[int],
    sample_limit: int = 16,
    seed: int | np.random.Generator = 0,
) -> list[float]:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pos = list(positives)
    values = []
    for pi in metapaths:
        arr = enumerate_paths(g, u.global_id, pi.relations, pos)
        if len(arr) == 0:
            values.append(NEG_INF)
            continue
        if len(arr) > sample_limit:
            arr = arr[np.sort(rng.choice(len(arr), sample_limit, replace=False))]
        ll, _ = path_forward(m, g, arr, pi.relations)
        values.append(float(np.mean(ll.data, dtype=np.float64)))
    return values


def allocate_budget(values: Sequence[float], caps: Sequence[int], K: int) -> list[int]:
    """Greedy fill by descending value (ties by index) among finite-valued metapaths.

    Spends min(K, total finite capacity); -inf entries get nothing.
    """
    if K < 0 or any(c < 0 for c in caps):
        raise ValueError("budget and caps must be non-negative")
    if len(values) != len(caps):
        raise ValueError("values and caps differ in length")
    y = [0] * len(values)
    order = sorted((j for j, v in enumerate(values) if v != NEG_INF and not math.isnan(v)), key=lambda j: (-values[j], j))
    left = K
    for j in order:
        if left == 0:
            break
        y[j] = min(caps[j], left)
        left -= y[j]
    return y


@dataclass
class LayoutNode:
    relation: int | None
    k: int = 0
    children: list["LayoutNode"] = field(default_factory=list)
    metapath: int | None = None  # index into MetaLayout.metapaths for leaves
    node_id: int = -1

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class MetaLayout:
    root: LayoutNode
    metapaths: list[Metapath]
    counts: list[int]

    def nodes(self) -> list[tuple[int, LayoutNode]]:
        """(depth, node) in pre-order."""
        out = []
        stack = [(0, self.root)]
        while stack:
            depth, node = stack.pop()
            out.append((depth, node))
            stack.extend((depth + 1, c) for c in reversed(node.children))
        return out

    def leaves(self) -> list[LayoutNode]:
        return [n for _, n in self.nodes() if n.is_leaf and n is not self.root]

    def leaf_for(self, j: int) -> LayoutNode:
        for leaf in self.leaves():
            if leaf.metapath == j:
                return leaf
        raise KeyError(j)

    def root_to_leaf(self) -> list[tuple[LayoutNode, list[LayoutNode]]]:
        """(leaf, nodes from the root's child down to the leaf)."""
        out = []

        def walk(node, trail):
            if node.is_leaf and node is not self.root:
                out.append((node, trail))
            for c in node.children:
                walk(c, trail + [c])

        walk(self.root, [])
        return out

    def is_empty(self) -> bool:
        return not self.root.children

    def serialize(self, g: Graph) -> str:
        """One node per line: ``depth, relation_name, k`` in pre-order."""
        lines = []
        for depth, node in self.nodes():
            name = "root" if node.relation is None else g.relations[node.relation].name
            lines.append(f"{depth}, {name}, {node.k}")
        return "\n".join(lines) + "\n"


def _recursive_update(x: LayoutNode, is_root: bool) -> None:
    for c in x.children:
        _recursive_update(c, False)
    if is_root:
        x.k = 1
        return
    if x.is_leaf:
        return  # leaves keep their seeded count
    C = [c.k for c in x.children if c.k > 0]
    if not C:
        x.k = 0
        return
    x.k = min(C)
    for c in x.children:
        c.k //= x.k


def build_layout(metapaths: Sequence[Metapath], counts: Sequence[int]) -> MetaLayout:
    """Prefix-merge metapaths into a tree, seed leaves with their counts, propagate.

    Entries with count 0 are ignored. A metapath that is a proper prefix of
    another included one is dropped with a warning.
    """
    if len(metapaths) != len(counts):
        raise ValueError("metapaths and counts differ in length")
    chosen = [(Metapath(tuple(p.relations)), int(y)) for p, y in zip(metapaths, counts) if y > 0]
    seen = set()
    for p, _ in chosen:
        if p in seen:
            raise ValueError(f"duplicate metapath {p.relations}")
        if len(p) == 0:
            raise ValueError("empty metapath")
        seen.add(p)
    kept = []
    for p, y in chosen:
        longer = [q for q, _ in chosen if len(q) > len(p) and q.relations[: len(p)] == p.relations]
        if longer:
            log.warning("dropping metapath %s: it is a prefix of %s", p.relations, longer[0].relations)
            continue
        kept.append((p, y))

    root = LayoutNode(None)
    for j, (p, y) in enumerate(kept):
        node = root
        for r in p.relations:
            nxt = next((c for c in node.children if c.relation == r), None)
            if nxt is None:
                nxt = LayoutNode(r)
                node.children.append(nxt)
            node = nxt
        node.metapath = j
        node.k = y
    _recursive_update(root, True)
    layout = MetaLayout(root, [p for p, _ in kept], [y for _, y in kept])
    for i, (_, node) in enumerate(layout.nodes()):
        node.node_id = i
    return layout


# -- allocation strategies --------------------------------------------------


def uniform_counts(M: int, K: int, rng: np.random.Generator) -> list[int]:
    """y_j = number of K uniform draws over [M] landing on j."""
    if M == 0:
        return []
    draws = rng.integers(0, M, K)
    return np.bincount(draws, minlength=M).astype(int).tolist()


def prior_counts(caps: Sequence[int], K: int) -> list[int]:
    """y_j = ceil(K * k_j / sum k)."""
    total = sum(caps)
    if total == 0:
        return [0] * len(caps)
    return [-(-K * c // total) for c in caps]


def generate_layout(
    m: Model,
    g: Graph,
    u: EntityRef,
    metapaths: Sequence[Metapath],
    positives: Iterable[int],
    K: int = 15,
    caps: Sequence[int] | int | None = None,
    strategy: str = "heuristic",
    sample_limit: int = 16,
    seed: int = 0,
) -> tuple[MetaLayout, list[float], list[int]]:
    """Values, allocation and layout for one user under the given strategy."""
    M = len(metapaths)
    if caps is None:
        caps = [K] * M
    elif isinstance(caps, int):
        caps = [caps] * M
    rng = np.random.default_rng([seed, u.global_id])
    pos = list(positives)
    if strategy == "heuristic":
        values = heuristic_values(m, g, u, metapaths, pos, sample_limit, rng)
        y = allocate_budget(values, caps, K)
    elif strategy == "uniform":
        values = [math.nan] * M
        y = uniform_counts(M, K, rng)
    elif strategy == "prior":
        values = [math.nan] * M
        y = prior_counts(caps, K)
    else:
        raise ValueError(f"unknown layout strategy {strategy!r}")
    return build_layout(metapaths, y), values, y
