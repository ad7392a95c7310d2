"""Typed knowledge graph store: ingestion, adjacency queries, metapaths and path sampling."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

USER_TYPE = "user"
ITEM_TYPE = "item"


class GraphFormatError(ValueError):
    """Raised for malformed or schema-violating graph input."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class InvalidPathError(ValueError):
    pass


@dataclass(frozen=True)
class EntityRef:
    type_id: int
    local_id: int
    global_id: int


@dataclass(frozen=True)
class RelationDef:
    relation_id: int
    name: str
    head_type: int
    tail_type: int


@dataclass(frozen=True)
class Metapath:
    relations: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.relations)

    def __iter__(self):
        return iter(self.relations)


@dataclass(frozen=True)
class PathInstance:
    """A concrete walk ``user -r1-> e1 -r2-> ... -> e_n``."""

    user: EntityRef
    steps: tuple[tuple[int, EntityRef], ...]

    @property
    def entity_ids(self) -> tuple[int, ...]:
        return (self.user.global_id,) + tuple(e.global_id for _, e in self.steps)

    @property
    def relation_ids(self) -> tuple[int, ...]:
        return tuple(r for r, _ in self.steps)

    @property
    def metapath(self) -> Metapath:
        return Metapath(self.relation_ids)

    @property
    def end(self) -> EntityRef:
        return self.steps[-1][1] if self.steps else self.user

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class GraphStats:
    entities_per_type: dict[str, int]
    triples_per_relation: dict[str, int]

    def lines(self) -> list[str]:
        out = [f"entities {name} {n}" for name, n in self.entities_per_type.items()]
        out += [f"triples {name} {n}" for name, n in self.triples_per_relation.items()]
        return out


class Graph:
    """Immutable typed knowledge graph with forward and reverse adjacency.

    Entities get dense global ids in declaration order. Adjacency lists are
    sorted tuples of global ids keyed by ``(head_gid, relation_id)``.
    """

    def __init__(
        self,
        type_names: Sequence[str],
        entities: Sequence[tuple[int, str]],
        relations: Sequence[RelationDef],
        triples: Iterable[tuple[int, int, int]],
        user_type: str = USER_TYPE,
        item_type: str = ITEM_TYPE,
    ):
        self.type_names: tuple[str, ...] = tuple(type_names)
        self.type_index = {name: t for t, name in enumerate(self.type_names)}
        if len(self.type_index) != len(self.type_names):
            raise GraphFormatError("duplicate entity type names")

        n = len(entities)
        self.entity_type = np.empty(n, dtype=np.int64)
        self.entity_local = np.empty(n, dtype=np.int64)
        self.entity_name: list[str] = []
        self._by_name: list[dict[str, int]] = [dict() for _ in self.type_names]
        members: list[list[int]] = [[] for _ in self.type_names]
        for gid, (t, name) in enumerate(entities):
            if not 0 <= t < len(self.type_names):
                raise GraphFormatError(f"entity {name!r} has undeclared type id {t}")
            if name in self._by_name[t]:
                raise GraphFormatError(f"duplicate entity {self.type_names[t]}:{name}")
            self._by_name[t][name] = gid
            self.entity_type[gid] = t
            self.entity_local[gid] = len(members[t])
            self.entity_name.append(name)
            members[t].append(gid)
        self.type_members: tuple[np.ndarray, ...] = tuple(
            np.asarray(m, dtype=np.int64) for m in members
        )

        self.relations: tuple[RelationDef, ...] = tuple(relations)
        self.relation_index = {r.name: r.relation_id for r in self.relations}
        for rid, r in enumerate(self.relations):
            if r.relation_id != rid:
                raise GraphFormatError(f"relation {r.name!r} has id {r.relation_id}, expected {rid}")
        if len(self.relation_index) != len(self.relations):
            raise GraphFormatError("duplicate relation names")

        fwd: dict[tuple[int, int], set[int]] = defaultdict(set)
        rev: dict[tuple[int, int], set[int]] = defaultdict(set)
        count = 0
        for h, r, t in triples:
            self._check_triple(h, r, t)
            if t in fwd[(h, r)]:
                raise GraphFormatError(
                    f"duplicate triple ({self.entity_name[h]}, {self.relations[r].name}, "
                    f"{self.entity_name[t]})"
                )
            fwd[(h, r)].add(t)
            rev[(t, r)].add(h)
            count += 1
        self._adj = {k: tuple(sorted(v)) for k, v in fwd.items()}
        self._radj = {k: tuple(sorted(v)) for k, v in rev.items()}
        self.num_triples = count

        self.user_type = self.type_index.get(user_type, -1)
        self.item_type = self.type_index.get(item_type, -1)

    def _check_triple(self, h: int, r: int, t: int) -> None:
        n = len(self.entity_name)
        if not (0 <= h < n and 0 <= t < n):
            raise GraphFormatError(f"triple references unknown entity id ({h}, {r}, {t})")
        if not 0 <= r < len(self.relations):
            raise GraphFormatError(f"triple references unknown relation id {r}")
        rel = self.relations[r]
        if self.entity_type[h] != rel.head_type or self.entity_type[t] != rel.tail_type:
            raise GraphFormatError(
                f"type violation: {self.qualified_name(h)} {rel.name} {self.qualified_name(t)} "
                f"but {rel.name} is {self.type_names[rel.head_type]}->{self.type_names[rel.tail_type]}"
            )

    # -- lookups -----------------------------------------------------------

    @property
    def num_entities(self) -> int:
        return len(self.entity_name)

    def ref(self, gid: int) -> EntityRef:
        gid = int(gid)
        return EntityRef(int(self.entity_type[gid]), int(self.entity_local[gid]), gid)

    def lookup(self, type_name: str, name: str) -> EntityRef:
        try:
            t = self.type_index[type_name]
            return self.ref(self._by_name[t][name])
        except KeyError:
            raise KeyError(f"unknown entity {type_name}:{name}") from None

    def find(self, name: str) -> EntityRef:
        """Resolve ``type:name`` or a bare name that is unique across types."""
        if ":" in name:
            type_name, _, local = name.partition(":")
            if type_name in self.type_index:
                return self.lookup(type_name, local)
        hits = [t for t in range(len(self.type_names)) if name in self._by_name[t]]
        if len(hits) != 1:
            raise KeyError(f"unknown or ambiguous entity {name!r}")
        return self.ref(self._by_name[hits[0]][name])

    def qualified_name(self, gid: int) -> str:
        return f"{self.type_names[self.entity_type[gid]]}:{self.entity_name[gid]}"

    def relation(self, rid_or_name: int | str) -> RelationDef:
        if isinstance(rid_or_name, str):
            try:
                return self.relations[self.relation_index[rid_or_name]]
            except KeyError:
                raise KeyError(f"unknown relation {rid_or_name!r}") from None
        if not 0 <= rid_or_name < len(self.relations):
            raise KeyError(f"unknown relation id {rid_or_name}")
        return self.relations[rid_or_name]

    def users(self) -> np.ndarray:
        return self.type_members[self.user_type]

    def items(self) -> np.ndarray:
        return self.type_members[self.item_type]

    def tails(self, head: int, rid: int) -> tuple[int, ...]:
        return self._adj.get((head, rid), ())

    def heads(self, tail: int, rid: int) -> tuple[int, ...]:
        return self._radj.get((tail, rid), ())

    def has_triple(self, h: int, r: int, t: int) -> bool:
        tails = self._adj.get((h, r))
        return tails is not None and t in tails

    def triples(self) -> list[tuple[int, int, int]]:
        """All triples in canonical order (relation, head, tail)."""
        out = [(h, r, t) for (h, r), tails in self._adj.items() for t in tails]
        out.sort(key=lambda x: (x[1], x[0], x[2]))
        return out

    def interaction_relations(self) -> list[int]:
        """Relations joining the user and item types, in either direction."""
        ends = {self.user_type, self.item_type}
        return [
            r.relation_id
            for r in self.relations
            if {r.head_type, r.tail_type} == ends and r.head_type != r.tail_type
        ]

    def interactions(self, relation: str | int = "purchase") -> dict[int, list[int]]:
        rid = self.relation(relation).relation_id
        out: dict[int, list[int]] = {}
        for u in self.users():
            tails = self.tails(int(u), rid)
            if tails:
                out[int(u)] = list(tails)
        return out

    def without_pairs(self, pairs: Iterable[tuple[int, int]]) -> "Graph":
        """Copy of the graph with every user-item triple for the given pairs removed."""
        drop = set()
        inter = set(self.interaction_relations())
        for u, i in pairs:
            drop.add((u, i))
            drop.add((i, u))
        kept = [(h, r, t) for h, r, t in self.triples() if not (r in inter and (h, t) in drop)]
        return Graph(
            self.type_names,
            [(int(self.entity_type[g]), self.entity_name[g]) for g in range(self.num_entities)],
            self.relations,
            kept,
            self.type_names[self.user_type] if self.user_type >= 0 else USER_TYPE,
            self.type_names[self.item_type] if self.item_type >= 0 else ITEM_TYPE,
        )

    def stats(self) -> GraphStats:
        per_rel = {r.name: 0 for r in self.relations}
        for (h, r), tails in self._adj.items():
            per_rel[self.relations[r].name] += len(tails)
        return GraphStats(
            {name: len(self.type_members[t]) for t, name in enumerate(self.type_names)},
            per_rel,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.type_names == other.type_names
            and self.entity_name == other.entity_name
            and np.array_equal(self.entity_type, other.entity_type)
            and self.relations == other.relations
            and self._adj == other._adj
            and self.user_type == other.user_type
            and self.item_type == other.item_type
        )

    def __repr__(self) -> str:
        return (
            f"Graph(types={len(self.type_names)}, entities={self.num_entities}, "
            f"relations={len(self.relations)}, triples={self.num_triples})"
        )


# -- file formats ------------------------------------------------------------


def _content_lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line


def ingest_triples(
    entity_file: str | Path,
    triple_file: str | Path,
    user_type: str = USER_TYPE,
    item_type: str = ITEM_TYPE,
) -> tuple[Graph, GraphStats]:
    """Load and validate a graph from an entity file and a triple file."""
    entity_file, triple_file = Path(entity_file), Path(triple_file)
    type_names: list[str] = []
    type_index: dict[str, int] = {}
    entities: list[tuple[int, str]] = []
    seen: set[tuple[int, str]] = set()
    for lineno, line in _content_lines(entity_file):
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise GraphFormatError("expected '<type>\\t<name>'", str(entity_file), lineno)
        type_name, name = parts
        if ":" in type_name:
            raise GraphFormatError(f"type name {type_name!r} may not contain ':'", str(entity_file), lineno)
        if type_name not in type_index:
            type_index[type_name] = len(type_names)
            type_names.append(type_name)
        key = (type_index[type_name], name)
        if key in seen:
            raise GraphFormatError(f"duplicate entity {type_name}:{name}", str(entity_file), lineno)
        seen.add(key)
        entities.append(key)

    by_name = {key: gid for gid, key in enumerate(entities)}
    relations: list[RelationDef] = []
    rel_index: dict[str, int] = {}
    triples: list[tuple[int, int, int]] = []
    seen_triples: set[tuple[int, int, int]] = set()
    etypes = [t for t, _ in entities]

    def resolve(token: str, lineno: int) -> int:
        type_name, sep, name = token.partition(":")
        if not sep or not name:
            raise GraphFormatError(f"expected '<type>:<name>', got {token!r}", str(triple_file), lineno)
        if type_name not in type_index:
            raise GraphFormatError(f"undeclared entity type {type_name!r}", str(triple_file), lineno)
        gid = by_name.get((type_index[type_name], name))
        if gid is None:
            raise GraphFormatError(f"undeclared entity {token!r}", str(triple_file), lineno)
        return gid

    for lineno, line in _content_lines(triple_file):
        if line.startswith("@relation"):
            parts = line.split()
            if len(parts) != 4:
                raise GraphFormatError(
                    "expected '@relation <name> <head_type> <tail_type>'", str(triple_file), lineno
                )
            _, name, head, tail = parts
            if name in rel_index:
                raise GraphFormatError(f"relation {name!r} declared twice", str(triple_file), lineno)
            for tn in (head, tail):
                if tn not in type_index:
                    raise GraphFormatError(f"undeclared entity type {tn!r}", str(triple_file), lineno)
            rel_index[name] = len(relations)
            relations.append(RelationDef(len(relations), name, type_index[head], type_index[tail]))
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise GraphFormatError(
                "expected '<type>:<head>\\t<relation>\\t<type>:<tail>'", str(triple_file), lineno
            )
        h = resolve(parts[0], lineno)
        if parts[1] not in rel_index:
            raise GraphFormatError(f"undeclared relation {parts[1]!r}", str(triple_file), lineno)
        r = rel_index[parts[1]]
        t = resolve(parts[2], lineno)
        rel = relations[r]
        if etypes[h] != rel.head_type or etypes[t] != rel.tail_type:
            raise GraphFormatError(
                f"type violation: {parts[0]} {parts[1]} {parts[2]}, but {parts[1]} is "
                f"{type_names[rel.head_type]}->{type_names[rel.tail_type]}",
                str(triple_file),
                lineno,
            )
        if (h, r, t) in seen_triples:
            raise GraphFormatError(f"duplicate triple {line!r}", str(triple_file), lineno)
        seen_triples.add((h, r, t))
        triples.append((h, r, t))

    g = Graph(type_names, entities, relations, triples, user_type, item_type)
    return g, g.stats()


def load_graph(path: str | Path, **kwargs) -> Graph:
    """Load ``entities.tsv`` and ``triples.tsv`` from a graph directory."""
    path = Path(path)
    return ingest_triples(path / "entities.tsv", path / "triples.tsv", **kwargs)[0]


def emit_graph(g: Graph, entity_file: str | Path, triple_file: str | Path) -> None:
    """Write the graph in the ingest format, canonically ordered."""
    with open(entity_file, "w", encoding="utf-8", newline="\n") as fh:
        for gid in range(g.num_entities):
            fh.write(f"{g.type_names[g.entity_type[gid]]}\t{g.entity_name[gid]}\n")
    with open(triple_file, "w", encoding="utf-8", newline="\n") as fh:
        for r in g.relations:
            fh.write(f"@relation {r.name} {g.type_names[r.head_type]} {g.type_names[r.tail_type]}\n")
        for h, r, t in g.triples():
            fh.write(f"{g.qualified_name(h)}\t{g.relations[r].name}\t{g.qualified_name(t)}\n")


def save_graph(g: Graph, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    emit_graph(g, path / "entities.tsv", path / "triples.tsv")


# -- queries -------------------------------------------------------------------


def neighbors(g: Graph, e: EntityRef, r: int) -> list[EntityRef]:
    rel = g.relation(r)
    if e.type_id != rel.head_type:
        raise TypeError(
            f"{g.qualified_name(e.global_id)} is not a {g.type_names[rel.head_type]}, "
            f"cannot follow {rel.name}"
        )
    return [g.ref(t) for t in g.tails(e.global_id, rel.relation_id)]


def _realized(g: Graph, rels: Sequence[int]) -> bool:
    frontier = set(int(u) for u in g.users())
    for r in rels:
        frontier = {t for h in frontier for t in g.tails(h, r)}
        if not frontier:
            return False
    return True


def enumerate_metapaths(g: Graph, max_len: int = 3, min_len: int = 1) -> list[Metapath]:
    """All chainable user-to-item relation sequences realized by at least one concrete path.

    Ordered by length, then by relation ids.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    by_head: dict[int, list[int]] = defaultdict(list)
    for r in g.relations:
        by_head[r.head_type].append(r.relation_id)

    found: list[tuple[int, ...]] = []

    def dfs(node_type: int, prefix: tuple[int, ...]) -> None:
        if prefix and node_type == g.item_type and len(prefix) >= min_len:
            found.append(prefix)
        if len(prefix) == max_len:
            return
        for rid in by_head[node_type]:
            dfs(g.relations[rid].tail_type, prefix + (rid,))

    if g.user_type >= 0 and g.item_type >= 0:
        dfs(g.user_type, ())
    found = sorted(set(found), key=lambda p: (len(p), p))
    return [Metapath(p) for p in found if _realized(g, p)]


def drop_prefix_nested(metapaths: Sequence[Metapath]) -> list[Metapath]:
    """Remove every metapath that is a proper prefix of another one in the list."""
    out = []
    for p in metapaths:
        nested = any(
            len(q) > len(p) and q.relations[: len(p)] == p.relations for q in metapaths
        )
        if not nested:
            out.append(p)
    return out


def enumerate_paths(
    g: Graph, user: int, rels: Sequence[int], targets: Iterable[int] | None = None
) -> np.ndarray:
    """Every walk from ``user`` along ``rels``, optionally ending in ``targets``.

    Walks that repeat an identical (head, relation, tail) hop are skipped.
    Returns an int array of shape (n_paths, len(rels) + 1), lexicographically
    ordered by entity ids.
    """
    L = len(rels)
    # backward pruning: alive[j] holds entities from which the remaining hops can finish
    alive: list[set[int] | None] = [None] * (L + 1)
    if targets is not None:
        alive[L] = set(int(t) for t in targets)
        for j in range(L - 1, -1, -1):
            alive[j] = {h for t in alive[j + 1] for h in g.heads(t, rels[j])}
        if user not in alive[0]:
            return np.empty((0, L + 1), dtype=np.int64)

    out: list[list[int]] = []
    walk = [user]
    hops: list[tuple[int, int, int]] = []

    def dfs(j: int) -> None:
        if j == L:
            out.append(list(walk))
            return
        r = rels[j]
        last = walk[-1]
        ok = alive[j + 1]
        for t in g.tails(last, r):
            if ok is not None and t not in ok:
                continue
            hop = (last, r, t)
            if hop in hops:
                continue
            walk.append(t)
            hops.append(hop)
            dfs(j + 1)
            hops.pop()
            walk.pop()

    dfs(0)
    return np.asarray(out, dtype=np.int64).reshape(len(out), L + 1)


def path_from_ids(g: Graph, entity_ids: Sequence[int], relation_ids: Sequence[int]) -> PathInstance:
    return PathInstance(
        g.ref(entity_ids[0]),
        tuple((int(r), g.ref(e)) for r, e in zip(relation_ids, entity_ids[1:])),
    )


def sample_positive_paths(
    g: Graph,
    u: EntityRef,
    pi: Metapath,
    positives: Iterable[int | EntityRef],
    limit: int,
    seed: int | np.random.Generator = 0,
) -> list[PathInstance]:
    """Up to ``limit`` walks from ``u`` along ``pi`` ending in a positive item.

    When more walks exist than ``limit``, a seeded uniform sample without
    replacement is drawn; the result keeps enumeration order.
    """
    if u.type_id != g.user_type:
        raise TypeError(f"{g.qualified_name(u.global_id)} is not a user")
    pos = [p.global_id if isinstance(p, EntityRef) else int(p) for p in positives]
    arr = enumerate_paths(g, u.global_id, pi.relations, pos)
    if len(arr) > limit:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        arr = arr[np.sort(rng.choice(len(arr), size=limit, replace=False))]
    return [path_from_ids(g, row, pi.relations) for row in arr]


def check_path(g: Graph, path: PathInstance, metapath: Metapath | None = None) -> None:
    """Raise InvalidPathError unless every hop is a stored triple and relations match."""
    ents = path.entity_ids
    rels = path.relation_ids
    for ref in [path.user] + [e for _, e in path.steps]:
        if not 0 <= ref.global_id < g.num_entities or g.ref(ref.global_id) != ref:
            raise InvalidPathError(f"dangling entity reference {ref}")
    for j, r in enumerate(rels):
        if not g.has_triple(ents[j], r, ents[j + 1]):
            raise InvalidPathError(
                f"hop {j + 1} ({g.qualified_name(ents[j])}, {g.relation(r).name}, "
                f"{g.qualified_name(ents[j + 1])}) is not in the graph"
            )
    if metapath is not None and tuple(rels) != tuple(metapath.relations):
        raise InvalidPathError(f"relations {rels} do not follow metapath {metapath.relations}")


def is_valid_path(g: Graph, path: PathInstance, metapath: Metapath | None = None) -> bool:
    try:
        check_path(g, path, metapath)
    except InvalidPathError:
        return False
    return True


def metapath_names(g: Graph, pi: Metapath) -> str:
    return "-".join(g.relations[r].name for r in pi.relations)
