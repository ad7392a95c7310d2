"""Entity embeddings, neural relation modules and the path / ranking losses."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .graph import EntityRef, Graph, PathInstance
from .params import ParamStore, load_checkpoint, save_checkpoint
from .rng import substream
from .tensor import DTYPE, Tensor


@dataclass(frozen=True)
class NeuralRelationModule:
    """Two-layer perceptron mapping concat(user, predecessor) [2d] to a successor vector [d]."""

    relation_id: int
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor


class Model:
    def __init__(self, num_entities: int, num_relations: int, d: int = 32, seed: int = 0, dtype=DTYPE):
        if d < 2:
            raise ValueError("embedding dimension must be >= 2")
        self.d = d
        self.num_entities = num_entities
        self.num_relations = num_relations
        self.store = ParamStore(dtype)
        rng = substream(seed, "init")
        bound = 1.0 / math.sqrt(d)
        self.embedding = self.store.add("embedding", rng.uniform(-bound, bound, (num_entities, d)))
        self.modules: list[NeuralRelationModule] = []
        b_in = 1.0 / math.sqrt(2 * d)
        for r in range(num_relations):
            self.modules.append(
                NeuralRelationModule(
                    r,
                    self.store.add(f"rel{r}.W1", rng.uniform(-b_in, b_in, (2 * d, d))),
                    self.store.add(f"rel{r}.b1", np.zeros(d)),
                    self.store.add(f"rel{r}.W2", rng.uniform(-bound, bound, (d, d))),
                    self.store.add(f"rel{r}.b2", np.zeros(d)),
                )
            )

    @classmethod
    def for_graph(cls, g: Graph, d: int = 32, seed: int = 0, dtype=DTYPE) -> "Model":
        return cls(g.num_entities, len(g.relations), d, seed, dtype)

    @property
    def dtype(self):
        return self.store.dtype

    def module(self, r: int) -> NeuralRelationModule:
        if not 0 <= r < self.num_relations:
            raise KeyError(f"unknown relation id {r}")
        return self.modules[r]

    def vector(self, gid: int) -> Tensor:
        return T.reshape(T.take_rows(self.embedding, [gid]), (self.d,))

    def meta(self) -> dict:
        return {"d": self.d, "entities": self.num_entities, "relations": self.num_relations}

    def save(self, path, extra_meta: dict | None = None) -> None:
        save_checkpoint(path, self.store.arrays(), "model", {**self.meta(), **(extra_meta or {})})

    @classmethod
    def load(cls, path) -> tuple["Model", dict]:
        _, meta, arrays = load_checkpoint(path, expect_kind="model")
        m = cls(int(meta["entities"]), int(meta["relations"]), int(meta["d"]))
        m.store.load_arrays(arrays)
        return m, meta


# -- forward pieces ------------------------------------------------------------


def relation_forward(m: Model, r: int, u_vec: Tensor, e_vec: Tensor) -> Tensor:
    """phi_r(u, e): ReLU hidden layer over the concatenated pair, then a linear map."""
    mod = m.module(r)
    if u_vec.shape[-1] != m.d or e_vec.shape[-1] != m.d:
        raise ValueError(f"expected vectors of dimension {m.d}, got {u_vec.shape} and {e_vec.shape}")
    h = T.relu(T.affine_forward(T.concat([u_vec, e_vec]), mod.W1, mod.b1))
    return T.affine_forward(h, mod.W2, mod.b2)


def _step_logprobs(m: Model, g: Graph, U: Tensor, P: Tensor, r: int, targets) -> tuple[Tensor, Tensor]:
    """Batched log P(target | u, prev, r) with the softmax over the target's whole type."""
    tail_type = g.relation(r).tail_type
    targets = np.asarray(targets, dtype=np.int64)
    if np.any(g.entity_type[targets] != tail_type):
        raise TypeError(f"target entity is not of type {g.type_names[tail_type]}")
    out = relation_forward(m, r, U, P)
    cand = T.take_rows(m.embedding, g.type_members[tail_type])
    logp = T.log_softmax(T.matmul_t(out, cand))
    return T.pick(logp, g.entity_local[targets]), out


def step_logprob(
    m: Model, g: Graph, u: EntityRef, prev_vec: Tensor, r: int, target: EntityRef
) -> Tensor:
    tail_type = g.relation(r).tail_type
    if target.type_id != tail_type:
        raise TypeError(
            f"{g.qualified_name(target.global_id)} is not a {g.type_names[tail_type]} "
            f"(tail type of {g.relation(r).name})"
        )
    U = T.take_rows(m.embedding, [u.global_id])
    P = T.reshape(prev_vec, (1, m.d))
    lp, _ = _step_logprobs(m, g, U, P, r, [target.global_id])
    return T.reshape(lp, ())


def path_forward(
    m: Model, g: Graph, ents: np.ndarray, rels: Sequence[int], chained: bool = True
) -> tuple[Tensor, Tensor]:
    """Log-likelihood of each walk and the last module's output.

    ``ents`` is [n, len(rels)+1] with the user in column 0. With ``chained``
    the predecessor fed to each module is the previous module's output
    (starting from the user embedding); otherwise it is the observed entity.
    """
    ents = np.asarray(ents, dtype=np.int64)
    U = T.take_rows(m.embedding, ents[:, 0])
    prev = U
    total = None
    out = U
    for j, r in enumerate(rels):
        lp, out = _step_logprobs(m, g, U, prev, r, ents[:, j + 1])
        total = lp if total is None else T.add(total, lp)
        prev = out if chained else T.take_rows(m.embedding, ents[:, j + 1])
    return total, out


def _paths_array(u: EntityRef, paths: Sequence[PathInstance]) -> tuple[np.ndarray, tuple[int, ...]]:
    if not paths:
        raise ValueError("path list is empty")
    rels = paths[0].relation_ids
    for p in paths:
        if p.user != u:
            raise ValueError("all paths must start at the given user")
        if p.relation_ids != rels:
            raise ValueError("all paths must follow the same metapath")
    return np.array([p.entity_ids for p in paths], dtype=np.int64), rels


def path_loss(m: Model, g: Graph, u: EntityRef, paths: Sequence[PathInstance], chained: bool = True) -> Tensor:
    """Mean negative log-likelihood of the given positive paths."""
    ents, rels = _paths_array(u, paths)
    ll, _ = path_forward(m, g, ents, rels, chained)
    return T.weighted_sum(ll, np.full(len(ents), -1.0 / len(ents)))


def ranking_loss(m: Model, u: EntityRef, leaf_vec: Tensor, i: EntityRef, negs: Sequence[EntityRef]) -> Tensor:
    """Mean over negatives of sigmoid(<leaf, neg> - <leaf, i>); zero when there are no negatives."""
    if not negs:
        return T.constant(0.0, m.dtype)
    k = len(negs)
    L = T.take_rows(T.reshape(leaf_vec, (1, m.d)), np.zeros(k, dtype=np.int64))
    N = T.take_rows(m.embedding, [n.global_id for n in negs])
    P = T.take_rows(m.embedding, [i.global_id] * k)
    diff = T.sub(T.rowdot(L, N), T.rowdot(L, P))
    return T.weighted_sum(T.sigmoid(diff), np.full(k, 1.0 / k))


@dataclass
class LossParts:
    total: Tensor
    path: Tensor
    rank: Tensor
    pairs: int


@dataclass
class PathGroup:
    """Sampled positive walks of one (user, metapath) pair with their negatives."""

    rels: tuple[int, ...]
    ents: np.ndarray
    negs: list[list[int]]


def objective(
    m: Model, g: Graph, groups: Sequence[PathGroup], lam: float, chained: bool = True
) -> LossParts:
    """Sum over (user, metapath) groups of path loss + lam * ranking loss.

    Groups sharing a metapath are evaluated as one batch.
    """
    by_rels: dict[tuple[int, ...], list[PathGroup]] = {}
    for grp in groups:
        if len(grp.ents) == 0:
            raise ValueError("empty path group")
        by_rels.setdefault(tuple(grp.rels), []).append(grp)

    path_sum = rank_sum = None
    for rels, grps in by_rels.items():
        ents = np.concatenate([grp.ents for grp in grps])
        w = np.concatenate([np.full(len(grp.ents), 1.0 / len(grp.ents)) for grp in grps])
        ll, leaf = path_forward(m, g, ents, rels, chained)
        term = T.weighted_sum(ll, -w)
        path_sum = term if path_sum is None else T.add(path_sum, term)

        rows, neg_ids, nw = [], [], []
        offset = 0
        for grp in grps:
            n = len(grp.ents)
            for p, negs in enumerate(grp.negs):
                for x in negs:
                    rows.append(offset + p)
                    neg_ids.append(x)
                    nw.append(1.0 / (n * len(negs)))
            offset += n
        if rows:
            rows = np.asarray(rows, dtype=np.int64)
            Lr = T.take_rows(leaf, rows)
            N = T.take_rows(m.embedding, neg_ids)
            P = T.take_rows(m.embedding, ents[rows, -1])
            diff = T.sub(T.rowdot(Lr, N), T.rowdot(Lr, P))
            term = T.weighted_sum(T.sigmoid(diff), np.asarray(nw))
            rank_sum = term if rank_sum is None else T.add(rank_sum, term)

    if path_sum is None:
        raise ValueError("no path groups given")
    if rank_sum is None:
        rank_sum = T.constant(0.0, m.dtype)
    total = T.add(path_sum, T.scale(rank_sum, lam))
    return LossParts(total, path_sum, rank_sum, len(groups))


def total_loss(
    m: Model,
    g: Graph,
    u: EntityRef,
    paths: Sequence[PathInstance],
    negs: Sequence[Sequence[EntityRef]],
    lam: float,
    chained: bool = True,
) -> LossParts:
    """path_loss + lam * ranking_loss for one user and metapath.

    ``negs[k]`` are the negatives for the end item of ``paths[k]``.
    """
    ents, rels = _paths_array(u, paths)
    if len(negs) != len(paths):
        raise ValueError("need one negative list per path")
    grp = PathGroup(rels, ents, [[n.global_id for n in ns] for ns in negs])
    return objective(m, g, [grp], lam, chained)
