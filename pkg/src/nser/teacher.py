"""Logistic matrix-factorization teacher used to pick ranking-loss negatives."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .graph import EntityRef, Graph
from .params import load_checkpoint, save_checkpoint
from .rng import substream

log = logging.getLogger(__name__)


class TeacherDiverged(FloatingPointError):
    pass


@dataclass
class TeacherConfig:
    dim: int = 16
    epochs: int = 20
    lr: float = 0.05
    reg: float = 1e-4
    init_scale: float = 0.1
    batch_size: int = 64
    negatives: int = 1
    seed: int = 0


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class TeacherModel:
    def __init__(self, user_factors: np.ndarray, item_factors: np.ndarray, user_type: int = 0, item_type: int = 1):
        self.user_factors = np.asarray(user_factors, dtype=np.float32)
        self.item_factors = np.asarray(item_factors, dtype=np.float32)
        if self.user_factors.shape[1] != self.item_factors.shape[1]:
            raise ValueError("user and item factors must share a dimension")
        self.user_type = user_type
        self.item_type = item_type

    @property
    def dim(self) -> int:
        return self.user_factors.shape[1]

    def _user(self, u: EntityRef) -> int:
        if u.type_id != self.user_type or not 0 <= u.local_id < len(self.user_factors):
            raise KeyError(f"unknown user {u}")
        return u.local_id

    def _item(self, i: EntityRef) -> int:
        if i.type_id != self.item_type or not 0 <= i.local_id < len(self.item_factors):
            raise KeyError(f"unknown item {i}")
        return i.local_id

    def user_scores(self, u_local: int) -> np.ndarray:
        """h(u, i) for every item, indexed by item local id."""
        return _sigmoid(self.item_factors @ self.user_factors[u_local])

    def save(self, path) -> None:
        save_checkpoint(
            path,
            {"user_factors": self.user_factors, "item_factors": self.item_factors},
            "teacher",
            {"dim": self.dim, "user_type": self.user_type, "item_type": self.item_type},
        )

    @classmethod
    def load(cls, path) -> "TeacherModel":
        _, meta, arrays = load_checkpoint(path, expect_kind="teacher")
        return cls(arrays["user_factors"], arrays["item_factors"], int(meta["user_type"]), int(meta["item_type"]))


def score(t: TeacherModel, u: EntityRef, i: EntityRef) -> float:
    """h(u, i) = sigmoid(<p_u, q_i>)."""
    return float(_sigmoid(np.dot(t.user_factors[t._user(u)], t.item_factors[t._item(i)])))


def select_negatives(
    pos_score: float,
    cand_ids: Sequence[int],
    cand_scores: np.ndarray,
    exclude: int,
    cap: int,
    rng: np.random.Generator,
) -> list[int]:
    """Up to ``cap`` candidates scored strictly below ``pos_score``, sampled uniformly.

    Returned ids are sorted ascending.
    """
    if cap <= 0:
        return []
    cand_ids = np.asarray(cand_ids, dtype=np.int64)
    ok = (np.asarray(cand_scores) < pos_score) & (cand_ids != exclude)
    pool = cand_ids[ok]
    if len(pool) > cap:
        pool = rng.choice(pool, size=cap, replace=False)
    return sorted(int(x) for x in pool)


def negative_set(
    t: TeacherModel,
    u: EntityRef,
    i: EntityRef,
    candidates: Iterable[EntityRef],
    cap: int,
    seed: int | np.random.Generator = 0,
) -> list[EntityRef]:
    """Items from ``candidates`` the teacher scores strictly below ``i`` for user ``u``."""
    cands = list(candidates)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if not cands:
        return []
    row = t.user_scores(t._user(u))
    pos = row[t._item(i)]
    local = np.array([t._item(c) for c in cands])
    by_gid = {c.global_id: c for c in cands}
    picked = select_negatives(pos, [c.global_id for c in cands], row[local], i.global_id, cap, rng)
    return [by_gid[x] for x in picked]


def train_teacher(
    g: Graph,
    cfg: TeacherConfig | None = None,
    positives: Mapping[int, Iterable[int]] | None = None,
    interaction: str = "purchase",
) -> tuple[TeacherModel, list[float]]:
    """Fit user/item factors with a logistic loss on observed pairs vs sampled non-interactions.

    ``positives`` maps user gid to item gids; defaults to the graph's
    interaction triples. Returns the model and the mean loss per epoch.
    """
    cfg = cfg or TeacherConfig()
    if positives is None:
        positives = g.interactions(interaction)
    users, items = g.users(), g.items()
    rng = substream(cfg.seed, "teacher")
    P = rng.normal(0.0, cfg.init_scale, (len(users), cfg.dim))
    Q = rng.normal(0.0, cfg.init_scale, (len(items), cfg.dim))

    pairs = np.array(
        [(g.entity_local[u], g.entity_local[i]) for u in sorted(positives) for i in sorted(positives[u])],
        dtype=np.int64,
    ).reshape(-1, 2)
    observed = [set() for _ in range(len(users))]
    for ul, il in pairs:
        observed[ul].add(il)

    history: list[float] = []
    n_items = len(items)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = pairs[order[start : start + cfg.batch_size]]
            us = [batch[:, 0]]
            its = [batch[:, 1]]
            ys = [np.ones(len(batch))]
            for _ in range(cfg.negatives):
                neg = rng.integers(0, n_items, len(batch))
                for k, (ul, il) in enumerate(zip(batch[:, 0], neg)):
                    # resample observed items; bounded tries keep dense users from looping forever
                    tries = 0
                    while il in observed[ul] and tries < 20:
                        il = rng.integers(0, n_items)
                        tries += 1
                    neg[k] = il
                us.append(batch[:, 0])
                its.append(neg)
                ys.append(np.zeros(len(batch)))
            uu, ii, y = np.concatenate(us), np.concatenate(its), np.concatenate(ys)
            s = _sigmoid(np.einsum("nd,nd->n", P[uu], Q[ii]))
            eps = 1e-7
            total += float(-np.sum(y * np.log(s + eps) + (1 - y) * np.log(1 - s + eps)))
            count += len(y)
            err = (s - y)[:, None]
            gP = err * Q[ii] + cfg.reg * P[uu]
            gQ = err * P[uu] + cfg.reg * Q[ii]
            np.add.at(P, uu, -cfg.lr * gP)
            np.add.at(Q, ii, -cfg.lr * gQ)
        mean = total / max(count, 1)
        if not (np.isfinite(mean) and np.all(np.isfinite(P)) and np.all(np.isfinite(Q))):
            raise TeacherDiverged(f"teacher training diverged at epoch {epoch}")
        history.append(mean)
        log.debug("teacher epoch %d loss %.5f", epoch, mean)
    return TeacherModel(P, Q, g.user_type, g.item_type), history


def teacher_rank(t: TeacherModel, g: Graph, u: int, n: int, exclude: Iterable[int] = ()) -> list[tuple[int, float]]:
    """Top-n items (gid, score) for user gid ``u`` by teacher score, ties by ascending id."""
    scores = t.user_scores(int(g.entity_local[u]))
    items = g.items()
    skip = set(int(x) for x in exclude)
    order = np.lexsort((items, -scores))
    out = []
    for k in order:
        gid = int(items[k])
        if gid in skip:
            continue
        out.append((gid, float(scores[k])))
        if len(out) == n:
            break
    return out
