"""Training loop for embeddings and relation modules."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import tensor as T
from .graph import Graph, Metapath, enumerate_metapaths, enumerate_paths
from .model import Model, PathGroup, objective
from .params import sgd_step
from .rng import substream
from .teacher import TeacherModel, select_negatives

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    dim: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 50
    batch_size: int = 16
    lam: float = 10.0
    path_limit: int = 4
    negatives: int = 4
    negative_pool: str = "positives"  # or "all_items"
    chained: bool = True
    max_len: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.negative_pool not in ("positives", "all_items"):
            raise ValueError(f"negative_pool must be 'positives' or 'all_items', not {self.negative_pool!r}")


@dataclass
class EpochRecord:
    epoch: int
    mean_path_loss: float
    mean_rank_loss: float
    wallclock_ms: float

    def line(self) -> str:
        return f"{self.epoch}, {self.mean_path_loss:.6f}, {self.mean_rank_loss:.6f}, {self.wallclock_ms:.0f}"


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    skipped_users: int = 0
    metapaths: list[Metapath] = field(default_factory=list)

    def lines(self) -> list[str]:
        return [r.line() for r in self.epochs]


class PositivePathCache:
    """All positive walks per (user, metapath), enumerated once."""

    def __init__(self, g: Graph, positives: Mapping[int, Iterable[int]], metapaths: list[Metapath]):
        self.metapaths = metapaths
        self.paths: dict[int, list[np.ndarray]] = {}
        for u in sorted(positives):
            pos = list(positives[u])
            self.paths[u] = [enumerate_paths(g, u, mp.relations, pos) for mp in metapaths]

    def users(self) -> list[int]:
        return [u for u, arrs in self.paths.items() if any(len(a) for a in arrs)]


def sample_groups(
    cache: PositivePathCache,
    users: Iterable[int],
    teacher: TeacherModel | None,
    g: Graph,
    positives: Mapping[int, Iterable[int]],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> list[PathGroup]:
    items = g.items()
    groups = []
    for u in users:
        pos = sorted(positives.get(u, ()))
        if cfg.negative_pool == "positives":
            pool = np.asarray(pos, dtype=np.int64)
        else:
            pool = items
        scores = teacher.user_scores(int(g.entity_local[u])) if teacher is not None else None
        pool_scores = scores[g.entity_local[pool]] if scores is not None else None
        for mp, arr in zip(cache.metapaths, cache.paths[u]):
            if len(arr) == 0:
                continue
            if len(arr) > cfg.path_limit:
                arr = arr[np.sort(rng.choice(len(arr), cfg.path_limit, replace=False))]
            negs = []
            for end in arr[:, -1]:
                if scores is None or cfg.lam == 0:
                    negs.append([])
                    continue
                negs.append(
                    select_negatives(scores[g.entity_local[end]], pool, pool_scores, int(end), cfg.negatives, rng)
                )
            groups.append(PathGroup(mp.relations, arr, negs))
    return groups


def train(
    g: Graph,
    teacher: TeacherModel | None,
    cfg: TrainConfig | None = None,
    positives: Mapping[int, Iterable[int]] | None = None,
    interaction: str = "purchase",
    metapaths: list[Metapath] | None = None,
    model: Model | None = None,
) -> tuple[Model, TrainLog]:
    """Minimize the summed path + ranking objective over all users and metapaths.

    ``g`` must hold only training interactions. Each step covers
    ``batch_size`` users; its loss is divided by the number of users.
    """
    cfg = cfg or TrainConfig()
    if positives is None:
        positives = g.interactions(interaction)
    if metapaths is None:
        metapaths = enumerate_metapaths(g, cfg.max_len)
    m = model or Model.for_graph(g, cfg.dim, cfg.seed)
    cache = PositivePathCache(g, positives, metapaths)
    users = cache.users()
    trainlog = TrainLog(skipped_users=len(g.users()) - len(users), metapaths=list(metapaths))
    if trainlog.skipped_users:
        log.info("skipping %d users without positive paths", trainlog.skipped_users)
    rng = substream(cfg.seed, "sampling")

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(users) if users else []
        path_total = rank_total = 0.0
        pairs = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [int(u) for u in order[start : start + cfg.batch_size]]
            groups = sample_groups(cache, batch, teacher, g, positives, cfg, rng)
            if not groups:
                continue
            parts = objective(m, g, groups, cfg.lam, cfg.chained)
            loss = T.scale(parts.total, 1.0 / len(batch))
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(epoch)
            T.backward(loss)
            sgd_step(m.store, cfg.lr, cfg.momentum)
            path_total += parts.path.item()
            rank_total += parts.rank.item()
            pairs += parts.pairs
        rec = EpochRecord(
            epoch,
            path_total / max(pairs, 1),
            rank_total / max(pairs, 1),
            (time.perf_counter() - t0) * 1000.0,
        )
        trainlog.epochs.append(rec)
        log.info("epoch %d path %.4f rank %.4f (%.0f ms)", epoch, rec.mean_path_loss, rec.mean_rank_loss, rec.wallclock_ms)
    return m, trainlog
