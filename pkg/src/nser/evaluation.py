"""Train/test splitting and top-N ranking metrics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .executor import RecResult
from .graph import Graph
from .rng import substream


@dataclass
class Split:
    train: dict[int, frozenset[int]]
    test: dict[int, frozenset[int]]
    dropped: int = 0

    def users(self) -> list[int]:
        return sorted(self.test)

    def pairs(self, part: str = "test") -> list[tuple[int, int]]:
        src = self.test if part == "test" else self.train
        return [(u, i) for u in sorted(src) for i in sorted(src[u])]

    def train_graph(self, g: Graph) -> Graph:
        """The graph with every held-out interaction removed in both directions."""
        return g.without_pairs(self.pairs("test"))


def make_split(g: Graph, ratio: float = 0.7, seed: int = 0, interaction: str = "purchase") -> Split:
    """Seeded per-user partition of interactions; users with fewer than 2 are dropped."""
    if not 0 < ratio < 1:
        raise ValueError("split ratio must be in (0, 1)")
    rng = substream(seed, "split")
    train, test = {}, {}
    dropped = 0
    for u, items in sorted(g.interactions(interaction).items()):
        items = sorted(items)
        n = len(items)
        if n < 2:
            dropped += 1
            continue
        n_train = min(max(int(math.floor(ratio * n + 0.5)), 1), n - 1)
        perm = rng.permutation(n)
        train[u] = frozenset(items[k] for k in perm[:n_train])
        test[u] = frozenset(items[k] for k in perm[n_train:])
    return Split(train, test, dropped)


# -- metrics -------------------------------------------------------------------


def dcg(ranked: Sequence[int], relevant: Iterable[int], N: int) -> float:
    rel = set(relevant)
    return sum(1.0 / math.log2(k + 2) for k, x in enumerate(ranked[:N]) if x in rel)


def user_metrics(ranked: Sequence[int], relevant: Iterable[int], N: int) -> tuple[float, float, float, float]:
    """(ndcg, recall, hit, precision) at N with binary relevance."""
    rel = set(relevant)
    if not rel:
        raise ValueError("no relevant items")
    top = list(ranked[:N])
    hits = sum(1 for x in top if x in rel)
    idcg = sum(1.0 / math.log2(k + 2) for k in range(min(N, len(rel))))
    ndcg = dcg(top, rel, N) / idcg
    return ndcg, hits / len(rel), float(hits > 0), hits / N


@dataclass
class MetricReport:
    ndcg: float
    recall: float
    hit_rate: float
    precision: float
    n_users: int
    N: int
    per_user: list[tuple[int, float, float, float, float]] = field(default_factory=list)

    def as_percent(self) -> dict[str, float]:
        return {
            "ndcg": 100 * self.ndcg,
            "recall": 100 * self.recall,
            "hr": 100 * self.hit_rate,
            "precision": 100 * self.precision,
        }


def metrics(recs: Mapping[int, object], split: Split, N: int = 10) -> MetricReport:
    """Macro-averaged NDCG / Recall / HR / Precision at N over the split's test users.

    ``recs`` maps user gid to a ranked item list or a RecResult; test users
    without an entry count as empty recommendations.
    """
    for u in recs:
        if u not in split.test:
            raise KeyError(f"user {u} is not in the split")
    rows = []
    for u in split.users():
        rec = recs.get(u, [])
        ranked = rec.items if isinstance(rec, RecResult) else list(rec)
        rows.append((u, *user_metrics(ranked, split.test[u], N)))
    if not rows:
        return MetricReport(0.0, 0.0, 0.0, 0.0, 0, N, [])
    arr = np.array([r[1:] for r in rows], dtype=np.float64)
    m = arr.mean(axis=0)
    return MetricReport(float(m[0]), float(m[1]), float(m[2]), float(m[3]), len(rows), N, rows)


def random_hit_rate(split: Split, n_items: int, N: int = 10) -> float:
    """Expected HR@N of recommending N items uniformly from each user's non-train items."""
    total = 0.0
    for u in split.users():
        pool = n_items - len(split.train[u])
        t = len(split.test[u])
        if N >= pool:
            total += 1.0
            continue
        # P(no hit) = C(pool - t, N) / C(pool, N)
        miss = math.comb(pool - t, N) / math.comb(pool, N)
        total += 1.0 - miss
    return total / max(len(split.users()), 1)


REPORT_FIELDS = ("variant", "ndcg", "recall", "hr", "precision", "users")


def report_rows(reports: Sequence[tuple[str, MetricReport]]) -> list[list[str]]:
    rows = []
    for name, r in reports:
        p = r.as_percent()
        rows.append(
            [name, f"{p['ndcg']:.3f}", f"{p['recall']:.3f}", f"{p['hr']:.3f}", f"{p['precision']:.3f}", str(r.n_users)]
        )
    return rows


def format_table(reports: Sequence[tuple[str, MetricReport]]) -> str:
    rows = [list(REPORT_FIELDS)] + report_rows(reports)
    widths = [max(len(r[c]) for r in rows) for c in range(len(REPORT_FIELDS))]
    lines = []
    for k, r in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) if c == 0 else cell.rjust(w) for c, (cell, w) in enumerate(zip(r, widths))))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def format_csv(reports: Sequence[tuple[str, MetricReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    w.writerows(report_rows(reports))
    return buf.getvalue()
