"""End-to-end pipeline and the lambda / layout ablation drivers."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .config import LayoutSpec, RunConfig
from .evaluation import MetricReport, Split, make_split, metrics
from .executor import RecResult, execute_layout, recommend
from .graph import Graph, Metapath, drop_prefix_nested, enumerate_metapaths
from .layout import generate_layout
from .model import Model
from .rng import substream
from .synth import gen_synth
from .teacher import TeacherModel, teacher_rank, train_teacher
from .train import TrainLog, train

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    """A split, its training graph and the teacher fitted on it."""

    graph: Graph
    split: Split
    train_graph: Graph
    teacher: TeacherModel


def prepare(g: Graph, cfg: RunConfig) -> Prepared:
    split = make_split(g, cfg.eval.ratio, cfg.seed)
    if split.dropped:
        log.info("dropped %d users with fewer than 2 interactions", split.dropped)
    tg = split.train_graph(g)
    teacher, _ = train_teacher(tg, cfg.teacher, positives=split.train)
    return Prepared(g, split, tg, teacher)


def layout_metapaths(g: Graph, max_len: int) -> list[Metapath]:
    """Candidate metapaths for layouts: realized in ``g``, none a prefix of another."""
    return drop_prefix_nested(enumerate_metapaths(g, max_len))


def recommend_users(
    m: Model,
    g: Graph,
    positives: dict[int, frozenset[int]],
    users: list[int],
    metapaths: list[Metapath],
    spec: LayoutSpec,
    N: int,
    seed: int,
) -> dict[int, RecResult]:
    """Layout, execution and top-N ranking for each user, excluding known positives."""
    out = {}
    for u in users:
        ref = g.ref(u)
        pos = positives.get(u, frozenset())
        layout, _, _ = generate_layout(
            m, g, ref, metapaths, pos, K=spec.budget, caps=spec.caps, strategy=spec.strategy,
            sample_limit=spec.sample_limit, seed=seed,
        )
        paths = execute_layout(m, g, ref, layout, exclude=pos)
        out[u] = recommend(paths, N, exclude=pos, aggregate=spec.aggregate)
    return out


def teacher_recs(t: TeacherModel, prep: Prepared, N: int) -> dict[int, list[int]]:
    return {u: [i for i, _ in teacher_rank(t, prep.train_graph, u, N, prep.split.train[u])] for u in prep.split.users()}


def random_recs(prep: Prepared, N: int, seed: int) -> dict[int, list[int]]:
    """N items drawn uniformly per user from the items outside their training positives."""
    rng = substream(seed, "random-baseline")
    items = prep.graph.items()
    out = {}
    for u in prep.split.users():
        pool = items[~np.isin(items, list(prep.split.train[u]))]
        out[u] = [int(x) for x in rng.choice(pool, min(N, len(pool)), replace=False)]
    return out


@dataclass
class PipelineResult:
    prep: Prepared
    model: Model
    train_log: TrainLog
    recs: dict[int, RecResult]
    report: MetricReport


def fit(prep: Prepared, cfg: RunConfig) -> tuple[Model, TrainLog]:
    return train(prep.train_graph, prep.teacher, cfg.train, positives=prep.split.train)


def evaluate_model(m: Model, prep: Prepared, cfg: RunConfig, spec: LayoutSpec | None = None) -> tuple[dict, MetricReport]:
    spec = spec or cfg.layout
    mps = layout_metapaths(prep.train_graph, cfg.train.max_len)
    recs = recommend_users(
        m, prep.train_graph, prep.split.train, prep.split.users(), mps, spec, cfg.eval.topn, cfg.seed
    )
    return recs, metrics(recs, prep.split, cfg.eval.topn)


def run_pipeline(g: Graph, cfg: RunConfig) -> PipelineResult:
    """Split, teacher, model training, per-user layouts and evaluation."""
    prep = prepare(g, cfg)
    m, tlog = fit(prep, cfg)
    recs, report = evaluate_model(m, prep, cfg)
    return PipelineResult(prep, m, tlog, recs, report)


def average_reports(reports: list[MetricReport]) -> MetricReport:
    """Mean of each metric over runs; user counts are summed."""
    if len(reports) == 1:
        return reports[0]
    arr = np.array([[r.ndcg, r.recall, r.hit_rate, r.precision] for r in reports], dtype=np.float64)
    m = arr.mean(axis=0)
    return MetricReport(float(m[0]), float(m[1]), float(m[2]), float(m[3]), sum(r.n_users for r in reports), reports[0].N)


@dataclass
class ExperimentResult:
    rows: list[tuple[str, MetricReport]]
    per_seed: dict[str, list[MetricReport]] = field(default_factory=dict)
    train_logs: dict[str, list[TrainLog]] = field(default_factory=dict)


def _fmt_lambda(lam: float) -> str:
    return f"lambda={lam:g}"


def run_experiment(cfg: RunConfig, graph: Graph | None = None) -> ExperimentResult:
    """One report per variant, averaged over ``experiment.seeds``.

    The layout axis trains one model per seed and varies the allocation
    strategy; the lambda axis trains one model per (seed, lambda). Without
    ``graph`` each seed generates its own synthetic graph.
    """
    spec = cfg.experiment
    per_seed: dict[str, list[MetricReport]] = {}
    logs: dict[str, list[TrainLog]] = {}
    names: list[str] = []

    def add(name, report, tlog=None):
        if name not in per_seed:
            names.append(name)
            per_seed[name] = []
        per_seed[name].append(report)
        if tlog is not None:
            logs.setdefault(name, []).append(tlog)

    for seed in spec.seeds:
        c = cfg.with_seed(seed)
        g = graph if graph is not None else gen_synth(c.synth, seed)[0]
        prep = prepare(g, c)
        if spec.axis == "layout":
            m, tlog = fit(prep, c)
            for strategy in spec.strategies:
                _, rep = evaluate_model(m, prep, c, dataclasses.replace(c.layout, strategy=strategy))
                add(strategy, rep, tlog)
                log.info("seed %d %s HR %.4f", seed, strategy, rep.hit_rate)
        else:
            for lam in spec.lambdas:
                cl = dataclasses.replace(c, train=dataclasses.replace(c.train, lam=lam))
                m, tlog = fit(prep, cl)
                _, rep = evaluate_model(m, prep, cl)
                add(_fmt_lambda(lam), rep, tlog)
                log.info("seed %d lambda %g HR %.4f", seed, lam, rep.hit_rate)
        if "teacher" in spec.baselines:
            add("teacher", metrics(teacher_recs(prep.teacher, prep, c.eval.topn), prep.split, c.eval.topn))
        if "random" in spec.baselines:
            add("random", metrics(random_recs(prep, c.eval.topn, seed), prep.split, c.eval.topn))

    rows = [(n, average_reports(per_seed[n])) for n in names]
    return ExperimentResult(rows, per_seed, logs)
