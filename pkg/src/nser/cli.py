"""Command-line entry point: ``nser <command> [flags]``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, dump_config, load_config, set_value
from .evaluation import format_csv, format_table, make_split, metrics
from .executor import execute_layout, explain, recommend
from .experiment import (
    Prepared,
    evaluate_model,
    layout_metapaths,
    run_experiment,
    teacher_recs,
)
from .graph import Graph, GraphFormatError, emit_graph, ingest_triples
from .layout import generate_layout
from .model import Model
from .params import CheckpointError
from .synth import gen_synth
from .teacher import TeacherModel, train_teacher
from .train import train

log = logging.getLogger("nser")


class CommandError(Exception):
    """A failure reported to the operator as one line, exit status 1."""


# -- helpers -------------------------------------------------------------------


def _graph_dir(path: str | None) -> Path:
    if not path:
        raise CommandError("--graph is required")
    p = Path(path)
    if p.is_file():
        p = p.parent
    if not (p / "entities.tsv").exists() or not (p / "triples.tsv").exists():
        raise CommandError(f"{p} must contain entities.tsv and triples.tsv")
    return p


def _load_graph(path: str | None) -> Graph:
    d = _graph_dir(path)
    g, _ = ingest_triples(d / "entities.tsv", d / "triples.tsv")
    return g


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(path: str | None) -> tuple[Model, dict]:
    if not path or not Path(path).exists():
        raise CommandError("model checkpoint required (--model)")
    return Model.load(path)


def _load_teacher(path: str | None, required: bool = True) -> TeacherModel | None:
    if not path:
        if required:
            raise CommandError("teacher checkpoint required (--teacher)")
        return None
    if not Path(path).exists():
        raise CommandError(f"teacher checkpoint not found: {path}")
    return TeacherModel.load(path)


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        try:
            set_value(cfg, key.strip(), value)
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc.args[0] if exc.args else exc)) from None
    if args.lam is not None:
        set_value(cfg, "train.lam", str(args.lam))
    if args.budget is not None:
        set_value(cfg, "layout.budget", str(args.budget))
    if args.layout_strategy is not None:
        set_value(cfg, "layout.strategy", args.layout_strategy)
    if args.topn is not None:
        set_value(cfg, "eval.topn", str(args.topn))
    seed = args.seed if args.seed is not None else cfg.seed
    return cfg.with_seed(seed)


def _split_settings(cfg: RunConfig, meta: dict, explicit_seed: bool) -> RunConfig:
    """Reuse the split a checkpoint was trained on unless the operator overrides it."""
    if explicit_seed or "seed" not in meta:
        return cfg
    cfg = cfg.with_seed(int(meta["seed"]))
    ratio = float(meta.get("split_ratio", cfg.eval.ratio))
    max_len = int(meta.get("max_len", cfg.train.max_len))
    return dataclasses.replace(
        cfg,
        eval=dataclasses.replace(cfg.eval, ratio=ratio),
        train=dataclasses.replace(cfg.train, max_len=max_len),
    )


def _train_view(g: Graph, cfg: RunConfig):
    split = make_split(g, cfg.eval.ratio, cfg.seed)
    return split, split.train_graph(g)


def _user(g: Graph, name: str | None):
    if not name:
        raise CommandError("--user is required")
    try:
        ref = g.find(name)
    except KeyError:
        raise CommandError(f"unknown user {name!r}") from None
    if ref.type_id != g.user_type:
        raise CommandError(f"{name!r} is not a user")
    return ref


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def _model_context(args):
    cfg = _config(args)
    m, meta = _load_model(args.model)
    g = _load_graph(args.graph)
    if m.num_entities != g.num_entities or m.num_relations != len(g.relations):
        raise CommandError("model checkpoint does not match the graph")
    cfg = _split_settings(cfg, meta, args.seed is not None)
    split, tg = _train_view(g, cfg)
    return cfg, m, g, split, tg


def _user_plan(cfg, m, tg, u):
    positives = frozenset(tg.interactions("purchase").get(u.global_id, []))
    mps = layout_metapaths(tg, cfg.train.max_len)
    layout, values, y = generate_layout(
        m, tg, u, mps, positives, K=cfg.layout.budget, caps=cfg.layout.caps,
        strategy=cfg.layout.strategy, sample_limit=cfg.layout.sample_limit, seed=cfg.seed,
    )
    return positives, mps, layout, values, y


# -- commands ------------------------------------------------------------------


def cmd_ingest(args) -> None:
    d = _graph_dir(args.graph)
    g, stats = ingest_triples(d / "entities.tsv", d / "triples.tsv")
    out = _out_dir(args) / "graph"
    out.mkdir(parents=True, exist_ok=True)
    emit_graph(g, out / "entities.tsv", out / "triples.tsv")
    lines = [f"entities {g.num_entities}", f"triples {g.num_triples}"]
    lines += [f"type {k} {v}" for k, v in stats.entities_per_type.items()]
    lines += [f"relation {k} {v}" for k, v in stats.triples_per_relation.items()]
    text = "\n".join(lines) + "\n"
    _write(out.parent / "graph_stats.txt", text)
    sys.stdout.write(text)


def cmd_gen_synth(args) -> None:
    cfg = _config(args)
    g, truth = gen_synth(cfg.synth, cfg.seed)
    out = _out_dir(args)
    (out / "graph").mkdir(exist_ok=True)
    emit_graph(g, out / "graph" / "entities.tsv", out / "graph" / "triples.tsv")
    rows = ["user\tpreferred_brand\tpreferred_category\tpreferred_share"]
    share = truth.preferred_share()
    users = g.users()
    for k, u in enumerate(users):
        rows.append(
            f"{g.entity_name[u]}\tbrand_{truth.preferred_brand[k]}\tcategory_{truth.preferred_category[k]}\t{share[k]:.4f}"
        )
    _write(out / "truth.tsv", "\n".join(rows) + "\n")
    print(f"generated {g.num_entities} entities, {g.num_triples} triples; mean preferred share {share.mean():.3f}")


def cmd_train_teacher(args) -> None:
    cfg = _config(args)
    g = _load_graph(args.graph)
    split, tg = _train_view(g, cfg)
    t, hist = train_teacher(tg, cfg.teacher, positives=split.train)
    out = _out_dir(args)
    t.save(out / "teacher.ckpt")
    _write(out / "teacher_log.csv", "".join(f"{k}, {v:.6f}\n" for k, v in enumerate(hist)))
    rows = [f"{g.entity_name[u]}\t{g.entity_name[i]}\t{part}" for part in ("train", "test") for u, i in split.pairs(part)]
    _write(out / "split.tsv", "\n".join(rows) + "\n")
    print(f"teacher trained: {len(split.users())} users, final loss {hist[-1] if hist else float('nan'):.4f}")


def cmd_train(args) -> None:
    cfg = _config(args)
    g = _load_graph(args.graph)
    teacher = _load_teacher(args.teacher, required=cfg.train.lam > 0)
    split, tg = _train_view(g, cfg)
    m, tlog = train(tg, teacher, cfg.train, positives=split.train)
    out = _out_dir(args)
    m.save(
        out / "model.ckpt",
        {"seed": cfg.seed, "split_ratio": cfg.eval.ratio, "max_len": cfg.train.max_len, "lambda": cfg.train.lam},
    )
    header = "epoch, mean_path_loss, mean_rank_loss, wallclock_ms\n"
    _write(out / "train_log.csv", header + "".join(line + "\n" for line in tlog.lines()))
    last = tlog.epochs[-1] if tlog.epochs else None
    msg = f"trained {len(tlog.epochs)} epochs over {len(tlog.metapaths)} metapaths"
    if last:
        msg += f"; final path loss {last.mean_path_loss:.4f}"
    if tlog.skipped_users:
        msg += f"; skipped {tlog.skipped_users} users without paths"
    print(msg)


def cmd_layout(args) -> None:
    cfg, m, g, split, tg = _model_context(args)
    u = _user(g, args.user)
    positives, mps, layout, values, y = _user_plan(cfg, m, tg, u)
    if layout.is_empty():
        print(f"{g.entity_name[u.global_id]} has no usable history: empty layout")
        return
    sys.stdout.write(layout.serialize(tg))
    print("metapath, value, count")
    for p, v, yj in zip(mps, values, y):
        names = "/".join(tg.relations[r].name for r in p.relations)
        print(f"{names}, {v:.6f}, {yj}")


def _run_user(cfg, m, g, tg, u, N):
    positives, _, layout, _, _ = _user_plan(cfg, m, tg, u)
    paths = execute_layout(m, tg, u, layout, exclude=positives)
    return recommend(paths, N, exclude=positives, aggregate=cfg.layout.aggregate)


def cmd_recommend(args) -> None:
    cfg, m, g, split, tg = _model_context(args)
    u = _user(g, args.user)
    res = _run_user(cfg, m, g, tg, u, cfg.eval.topn)
    lines = []
    uname = g.entity_name[u.global_id]
    for rank, e in enumerate(res.entries, start=1):
        best = max(e.paths, key=lambda p: p.score)
        lines.append(
            f"{uname}, {rank}, {g.entity_name[e.item.global_id]}, {e.score:.6f}, {best.leaf_id}, {explain(best.path, tg)}"
        )
    text = "\n".join(lines) + ("\n" if lines else "")
    if not lines:
        print(f"no recommendations for {uname}")
    sys.stdout.write(text)
    if args.out:
        _write(_out_dir(args) / f"recommendations_{uname}.csv", text)


def cmd_explain(args) -> None:
    cfg, m, g, split, tg = _model_context(args)
    u = _user(g, args.user)
    if not args.item:
        raise CommandError("--item is required")
    try:
        item = g.find(args.item)
    except KeyError:
        raise CommandError(f"unknown item {args.item!r}") from None
    res = _run_user(cfg, m, g, tg, u, tg.num_entities)
    entry = next((e for e in res.entries if e.item.global_id == item.global_id), None)
    if entry is None:
        print(f"no supporting path from {g.entity_name[u.global_id]} to {g.entity_name[item.global_id]}")
        return
    for rp in sorted(entry.paths, key=lambda p: (-p.score, p.path.entity_ids)):
        print(f"{rp.score:.6f}  {explain(rp.path, tg)}")


def cmd_evaluate(args) -> None:
    cfg, m, g, split, tg = _model_context(args)
    teacher = _load_teacher(args.teacher, required=False)
    prep = Prepared(g, split, tg, teacher)
    _, report = evaluate_model(m, prep, cfg)
    rows = [("nser", report)]
    if teacher is not None:
        rows.append(("teacher", metrics(teacher_recs(teacher, prep, cfg.eval.topn), split, cfg.eval.topn)))
    out = _out_dir(args)
    _write(out / "metrics.txt", format_table(rows))
    _write(out / "metrics.csv", format_csv(rows))
    sys.stdout.write(format_table(rows))


def cmd_experiment(args) -> None:
    cfg = _config(args)
    graph = _load_graph(args.graph) if args.graph else None
    result = run_experiment(cfg, graph)
    out = _out_dir(args)
    _write(out / "config.txt", dump_config(cfg))
    _write(out / "report.txt", format_table(result.rows))
    _write(out / "report.csv", format_csv(result.rows))
    sys.stdout.write(format_table(result.rows))


COMMANDS = {
    "ingest": (cmd_ingest, "validate a graph directory and write a canonical copy"),
    "gen-synth": (cmd_gen_synth, "generate a synthetic graph with planted preferences"),
    "train-teacher": (cmd_train_teacher, "fit the matrix-factorization teacher"),
    "train": (cmd_train, "train embeddings and relation modules"),
    "layout": (cmd_layout, "print a user's meta-layout and metapath allocation"),
    "recommend": (cmd_recommend, "top-N items for a user with their reasoning paths"),
    "explain": (cmd_explain, "every reasoning path from a user to an item"),
    "evaluate": (cmd_evaluate, "ranking metrics on the held-out split"),
    "experiment": (cmd_experiment, "run the lambda or layout ablation"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="section.key = value file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--graph", help="directory holding entities.tsv and triples.tsv")
    common.add_argument("--model", help="model checkpoint")
    common.add_argument("--teacher", help="teacher checkpoint")
    common.add_argument("--user", help="user name, optionally type-qualified")
    common.add_argument("--item", help="item name, optionally type-qualified")
    common.add_argument("--topn", type=int)
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--budget", type=int)
    common.add_argument("--layout-strategy", choices=("uniform", "prior", "heuristic"))

    parser = argparse.ArgumentParser(prog="nser", description="Neural-symbolic path reasoning over typed graphs.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("NSER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command][0](args)
    except (CommandError, ConfigError, GraphFormatError, CheckpointError, FileNotFoundError) as exc:
        print(f"nser {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"nser {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
