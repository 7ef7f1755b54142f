"""Command-line interface: run studies, generate data, render reports,
re-run meta voting, and query the grid oracle."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import yaml

from .config import (
    DEFAULT_OUT_DIR_ENV,
    assemble_study,
    load_study_config,
    with_cli_overrides,
)
from .datagen import FunnelSpec, GeneratorSpec, generate, oracle_best
from .errors import ConfigError, OracleRefusal
from .meta import WEIGHTED_SUM, meta_evaluate, run_cumulative_pipeline, vote_select
from .objectives import InteractionLog
from .report import load_report, render_csv, render_text, write_report_files
from .retrieval import dump_corpus, dump_queries, load_corpus, load_queries
from .space import trial_from_dict


def _default_out_dir(flag_value: str | None, config_value: str | None = None) -> Path:
    if flag_value:
        return Path(flag_value)
    if config_value:
        return Path(config_value)
    return Path(os.environ.get(DEFAULT_OUT_DIR_ENV, "searchtune_out"))


def _parse_budgets(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"--stage-budgets must be comma-separated integers, got {text!r}")


def cmd_run(args: argparse.Namespace) -> int:
    config = load_study_config(args.config, args.override)
    config = with_cli_overrides(
        config,
        seed=args.seed,
        out_dir=args.out_dir,
        parallel=args.parallel,
        stage_budgets=_parse_budgets(args.stage_budgets) if args.stage_budgets else None,
    )
    setup = assemble_study(config)
    report = run_cumulative_pipeline(setup)
    out_dir = _default_out_dir(None, config.out_dir)
    paths = write_report_files(report, out_dir)
    print(f"wrote {paths['report']}")
    print(
        f"winner: trial {report.final_winner.trial_id} "
        f"meta weighted={report.final_winner.weighted:.4f}"
    )
    return 0


def _generator_spec_from_yaml(path: Path) -> GeneratorSpec:
    if not path.exists():
        raise ConfigError(f"spec: file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError("spec: top level must be a mapping")
    known = {
        "n_items", "n_queries", "vocab_size", "embedding_dim", "true_weights",
        "conversion_weights", "funnel", "impressions_per_pair", "seed",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"spec: unknown key(s) {sorted(unknown)}")
    kwargs = {k: raw[k] for k in known & set(raw) if k not in ("funnel",)}
    if "funnel" in raw:
        kwargs["funnel"] = FunnelSpec(**raw["funnel"])
    spec = GeneratorSpec(**kwargs)
    errs = spec.violations()
    if errs:
        raise ConfigError("\n".join(f"spec: {e}" for e in errs))
    return spec


def cmd_datagen(args: argparse.Namespace) -> int:
    spec = _generator_spec_from_yaml(Path(args.spec))
    if args.seed is not None:
        from dataclasses import replace

        spec = replace(spec, seed=args.seed)
    data = generate(spec)
    out_dir = _default_out_dir(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_corpus(data.corpus, out_dir / "corpus.jsonl")
    dump_queries(data.queries, out_dir / "queries.jsonl")
    data.train_log.to_csv(out_dir / "train_log.csv")
    data.meta_log.to_csv(out_dir / "meta_log.csv")
    print(
        f"wrote {len(data.corpus)} items, {len(data.queries)} queries, "
        f"{len(data.train_log)} train rows, {len(data.meta_log)} meta rows to {out_dir}"
    )
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    rdict = load_report(args.report)
    if args.format == "csv":
        sys.stdout.write(render_csv(rdict))
    else:
        sys.stdout.write(render_text(rdict))
    return 0


def cmd_vote(args: argparse.Namespace) -> int:
    config = load_study_config(args.config, args.override)
    setup = assemble_study(config)
    rdict = load_report(args.report)
    if not rdict.get("stages"):
        raise ValueError("report has no stages")
    final_stage = rdict["stages"][-1]
    trials_by_id = {t["id"]: trial_from_dict(t) for t in rdict["trials"]}
    pool_ids = sorted({tid for ids in final_stage["top_ids"].values() for tid in ids})
    seen_configs = set()
    pool = []
    for tid in pool_ids:
        trial = trials_by_id[tid]
        key = tuple(sorted(trial.config.assignments.items()))
        if key not in seen_configs:
            seen_configs.add(key)
            pool.append(trial)
    meta_scores = meta_evaluate(
        pool,
        setup.meta_evaluator,
        setup.weights,
        train_query_ids=setup.train_evaluator.query_ids(),
        allow_overlap=setup.allow_split_overlap,
    )
    winner, tally = vote_select(meta_scores, setup.top_n)
    result = {
        "winner": {
            "trial_id": tally.winner().trial_id,
            "config": dict(winner.assignments),
            "votes": tally.winner().votes,
            "meta_weighted": tally.winner().criteria[WEIGHTED_SUM],
        },
        "tally": [
            {"trial_id": r.trial_id, "votes": r.votes, "weighted": r.weighted}
            for r in tally.rows
        ],
    }
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "vote.json").write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
        print(f"wrote {out_dir / 'vote.json'}")
    print(
        f"vote winner: trial {result['winner']['trial_id']} "
        f"votes={result['winner']['votes']} meta weighted={result['winner']['meta_weighted']:.4f}"
    )
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    config = load_study_config(args.config, args.override)
    corpus = load_corpus(config.corpus_path)
    queries = load_queries(config.queries_path)
    train_log = InteractionLog.from_csv(config.train_log_path)
    train_ids = train_log.query_ids()
    train_queries = [q for q in queries if q.query_id in train_ids]
    result = oracle_best(
        corpus,
        train_queries,
        train_log,
        config.specs,
        config.weights,
        config.transform_spec,
        config.space,
        resolution=args.resolution,
        cap=args.cap,
        parallel=config.parallel,
    )
    payload = {
        "best_config": dict(result.best_config.assignments),
        "best_weighted": result.best_weighted,
        "per_objective_best": {
            s.name: v for s, v in zip(config.specs, result.per_objective_best)
        },
        "n_configs": result.n_configs,
    }
    text = json.dumps(payload, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="searchtune",
        description="Multi-objective hyperparameter optimization for retrieval ranking.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a (possibly multi-stage) optimization study")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out-dir", default=None)
    run.add_argument("--parallel", type=int, default=None)
    run.add_argument("--stage-budgets", default=None, help="comma-separated per-stage budgets")
    run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    run.set_defaults(func=cmd_run)

    datagen = sub.add_parser("datagen", help="generate a synthetic corpus, queries, and logs")
    datagen.add_argument("--spec", required=True)
    datagen.add_argument("--out-dir", default=None)
    datagen.add_argument("--seed", type=int, default=None)
    datagen.set_defaults(func=cmd_datagen)

    rep = sub.add_parser("report", help="render a study report")
    rep.add_argument("--report", required=True)
    rep.add_argument("--format", choices=("text", "csv"), default="text")
    rep.set_defaults(func=cmd_report)

    vote = sub.add_parser("vote", help="re-run meta evaluation and voting on an existing report")
    vote.add_argument("--config", required=True)
    vote.add_argument("--report", required=True)
    vote.add_argument("--out-dir", default=None)
    vote.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    vote.set_defaults(func=cmd_vote)

    oracle = sub.add_parser("oracle", help="exhaustive grid evaluation over the search space")
    oracle.add_argument("--config", required=True)
    oracle.add_argument("--resolution", type=int, default=9)
    oracle.add_argument("--cap", type=int, default=50000)
    oracle.add_argument("--out", default=None)
    oracle.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    oracle.set_defaults(func=cmd_oracle)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return 2
    except OracleRefusal as exc:
        print(f"oracle refused: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, LookupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
