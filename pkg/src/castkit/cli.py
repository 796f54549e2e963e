"""Command-line surface: generate, run, compare, beta-sweep, ingest-docred.

Run directories are content-addressed by a hash of the resolved
configuration; an existing directory is refused unless --force is given.
Everything a run writes is deterministic for a fixed configuration, so
re-running produces byte-identical artifacts regardless of --jobs.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor

from . import __version__
from .core import SeedStream, read_corpus, validate_corpus, write_corpus
from .engine import (
    ExperimentConfig,
    baseline_run,
    fit_on_observed,
    read_summary_csv,
    read_test_report,
    run_experiment,
    training_frequency_split,
    write_baseline_artifacts,
    write_run_artifacts,
)
from .learner import LearnerConfig, predict_corpus
from .metrics import evaluate
from .strategies import StrategyConfig
from .synth import GeneratorConfig, class_frequency_table, generate, ingest_docred_json, na_rate

log = logging.getLogger("castkit")

STRATEGY_CHOICES = ("baseline", "ns", "vst", "crest", "cast")
NS_DEFAULT_GAMMA = 0.1


def _config_hash(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def _prepare_out_dir(path: str, force: bool) -> None:
    if os.path.exists(path):
        if not force:
            raise SystemExit(
                f"error: output directory {path} exists (use --force to overwrite)"
            )
        shutil.rmtree(path)
    os.makedirs(path)


def _write_manifest(out_dir, name, resolved, artifacts, duration=None) -> None:
    manifest = {
        "run_name": name,
        "config": resolved,
        "artifacts": sorted(artifacts),
        "tool_version": __version__,
    }
    if duration is not None:
        manifest["duration_seconds"] = round(duration, 3)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_json_config(path) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise SystemExit(f"error: config file {path} must hold a JSON object")
    return data


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    t0 = time.time()
    file_cfg = _load_json_config(args.config)
    if args.seed is not None:
        file_cfg["seed"] = args.seed
    unknown = set(file_cfg) - {f.name for f in dataclasses.fields(GeneratorConfig)}
    if unknown:
        raise SystemExit(f"error: unknown generator config fields: {sorted(unknown)}")
    seed = int(file_cfg.pop("seed", 0))
    if "drop_rate" in file_cfg and isinstance(file_cfg["drop_rate"], list):
        file_cfg["drop_rate"] = tuple(file_cfg["drop_rate"])
    try:
        cfg = GeneratorConfig(seed=SeedStream(seed), **file_cfg)
    except (TypeError, ValueError) as e:
        raise SystemExit(f"error: invalid generator config: {e}")

    resolved = {**{k: v for k, v in dataclasses.asdict(cfg).items() if k != "seed"},
                "seed": seed}
    if isinstance(resolved.get("drop_rate"), tuple):
        resolved["drop_rate"] = list(resolved["drop_rate"])
    _prepare_out_dir(args.out, args.force)

    train, dev, test = generate(cfg)
    artifacts = []
    for corpus, name in ((train, "train"), (dev, "dev"), (test, "test")):
        path = os.path.join(args.out, f"{name}.jsonl")
        write_corpus(corpus, path)
        artifacts.append(f"{name}.jsonl")
        gold = len(corpus.gold) if corpus.gold is not None else 0
        print(
            f"{name}: docs={len(corpus.documents)} gold={gold} "
            f"observed={len(corpus.observed)} na_rate={na_rate(corpus):.4f}"
        )
    _write_manifest(
        args.out, f"generate-{_config_hash(resolved)}", resolved,
        artifacts, time.time() - t0,
    )
    return 0


# ---------------------------------------------------------------------------
# run / compare / beta-sweep share the cell runner
# ---------------------------------------------------------------------------


def _load_corpora(corpus_dir):
    paths = {s: os.path.join(corpus_dir, f"{s}.jsonl") for s in ("train", "dev", "test")}
    missing = [p for p in paths.values() if not os.path.exists(p)]
    if missing:
        raise SystemExit(f"error: missing corpus files: {missing}")
    corpora = {s: read_corpus(p) for s, p in paths.items()}
    for s, c in corpora.items():
        problems = validate_corpus(c)
        if problems:
            raise SystemExit(f"error: invalid {s} corpus: {problems[0]}")
    return corpora["train"], corpora["dev"], corpora["test"]


def _resolve_cell(strategy: str, args, seed: int) -> dict:
    """Resolved, hashable configuration of one (strategy, seed) run."""
    gamma = args.gamma
    if gamma is None:
        gamma = NS_DEFAULT_GAMMA if strategy == "ns" else 1.0
    cell = {
        "strategy": strategy,
        "seed": seed,
        "rounds": args.rounds,
        "folds": args.folds,
        "gamma": gamma,
        "learning_rate": args.learning_rate,
        "epochs": args.epochs,
        "decision_mode": "single_label" if args.single_label else "multi_label",
        "corrupt_dev": bool(args.corrupt_dev),
        "tool_version": __version__,
    }
    if strategy == "cast":
        cell["beta"] = args.beta if args.beta is not None else 1.0
    elif strategy == "crest":
        cell["alpha"] = args.alpha if args.alpha is not None else 0.33
    return cell


def _execute_cell(corpus_dir: str, cell: dict, out_dir: str) -> dict:
    """Run one cell into out_dir; returns the row for cells.csv."""
    train, dev, test = _load_corpora(corpus_dir)
    lcfg = LearnerConfig(
        epochs=cell["epochs"],
        learning_rate=cell["learning_rate"],
        decision_mode=cell["decision_mode"],
        negative_sampling_rate=cell["gamma"],
    )
    strategy = cell["strategy"]
    os.makedirs(out_dir, exist_ok=True)
    if strategy in ("baseline", "ns"):
        model = fit_on_observed(train, lcfg, master_seed=cell["seed"])
        from .core import CorpusIndex

        fsplit = training_frequency_split(train)
        idx_dev, idx_test = CorpusIndex(dev), CorpusIndex(test)
        dev_ref = dev.observed if cell["corrupt_dev"] else dev.gold
        dev_report = evaluate(
            predict_corpus(model, idx_dev, lcfg.decision_mode, lcfg.decision_threshold),
            dev_ref, dev.label_space, idx_dev.fact_signatures, fsplit.frequent,
        )
        test_report = evaluate(
            predict_corpus(model, idx_test, lcfg.decision_mode, lcfg.decision_threshold),
            test.gold, test.label_space, idx_test.fact_signatures, fsplit.frequent,
        )
        write_baseline_artifacts(out_dir, model, dev_report, test_report, fsplit)
        best_round = 0
    else:
        if strategy == "cast":
            scfg = StrategyConfig("cast", beta=cell["beta"])
        elif strategy == "crest":
            scfg = StrategyConfig("crest", alpha=cell["alpha"])
        else:
            scfg = StrategyConfig("vst")
        ecfg = ExperimentConfig(
            strategy=scfg,
            learner=lcfg,
            rounds=cell["rounds"],
            folds=cell["folds"],
            master_seed=cell["seed"],
            corrupt_dev=cell["corrupt_dev"],
        )
        result = run_experiment(train, dev, test, ecfg)
        write_run_artifacts(out_dir, result)
        test_report = result.test_report
        best_round = result.best_round
    return {
        "strategy": strategy,
        "seed": cell["seed"],
        "best_round": best_round,
        "p": test_report.micro_p,
        "r": test_report.micro_r,
        "f1": test_report.micro_f1,
        "ign_f1": test_report.ign_f1,
        "freq_f1": test_report.freq_f1,
        "lt_f1": test_report.lt_f1,
    }


def _cell_worker(task):
    corpus_dir, cell, out_dir = task
    try:
        row = _execute_cell(corpus_dir, cell, out_dir)
        return ("ok", cell, out_dir, row)
    except Exception as e:  # cell failures land in the table as gaps
        return ("failed", cell, out_dir, str(e))


def _cell_dir_name(cell: dict) -> str:
    bits = [cell["strategy"]]
    if "beta" in cell:
        bits.append(f"beta{cell['beta']:g}")
    if "alpha" in cell:
        bits.append(f"alpha{cell['alpha']:g}")
    bits.append(f"seed{cell['seed']}")
    return "__".join(bits) + "-" + _config_hash(cell)


def cmd_run(args) -> int:
    t0 = time.time()
    cell = _resolve_cell(args.strategy, args, args.seed)
    name = _cell_dir_name(cell)
    out_dir = os.path.join(args.out, name)
    if os.path.exists(out_dir):
        if not args.force:
            raise SystemExit(
                f"error: run directory {out_dir} exists (use --force to overwrite)"
            )
        shutil.rmtree(out_dir)
    status, _, _, row = _cell_worker((args.corpus_dir, cell, out_dir))
    if status == "failed":
        print(f"error: {row}", file=sys.stderr)
        return 1
    artifacts = sorted(
        os.path.relpath(os.path.join(dp, f), out_dir)
        for dp, _, files in os.walk(out_dir)
        for f in files
    )
    _write_manifest(out_dir, name, cell, artifacts, time.time() - t0)
    print(
        f"{args.strategy}: best_round={row['best_round']} "
        f"test_f1={row['f1']:.4f} (run {name})"
    )
    return 0


CELL_FIELDS = ["strategy", "seed", "status", "run_dir", "best_round",
               "p", "r", "f1", "ign_f1", "freq_f1", "lt_f1"]
COMPARE_FIELDS = ["strategy", "n_runs", "n_failed"] + [
    f"{stat}_{m}"
    for m in ("p", "r", "f1", "ign_f1", "freq_f1", "lt_f1")
    for stat in ("mean", "sd")
]


def _mean_sd(values: list[float]) -> tuple[float, float]:
    n = len(values)
    mean = sum(values) / n
    if n == 1:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, var ** 0.5


def _write_trajectories(path, cell_outcomes) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["strategy", "seed", "round", "dev_p", "dev_r", "dev_f1",
             "dev_ign_f1", "dev_freq_f1", "dev_lt_f1", "pseudo_kept"]
        )
        for status, cell, out_dir, _ in cell_outcomes:
            if status != "ok":
                continue
            summary = os.path.join(out_dir, "summary.csv")
            if not os.path.exists(summary):
                continue
            for row in read_summary_csv(summary):
                writer.writerow(
                    [cell["strategy"], cell["seed"], row["round"],
                     _fmt(row["dev_p"]), _fmt(row["dev_r"]), _fmt(row["dev_f1"]),
                     _fmt(row["dev_ign_f1"]), _fmt(row["dev_freq_f1"]),
                     _fmt(row["dev_lt_f1"]), row["pseudo_kept"]]
                )


def _run_cells(corpus_dir, cells, cells_root, jobs):
    tasks = []
    for cell in cells:
        out_dir = os.path.join(cells_root, _cell_dir_name(cell))
        tasks.append((corpus_dir, cell, out_dir))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outcomes = list(ex.map(_cell_worker, tasks))
    else:
        outcomes = [_cell_worker(t) for t in tasks]
    return outcomes


def cmd_compare(args) -> int:
    strategies = [s.strip() for s in args.strategy.split(",") if s.strip()]
    bad = [s for s in strategies if s not in STRATEGY_CHOICES]
    if bad:
        raise SystemExit(f"error: unknown strategies: {bad}")
    seeds = _parse_int_list(args.seeds)
    _prepare_out_dir(args.out, args.force)
    cells_root = os.path.join(args.out, "cells")
    cells = [_resolve_cell(s, args, seed) for s in strategies for seed in seeds]
    outcomes = _run_cells(args.corpus_dir, cells, cells_root, args.jobs)

    with open(os.path.join(args.out, "cells.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CELL_FIELDS)
        for status, cell, out_dir, row in outcomes:
            rel = os.path.relpath(out_dir, args.out)
            if status == "ok":
                writer.writerow(
                    [cell["strategy"], cell["seed"], "ok", rel, row["best_round"]]
                    + [_fmt(row[m]) for m in ("p", "r", "f1", "ign_f1", "freq_f1", "lt_f1")]
                )
            else:
                writer.writerow(
                    [cell["strategy"], cell["seed"], "failed", rel, ""]
                    + [""] * 6
                )

    with open(os.path.join(args.out, "compare.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARE_FIELDS)
        for strat in strategies:
            rows = [r for st, c, _, r in outcomes if st == "ok" and c["strategy"] == strat]
            failed = sum(
                1 for st, c, _, _ in outcomes if st == "failed" and c["strategy"] == strat
            )
            out = [strat, len(rows), failed]
            if rows:
                for m in ("p", "r", "f1", "ign_f1", "freq_f1", "lt_f1"):
                    mean, sd = _mean_sd([r[m] for r in rows])
                    out.extend([_fmt(mean), _fmt(sd)])
            else:
                out.extend([""] * 12)
            writer.writerow(out)

    _write_trajectories(os.path.join(args.out, "trajectories.csv"), outcomes)
    resolved = {
        "strategies": strategies,
        "seeds": seeds,
        "cells": [c for c in cells],
    }
    # no timing in the manifest: compare trees must be byte-identical
    _write_manifest(args.out, f"compare-{_config_hash(resolved)}", resolved,
                    ["cells.csv", "compare.csv", "trajectories.csv"])
    n_failed = sum(1 for st, *_ in outcomes if st == "failed")
    for strat in strategies:
        rows = [r for st, c, _, r in outcomes if st == "ok" and c["strategy"] == strat]
        if rows:
            mean, sd = _mean_sd([r["f1"] for r in rows])
            print(f"{strat}: test_f1 {mean:.4f} +- {sd:.4f} ({len(rows)} runs)")
        else:
            print(f"{strat}: all runs failed")
    if n_failed:
        print(f"{n_failed} cell(s) failed", file=sys.stderr)
        return 2
    return 0


def cmd_beta_sweep(args) -> int:
    betas = [float(b) for b in args.beta.split(",")] if args.beta else [0.0, 0.5, 1.0]
    if any(b < 0 for b in betas):
        raise SystemExit("error: beta values must be >= 0")
    seeds = _parse_int_list(args.seeds)
    _prepare_out_dir(args.out, args.force)
    cells_root = os.path.join(args.out, "cells")
    cells = []
    for beta in betas:
        ns = argparse.Namespace(**vars(args))
        ns.beta = beta
        for seed in seeds:
            cells.append(_resolve_cell("cast", ns, seed))
    outcomes = _run_cells(args.corpus_dir, cells, cells_root, args.jobs)

    with open(os.path.join(args.out, "beta_sweep.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["beta", "seed", "round", "dev_f1", "pseudo_kept"])
        for status, cell, out_dir, _ in outcomes:
            if status != "ok":
                continue
            for row in read_summary_csv(os.path.join(out_dir, "summary.csv")):
                writer.writerow(
                    [_fmt(cell["beta"]), cell["seed"], row["round"],
                     _fmt(row["dev_f1"]), row["pseudo_kept"]]
                )

    with open(os.path.join(args.out, "beta_summary.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["beta", "round", "mean_dev_f1", "sd_dev_f1", "mean_pseudo_kept"])
        for beta in betas:
            per_round: dict[int, list] = {}
            kept: dict[int, list] = {}
            for status, cell, out_dir, _ in outcomes:
                if status != "ok" or cell["beta"] != beta:
                    continue
                for row in read_summary_csv(os.path.join(out_dir, "summary.csv")):
                    per_round.setdefault(row["round"], []).append(row["dev_f1"])
                    kept.setdefault(row["round"], []).append(row["pseudo_kept"])
            for rnd in sorted(per_round):
                mean, sd = _mean_sd(per_round[rnd])
                writer.writerow(
                    [_fmt(beta), rnd, _fmt(mean), _fmt(sd),
                     _fmt(sum(kept[rnd]) / len(kept[rnd]))]
                )
    n_failed = sum(1 for st, *_ in outcomes if st == "failed")
    print(f"beta sweep over {betas} x {len(seeds)} seed(s) done")
    return 2 if n_failed else 0


def cmd_ingest_docred(args) -> int:
    t0 = time.time()
    label_space = None
    if args.label_space:
        with open(args.label_space, "r", encoding="utf-8") as fh:
            label_space = json.load(fh)
    try:
        corpus = ingest_docred_json(
            args.input,
            featurization=args.featurization,
            feature_dim=args.feature_dim,
            label_space=label_space,
            frequent_top_k=args.frequent_top_k,
            split_tag=args.split,
        )
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    problems = validate_corpus(corpus)
    if problems:
        print(f"error: ingested corpus invalid: {problems[0]}", file=sys.stderr)
        return 1
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    write_corpus(corpus, args.out)
    print(
        f"ingested {len(corpus.documents)} documents, "
        f"{corpus.num_instances()} instances, {len(corpus.observed)} labels, "
        f"{len(corpus.label_space)} classes ({time.time() - t0:.1f}s)"
    )
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise SystemExit(f"error: expected comma-separated integers, got {text!r}")


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--beta", type=float, default=None, help="cast smoothness coefficient")
    p.add_argument("--alpha", type=float, default=None, help="crest rank power")
    p.add_argument("--gamma", type=float, default=None,
                   help="negative sampling rate (default 1.0; 0.1 for ns)")
    p.add_argument("--rounds", type=int, default=5, help="self-training rounds")
    p.add_argument("--folds", type=int, default=5, help="cross-validation folds")
    p.add_argument("--learning-rate", type=float,
                   default=LearnerConfig().learning_rate, help="SGD learning rate")
    p.add_argument("--epochs", type=int, default=LearnerConfig().epochs,
                   help="epochs per training")
    p.add_argument("--corrupt-dev", action="store_true",
                   help="use the corrupted dev annotation for scoring and selection")
    p.add_argument("--single-label", action="store_true",
                   help="emit at most one label per instance")
    p.add_argument("--force", action="store_true", help="overwrite existing output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="castkit",
        description="Self-training for multi-label classification with "
                    "incomplete annotation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic corpus")
    p.add_argument("--config", default=None, help="JSON generator config")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="run one strategy on a corpus")
    p.add_argument("corpus_dir")
    p.add_argument("--strategy", required=True, choices=STRATEGY_CHOICES)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", required=True, help="parent directory for the run")
    _add_run_options(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="strategy comparison over seeds")
    p.add_argument("corpus_dir")
    p.add_argument("--strategy", required=True,
                   help="comma-separated strategies, e.g. baseline,vst,cast")
    p.add_argument("--seeds", required=True, help="comma-separated master seeds")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1, help="parallel cells")
    _add_run_options(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("beta-sweep", help="cast dev-F1 trajectories over beta values")
    p.add_argument("corpus_dir")
    p.add_argument("--seeds", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    _add_run_options(p)
    p.set_defaults(func=cmd_beta_sweep)

    p = sub.add_parser("ingest-docred", help="read DocRED-style JSON into a corpus file")
    p.add_argument("input")
    p.add_argument("--out", required=True, help="output corpus file (.jsonl)")
    p.add_argument("--feature-dim", type=int, default=64)
    p.add_argument("--featurization", default="hashed_bow", choices=("hashed_bow",))
    p.add_argument("--label-space", default=None,
                   help="JSON file with the list of relation ids")
    p.add_argument("--frequent-top-k", type=int, default=None)
    p.add_argument("--split", default="train", choices=("train", "dev", "test"))
    p.set_defaults(func=cmd_ingest_docred)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("CAST_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
