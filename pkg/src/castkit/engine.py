"""Round/fold self-training orchestration.

Each round re-splits the training documents into N folds.  For every fold
k a model is trained on the other N-1 folds with the current annotation,
pseudo-labels the held-out fold, and is scored on the development set;
the per-class dev scores feed the re-sampling plan that decides which
pseudo labels survive.  Surviving labels merge into the annotation, a
round model trains on the full updated corpus, and after M rounds the
round model with the best dev score is evaluated once on the test set.

Seed streams are derived per round and fold, so fold execution order
never changes any result.  Original labels are never removed and merged
pseudo labels persist into later rounds.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace

from .core import Corpus, CorpusIndex, SeedStream, validate_corpus
from .learner import (
    LearnerConfig,
    LearnerModel,
    TrainView,
    model_to_json_dict,
    predict_corpus,
    predict_rows,
    train,
)
from .metrics import (
    ClassStats,
    EvalReport,
    FrequentSplit,
    evaluate,
    frequent_split,
    write_per_class_csv,
)
from .strategies import (
    PseudoLabelBatch,
    SamplingPlan,
    StrategyConfig,
    cast_rates,
    crest_rates,
    make_batch,
    merge,
    resample,
    vst_rates,
    write_plan_csv,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    strategy: StrategyConfig
    learner: LearnerConfig = LearnerConfig()
    rounds: int = 5
    folds: int = 5
    master_seed: int = 0
    selection_metric: str = "micro_f1"
    corrupt_dev: bool = False
    resplit_each_round: bool = True

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.selection_metric != "micro_f1":
            raise ValueError("selection_metric must be micro_f1")


@dataclass(frozen=True)
class FoldPartition:
    assignment: dict[str, int]
    num_folds: int

    def docs_in(self, fold: int) -> list[str]:
        return [d for d, f in self.assignment.items() if f == fold]

    def docs_not_in(self, fold: int) -> list[str]:
        return [d for d, f in self.assignment.items() if f != fold]


def split_folds(train: Corpus, num_folds: int, rng: SeedStream) -> FoldPartition:
    """Uniform random document-level partition; fold sizes differ by <= 1."""
    doc_ids = [d.doc_id for d in train.documents]
    if num_folds < 2:
        raise ValueError("need at least 2 folds")
    if num_folds > len(doc_ids):
        raise ValueError(
            f"cannot split {len(doc_ids)} documents into {num_folds} folds"
        )
    order = rng.generator().permutation(len(doc_ids))
    assignment = {}
    for pos, doc_idx in enumerate(order.tolist()):
        assignment[doc_ids[doc_idx]] = pos % num_folds + 1
    return FoldPartition(assignment=assignment, num_folds=num_folds)


@dataclass(frozen=True)
class PseudoCounts:
    predicted: int
    kept: int

    @property
    def discarded(self) -> int:
        return self.predicted - self.kept


@dataclass(frozen=True)
class FoldReport:
    fold: int
    dev_eval: EvalReport
    plan: SamplingPlan
    counts: dict[str, PseudoCounts]


@dataclass(frozen=True)
class RoundReport:
    round_index: int
    folds: tuple[FoldReport, ...]
    round_model_dev: EvalReport
    annotation_size: int

    @property
    def pseudo_kept(self) -> int:
        return sum(c.kept for fr in self.folds for c in fr.counts.values())


@dataclass(frozen=True)
class ExperimentResult:
    best_model: LearnerModel
    best_round: int
    reports: tuple[RoundReport, ...]
    test_report: EvalReport
    frequent: FrequentSplit


class TrainingAudit:
    """Optional instrumentation: one record per learner training."""

    def __init__(self):
        self.events: list[dict] = []

    def record(self, kind: str, round_index: int, fold: int | None, doc_ids):
        self.events.append(
            {
                "kind": kind,
                "round": round_index,
                "fold": fold,
                "doc_ids": frozenset(doc_ids),
            }
        )


@dataclass
class _RunContext:
    """Prebuilt indexes and settings shared across rounds."""

    idx_train: CorpusIndex
    idx_dev: CorpusIndex
    dev_reference: frozenset
    frequent: frozenset
    audit: TrainingAudit | None = None
    partition: FoldPartition | None = None


def _check_compatible(train: Corpus, dev: Corpus, test: Corpus | None) -> None:
    corpora = [c for c in (train, dev, test) if c is not None]
    for c in corpora:
        problems = validate_corpus(c)
        if problems:
            raise ValueError(
                f"invalid {c.split_tag} corpus: {problems[0]} "
                f"({len(problems)} violation(s))"
            )
    spaces = {c.label_space.classes for c in corpora}
    if len(spaces) != 1:
        raise ValueError("corpora disagree on the label space")
    dims = {c.feature_dim for c in corpora}
    if len(dims) != 1:
        raise ValueError(f"corpora disagree on feature dimension: {dims}")
    for c in corpora[1:]:
        if c.gold is None:
            raise ValueError(f"{c.split_tag} corpus carries no gold labels")


def training_frequency_split(train: Corpus) -> FrequentSplit:
    """Frequent/long-tail split from train gold counts (observed if no gold)."""
    from .synth import class_frequency_table

    source = "gold" if train.gold is not None else "observed"
    return frequent_split(train.label_space, class_frequency_table(train, source))


def _make_plan(
    strategy: StrategyConfig,
    dev_stats: tuple[ClassStats, ...],
    freq_table: dict[str, int],
    train: Corpus,
) -> SamplingPlan:
    if strategy.kind == "cast":
        return cast_rates(list(dev_stats), strategy.beta)
    if strategy.kind == "crest":
        return crest_rates(freq_table, strategy.alpha)
    return vst_rates(train.label_space)


def run_round(
    state: Corpus,
    dev: Corpus,
    cfg: ExperimentConfig,
    round_index: int,
    ctx: _RunContext | None = None,
) -> tuple[Corpus, RoundReport, LearnerModel]:
    """One self-training round over the current annotation state."""
    if ctx is None:
        _check_compatible(state, dev, None)
        ctx = _RunContext(
            idx_train=CorpusIndex(state),
            idx_dev=CorpusIndex(dev),
            dev_reference=dev.observed if cfg.corrupt_dev else dev.gold,
            frequent=training_frequency_split(state).frequent,
        )
    round_stream = SeedStream(cfg.master_seed).derive("round", round_index)
    if ctx.partition is None or cfg.resplit_each_round:
        ctx.partition = split_folds(state, cfg.folds, round_stream.derive("split"))
    partition = ctx.partition
    annotation = state.observed
    space = state.label_space
    mode = cfg.learner.decision_mode
    threshold = cfg.learner.decision_threshold

    # class frequencies at round start feed the crest plan
    freq_table = {c: 0 for c in space.classes}
    for lab in annotation:
        freq_table[lab.class_id] += 1

    fold_reports: list[FoldReport] = []
    kept_batches: list[PseudoLabelBatch] = []
    for fold in range(1, cfg.folds + 1):
        fold_stream = round_stream.derive("fold", fold)
        train_docs = sorted(partition.docs_not_in(fold))
        rows = ctx.idx_train.rows_for_docs(train_docs)
        view = TrainView.from_index(ctx.idx_train, annotation, rows=rows)
        lcfg = replace(cfg.learner, seed=fold_stream.derive("train"))
        try:
            fold_model = train(view, lcfg)
        except Exception as e:
            raise RuntimeError(
                f"fold model training failed (round {round_index}, fold {fold}): {e}"
            ) from e
        if ctx.audit is not None:
            ctx.audit.record("fold_model", round_index, fold, train_docs)

        dev_pred = predict_corpus(
            fold_model, ctx.idx_dev, mode, threshold, round_index
        )
        dev_eval = evaluate(
            dev_pred,
            ctx.dev_reference,
            space,
            fact_signatures=ctx.idx_dev.fact_signatures,
            frequent=ctx.frequent,
        )
        plan = _make_plan(cfg.strategy, dev_eval.per_class, freq_table, state)

        fold_rows = ctx.idx_train.rows_for_docs(sorted(partition.docs_in(fold)))
        predicted = predict_rows(
            fold_model, ctx.idx_train, fold_rows, mode, threshold, round_index
        )
        batch = make_batch(fold, round_index, predicted, annotation)
        kept = resample(batch, plan, fold_stream.derive("resample"))
        kept_batches.append(kept)

        per_class_pred = {c: 0 for c in space.classes}
        per_class_kept = {c: 0 for c in space.classes}
        for lab in batch.labels:
            per_class_pred[lab.class_id] += 1
        for lab in kept.labels:
            per_class_kept[lab.class_id] += 1
        counts = {
            c: PseudoCounts(predicted=per_class_pred[c], kept=per_class_kept[c])
            for c in space.classes
        }
        fold_reports.append(
            FoldReport(fold=fold, dev_eval=dev_eval, plan=plan, counts=counts)
        )

    for batch in kept_batches:
        annotation = merge(annotation, batch)
    updated = Corpus(
        label_space=space,
        documents=state.documents,
        observed=annotation,
        gold=state.gold,
        split_tag=state.split_tag,
    )

    lcfg = replace(cfg.learner, seed=round_stream.derive("round_model"))
    view = TrainView.from_index(ctx.idx_train, annotation)
    try:
        round_model = train(view, lcfg)
    except Exception as e:
        raise RuntimeError(
            f"round model training failed (round {round_index}): {e}"
        ) from e
    if ctx.audit is not None:
        ctx.audit.record(
            "round_model", round_index, None, [d.doc_id for d in state.documents]
        )
    round_dev_pred = predict_corpus(
        round_model, ctx.idx_dev, mode, threshold, round_index
    )
    round_dev_eval = evaluate(
        round_dev_pred,
        ctx.dev_reference,
        space,
        fact_signatures=ctx.idx_dev.fact_signatures,
        frequent=ctx.frequent,
    )
    report = RoundReport(
        round_index=round_index,
        folds=tuple(fold_reports),
        round_model_dev=round_dev_eval,
        annotation_size=len(annotation),
    )
    return updated, report, round_model


def run_experiment(
    train_corpus: Corpus,
    dev: Corpus,
    test: Corpus,
    cfg: ExperimentConfig,
    audit: TrainingAudit | None = None,
) -> ExperimentResult:
    """Run M rounds of self-training and evaluate the best round model on test."""
    _check_compatible(train_corpus, dev, test)
    fsplit = training_frequency_split(train_corpus)
    ctx = _RunContext(
        idx_train=CorpusIndex(train_corpus),
        idx_dev=CorpusIndex(dev),
        dev_reference=dev.observed if cfg.corrupt_dev else dev.gold,
        frequent=fsplit.frequent,
        audit=audit,
    )
    state = train_corpus
    reports: list[RoundReport] = []
    models: list[LearnerModel] = []
    for round_index in range(1, cfg.rounds + 1):
        state, report, model = run_round(state, dev, cfg, round_index, ctx)
        reports.append(report)
        models.append(model)
        log.info(
            "round %d: dev f1 %.4f, annotation %d",
            round_index,
            report.round_model_dev.micro_f1,
            report.annotation_size,
        )

    best_round = 1
    best_f1 = reports[0].round_model_dev.micro_f1
    for j, rep in enumerate(reports[1:], start=2):
        if rep.round_model_dev.micro_f1 > best_f1:
            best_round, best_f1 = j, rep.round_model_dev.micro_f1
    best_model = models[best_round - 1]

    idx_test = CorpusIndex(test)
    test_pred = predict_corpus(
        best_model,
        idx_test,
        cfg.learner.decision_mode,
        cfg.learner.decision_threshold,
        best_round,
    )
    test_report = evaluate(
        test_pred,
        test.gold,
        test.label_space,
        fact_signatures=idx_test.fact_signatures,
        frequent=fsplit.frequent,
    )
    return ExperimentResult(
        best_model=best_model,
        best_round=best_round,
        reports=tuple(reports),
        test_report=test_report,
        frequent=fsplit,
    )


def fit_on_observed(
    train_corpus: Corpus,
    learner_cfg: LearnerConfig,
    master_seed: int = 0,
    audit: TrainingAudit | None = None,
) -> LearnerModel:
    """Single training on the observed annotation (no self-training)."""
    idx = CorpusIndex(train_corpus)
    view = TrainView.from_index(idx, train_corpus.observed)
    lcfg = replace(
        learner_cfg, seed=SeedStream(master_seed).derive("baseline").derive("train")
    )
    model = train(view, lcfg)
    if audit is not None:
        audit.record(
            "baseline", 0, None, [d.doc_id for d in train_corpus.documents]
        )
    return model


def baseline_run(
    train_corpus: Corpus,
    dev: Corpus,
    test: Corpus,
    learner_cfg: LearnerConfig,
    master_seed: int = 0,
) -> EvalReport:
    """Vanilla baseline: one training on observed labels, scored on test."""
    _check_compatible(train_corpus, dev, test)
    fsplit = training_frequency_split(train_corpus)
    model = fit_on_observed(train_corpus, learner_cfg, master_seed)
    idx_test = CorpusIndex(test)
    pred = predict_corpus(
        model, idx_test, learner_cfg.decision_mode, learner_cfg.decision_threshold
    )
    return evaluate(
        pred,
        test.gold,
        test.label_space,
        fact_signatures=idx_test.fact_signatures,
        frequent=fsplit.frequent,
    )


# ---------------------------------------------------------------------------
# Run artifacts
# ---------------------------------------------------------------------------


def _eval_to_dict(report: EvalReport) -> dict:
    d = report.to_json_dict()
    d["per_class"] = [
        {
            "class_id": s.class_id,
            "support": s.support,
            "tp": s.tp,
            "fp": s.fp,
            "fn": s.fn,
            "precision": s.precision,
            "recall": s.recall,
        }
        for s in report.per_class
    ]
    return d


def round_report_to_dict(report: RoundReport) -> dict:
    return {
        "round": report.round_index,
        "annotation_size": report.annotation_size,
        "pseudo_kept": report.pseudo_kept,
        "round_model_dev": _eval_to_dict(report.round_model_dev),
        "folds": [
            {
                "fold": fr.fold,
                "dev_eval": _eval_to_dict(fr.dev_eval),
                "plan": {
                    "rates": fr.plan.rates,
                    "provenance": fr.plan.provenance,
                },
                "pseudo_counts": {
                    c: {
                        "predicted": pc.predicted,
                        "kept": pc.kept,
                        "discarded": pc.discarded,
                    }
                    for c, pc in fr.counts.items()
                },
            }
            for fr in report.folds
        ],
    }


SUMMARY_FIELDS = [
    "round",
    "dev_p",
    "dev_r",
    "dev_f1",
    "dev_ign_f1",
    "dev_freq_f1",
    "dev_lt_f1",
    "pseudo_kept",
]


def _summary_row(round_index: int, report: EvalReport, pseudo_kept: int) -> list:
    return [
        round_index,
        repr(report.micro_p),
        repr(report.micro_r),
        repr(report.micro_f1),
        repr(report.ign_f1),
        repr(report.freq_f1),
        repr(report.lt_f1),
        pseudo_kept,
    ]


def write_run_artifacts(out_dir, result: ExperimentResult) -> list[str]:
    """Write the run's file set; returns relative paths of written files."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    written = []

    def path(name):
        written.append(name)
        return os.path.join(out_dir, name)

    with open(path("summary.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_FIELDS)
        for rep in result.reports:
            writer.writerow(
                _summary_row(rep.round_index, rep.round_model_dev, rep.pseudo_kept)
            )

    for rep in result.reports:
        with open(path(f"round_{rep.round_index}.json"), "w", encoding="utf-8") as fh:
            json.dump(round_report_to_dict(rep), fh, sort_keys=True, indent=2)
            fh.write("\n")
        write_per_class_csv(
            rep.round_model_dev, path(f"per_class_round_{rep.round_index}.csv")
        )
        write_plan_csv(
            [(fr.fold, fr.plan) for fr in rep.folds],
            path(f"plans_round_{rep.round_index}.csv"),
        )

    with open(path("best_model.json"), "w", encoding="utf-8") as fh:
        json.dump(model_to_json_dict(result.best_model), fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(path("test_report.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "best_round": result.best_round,
                **result.test_report.to_json_dict(),
            },
            fh,
            sort_keys=True,
            indent=2,
        )
        fh.write("\n")
    write_per_class_csv(result.test_report, path("per_class_test.csv"))
    with open(path("frequent_classes.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "frequent": sorted(result.frequent.frequent),
                "long_tail": sorted(result.frequent.long_tail),
                "coverage": result.frequent.coverage,
            },
            fh,
            sort_keys=True,
            indent=2,
        )
        fh.write("\n")
    return written


def write_baseline_artifacts(
    out_dir,
    model: LearnerModel,
    dev_report: EvalReport,
    test_report: EvalReport,
    fsplit: FrequentSplit,
) -> list[str]:
    """Baseline file set: a single round-0 row plus the shared artifacts."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    written = []

    def path(name):
        written.append(name)
        return os.path.join(out_dir, name)

    with open(path("summary.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_FIELDS)
        writer.writerow(_summary_row(0, dev_report, 0))
    write_per_class_csv(dev_report, path("per_class_round_0.csv"))
    with open(path("best_model.json"), "w", encoding="utf-8") as fh:
        json.dump(model_to_json_dict(model), fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(path("test_report.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {"best_round": 0, **test_report.to_json_dict()},
            fh,
            sort_keys=True,
            indent=2,
        )
        fh.write("\n")
    write_per_class_csv(test_report, path("per_class_test.csv"))
    with open(path("frequent_classes.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "frequent": sorted(fsplit.frequent),
                "long_tail": sorted(fsplit.long_tail),
                "coverage": fsplit.coverage,
            },
            fh,
            sort_keys=True,
            indent=2,
        )
        fh.write("\n")
    return written


def read_summary_csv(path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = []
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "round": int(row["round"]),
                    "dev_p": float(row["dev_p"]),
                    "dev_r": float(row["dev_r"]),
                    "dev_f1": float(row["dev_f1"]),
                    "dev_ign_f1": float(row["dev_ign_f1"]),
                    "dev_freq_f1": float(row["dev_freq_f1"]),
                    "dev_lt_f1": float(row["dev_lt_f1"]),
                    "pseudo_kept": int(row["pseudo_kept"]),
                }
            )
        return rows


def read_test_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
