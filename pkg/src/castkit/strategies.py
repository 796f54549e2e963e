"""Pseudo-label re-sampling policies and the merge rule.

Three policies compute per-class keep rates mu in [0, 1]:

  cast:  mu_i = (P_i * (1 - R_i)) ** beta, from per-class dev precision
         and recall.  High precision plus low recall keeps pseudo labels;
         classes whose predictions are unreliable, or whose recall is
         already high, get throttled.  beta = 0 keeps everything.
  crest: mu_i = (X_{|C|+1-i} / X_1) ** alpha over frequency ranks; the
         most frequent class gets the lowest rate, the least frequent 1.
  vst:   mu = 1 everywhere (keep all pseudo labels).

Re-sampling keeps each label independently with probability mu of its
class.  Rates of exactly 0 or 1 never consume randomness, so policies
that agree on all-ones rates produce draw-for-draw identical batches.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable

from .core import LabelSpace, SeedStream, TripleLabel, pseudo_origin
from .metrics import ClassStats

STRATEGY_KINDS = ("cast", "crest", "vst")


@dataclass(frozen=True)
class StrategyConfig:
    kind: str
    beta: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind: {self.kind!r}")
        if self.kind == "cast":
            if self.beta is None:
                object.__setattr__(self, "beta", 1.0)
            if self.beta < 0:
                raise ValueError("beta must be >= 0")
            if self.alpha is not None:
                raise ValueError("alpha is not a cast parameter")
        elif self.kind == "crest":
            if self.alpha is None:
                object.__setattr__(self, "alpha", 0.33)
            if self.alpha < 0:
                raise ValueError("alpha must be >= 0")
            if self.beta is not None:
                raise ValueError("beta is not a crest parameter")
        else:
            if self.beta is not None or self.alpha is not None:
                raise ValueError("vst takes no parameters")


@dataclass(frozen=True)
class SamplingPlan:
    rates: dict[str, float]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for cid, mu in self.rates.items():
            if not 0.0 <= mu <= 1.0:
                raise ValueError(f"rate for {cid} outside [0, 1]: {mu}")


@dataclass(frozen=True)
class PseudoLabelBatch:
    fold: int
    round_index: int
    labels: frozenset[TripleLabel]


def make_batch(
    fold: int,
    round_index: int,
    predicted: Iterable[TripleLabel],
    annotation: Iterable[TripleLabel],
) -> PseudoLabelBatch:
    """Batch of new pseudo labels, deduplicated against the annotation keys."""
    existing = {lab.key for lab in annotation}
    fresh = frozenset(
        TripleLabel(
            doc_id=lab.doc_id,
            instance_id=lab.instance_id,
            class_id=lab.class_id,
            origin=pseudo_origin(round_index),
        )
        for lab in predicted
        if lab.key not in existing
    )
    return PseudoLabelBatch(fold=fold, round_index=round_index, labels=fresh)


def cast_rate(precision: float | None, recall: float | None, beta: float) -> float:
    """The class-adaptive keep rate mu = (P * (1 - R)) ** beta.

    beta = 0 returns 1 for every class (x**0 = 1 uniformly, keep-all);
    undefined precision or recall maps to 0 for beta > 0.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if beta == 0.0:
        return 1.0
    if precision is None or recall is None:
        return 0.0
    return (precision * (1.0 - recall)) ** beta


def cast_rates(stats: list[ClassStats], beta: float) -> SamplingPlan:
    """Per-class plan from dev precision/recall; see cast_rate."""
    rates = {}
    source = {}
    for s in stats:
        source[s.class_id] = {"precision": s.precision, "recall": s.recall}
        rates[s.class_id] = cast_rate(s.precision, s.recall, beta)
    return SamplingPlan(
        rates=rates,
        provenance={"strategy": "cast", "beta": beta, "stats": source},
    )


def crest_rates(freq_table: dict[str, int], alpha: float) -> SamplingPlan:
    """Frequency-rank rates mu_i = (X_{|C|+1-i} / X_1) ** alpha.

    Classes are ranked by descending count, zero-count classes at the
    bottom, ties broken by the table's key order.  Rank 1 (most frequent)
    gets the smallest rate; the bottom rank gets exactly 1.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if not freq_table or all(x == 0 for x in freq_table.values()):
        raise ValueError("crest needs at least one class with nonzero count")
    order_index = {c: i for i, c in enumerate(freq_table)}
    ranked = sorted(freq_table, key=lambda c: (-freq_table[c], order_index[c]))
    counts = [freq_table[c] for c in ranked]
    x1 = counts[0]
    n = len(ranked)
    rates = {}
    for i, cid in enumerate(ranked, start=1):
        if alpha == 0.0:
            rates[cid] = 1.0
        else:
            rates[cid] = (counts[n - i] / x1) ** alpha
    return SamplingPlan(
        rates=rates,
        provenance={"strategy": "crest", "alpha": alpha, "freq_table": dict(freq_table)},
    )


def vst_rates(labels: LabelSpace) -> SamplingPlan:
    """Keep-all plan: mu = 1 for every class."""
    return SamplingPlan(
        rates={c: 1.0 for c in labels.classes},
        provenance={"strategy": "vst"},
    )


def resample(
    batch: PseudoLabelBatch, plan: SamplingPlan, rng: SeedStream
) -> PseudoLabelBatch:
    """Keep each label independently with probability mu of its class.

    Labels are visited in sorted key order so the outcome depends only on
    the seed stream.  mu == 1 keeps and mu == 0 drops without drawing, so
    an all-ones plan consumes no randomness at all.
    """
    missing = {lab.class_id for lab in batch.labels} - set(plan.rates)
    if missing:
        raise ValueError(f"plan does not cover classes: {sorted(missing)}")
    gen = None
    kept = []
    for lab in sorted(batch.labels, key=lambda lab: lab.key):
        mu = plan.rates[lab.class_id]
        if mu >= 1.0:
            kept.append(lab)
        elif mu <= 0.0:
            continue
        else:
            if gen is None:
                gen = rng.generator()
            if gen.random() < mu:
                kept.append(lab)
    return PseudoLabelBatch(
        fold=batch.fold, round_index=batch.round_index, labels=frozenset(kept)
    )


def merge(
    annotation: Iterable[TripleLabel], batch: PseudoLabelBatch
) -> frozenset[TripleLabel]:
    """Union keyed on (doc, instance, class); existing labels keep their origin."""
    by_key = {lab.key: lab for lab in annotation}
    for lab in batch.labels:
        by_key.setdefault(lab.key, lab)
    return frozenset(by_key.values())


def write_plan_csv(
    plans: list[tuple[int, SamplingPlan]], path
) -> None:
    """Audit CSV of per-fold plans: fold, class_id, precision, recall, mu."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "class_id", "precision", "recall", "mu"])
        for fold, plan in plans:
            stats = plan.provenance.get("stats", {})
            for cid in plan.rates:
                p = stats.get(cid, {}).get("precision")
                r = stats.get(cid, {}).get("recall")
                writer.writerow(
                    [
                        fold,
                        cid,
                        "" if p is None else repr(p),
                        "" if r is None else repr(r),
                        repr(plan.rates[cid]),
                    ]
                )
