"""Per-class and pooled evaluation of positive-label predictions.

All aggregate scores are micro-averaged: counts are pooled over the class
group before precision/recall are formed.  The ignore variant removes
triples whose underlying fact is already known from the training
annotation, from both the prediction and the gold side.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Iterable, NamedTuple

from .core import Corpus, LabelSpace, TripleLabel


@dataclass(frozen=True)
class ClassStats:
    class_id: str
    tp: int
    fp: int
    fn: int

    @property
    def support(self) -> int:
        return self.tp + self.fn

    @property
    def precision(self) -> float | None:
        denom = self.tp + self.fp
        return self.tp / denom if denom > 0 else None

    @property
    def recall(self) -> float | None:
        denom = self.tp + self.fn
        return self.tp / denom if denom > 0 else None


@dataclass(frozen=True)
class EvalReport:
    per_class: tuple[ClassStats, ...]
    micro_p: float
    micro_r: float
    micro_f1: float
    ign_f1: float
    freq_f1: float
    lt_f1: float

    def to_json_dict(self) -> dict:
        return {
            "micro_p": self.micro_p,
            "micro_r": self.micro_r,
            "micro_f1": self.micro_f1,
            "ign_f1": self.ign_f1,
            "freq_f1": self.freq_f1,
            "lt_f1": self.lt_f1,
        }


class FrequentSplit(NamedTuple):
    frequent: frozenset[str]
    long_tail: frozenset[str]
    coverage: float


def _micro(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def _pooled_f1(pred_keys, gold_keys, classes: set[str]) -> float:
    pred = {k for k in pred_keys if k[2] in classes}
    gold = {k for k in gold_keys if k[2] in classes}
    tp = len(pred & gold)
    return _micro(tp, len(pred) - tp, len(gold) - tp)[2]


def evaluate(
    pred: Iterable[TripleLabel],
    gold: Iterable[TripleLabel],
    labels: LabelSpace,
    fact_signatures: dict[tuple[str, str], str | None] | None = None,
    frequent: frozenset[str] | None = None,
) -> EvalReport:
    """Score predictions against gold positives.

    fact_signatures maps (doc_id, instance_id) to the opaque fact identity
    used by the ignore metric; without it, known facts are matched by label
    key only.  frequent overrides the frequent-class set; by default the
    first frequent_top_k classes of the label space are used.
    """
    gold = list(gold)
    pred = list(pred)
    for lab in pred + gold:
        if lab.class_id not in labels:
            raise ValueError(f"label outside label space: {lab.class_id}")

    pred_keys = {lab.key for lab in pred}
    gold_keys = {lab.key for lab in gold}

    per_class = []
    for cid in labels.classes:
        p_c = {k for k in pred_keys if k[2] == cid}
        g_c = {k for k in gold_keys if k[2] == cid}
        tp = len(p_c & g_c)
        per_class.append(
            ClassStats(class_id=cid, tp=tp, fp=len(p_c) - tp, fn=len(g_c) - tp)
        )
    micro_tp = sum(s.tp for s in per_class)
    micro_fp = sum(s.fp for s in per_class)
    micro_fn = sum(s.fn for s in per_class)
    micro_p, micro_r, micro_f1 = _micro(micro_tp, micro_fp, micro_fn)

    # ignore variant: drop known facts from both sides
    known_keys = {lab.key for lab in gold if lab.known_fact}
    known_facts = set()
    if fact_signatures is not None:
        for lab in gold:
            if lab.known_fact:
                sig = fact_signatures.get((lab.doc_id, lab.instance_id))
                if sig is not None:
                    known_facts.add((sig, lab.class_id))

    def fact_of(key):
        if fact_signatures is None:
            return None
        sig = fact_signatures.get((key[0], key[1]))
        return None if sig is None else (sig, key[2])

    ign_gold = gold_keys - known_keys
    ign_pred = {
        k
        for k in pred_keys
        if k not in known_keys and fact_of(k) not in known_facts
    }
    ign_tp = len(ign_pred & ign_gold)
    ign_f1 = _micro(ign_tp, len(ign_pred) - ign_tp, len(ign_gold) - ign_tp)[2]

    if frequent is None:
        frequent = frozenset(labels.classes[: labels.frequent_top_k])
    long_tail = set(labels.classes) - frequent
    freq_f1 = _pooled_f1(pred_keys, gold_keys, set(frequent))
    lt_f1 = _pooled_f1(pred_keys, gold_keys, long_tail)

    return EvalReport(
        per_class=tuple(per_class),
        micro_p=micro_p,
        micro_r=micro_r,
        micro_f1=micro_f1,
        ign_f1=ign_f1,
        freq_f1=freq_f1,
        lt_f1=lt_f1,
    )


def evaluate_on_corpus(
    pred: Iterable[TripleLabel],
    reference: Iterable[TripleLabel],
    corpus: Corpus,
    fact_signatures: dict | None,
    frequent: frozenset[str] | None,
) -> EvalReport:
    """evaluate() with the corpus's label space; reference is gold or a stand-in."""
    return evaluate(
        pred,
        reference,
        corpus.label_space,
        fact_signatures=fact_signatures,
        frequent=frequent,
    )


def frequent_split(labels: LabelSpace, freq_table: dict[str, int]) -> FrequentSplit:
    """Split classes into the frequent_top_k most popular and the long tail.

    Ranking is by descending count with ties broken by class order.
    coverage is the positive-mass fraction held by the frequent group.
    """
    missing = [c for c in labels.classes if c not in freq_table]
    if missing:
        raise ValueError(f"frequency table missing classes: {missing}")
    order = sorted(
        labels.classes, key=lambda c: (-freq_table[c], labels.index_of(c))
    )
    frequent = frozenset(order[: labels.frequent_top_k])
    long_tail = frozenset(order[labels.frequent_top_k :])
    total = sum(freq_table[c] for c in labels.classes)
    covered = sum(freq_table[c] for c in frequent)
    coverage = covered / total if total > 0 else 0.0
    return FrequentSplit(frequent=frequent, long_tail=long_tail, coverage=coverage)


# ---------------------------------------------------------------------------
# Report serialization
# ---------------------------------------------------------------------------


def write_report_json(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_report_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_per_class_csv(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["class_id", "support", "tp", "fp", "fn", "precision", "recall"]
        )
        for s in report.per_class:
            writer.writerow(
                [
                    s.class_id,
                    s.support,
                    s.tp,
                    s.fp,
                    s.fn,
                    "" if s.precision is None else repr(s.precision),
                    "" if s.recall is None else repr(s.recall),
                ]
            )


def read_per_class_csv(path) -> list[ClassStats]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                ClassStats(
                    class_id=row["class_id"],
                    tp=int(row["tp"]),
                    fp=int(row["fp"]),
                    fn=int(row["fn"]),
                )
            )
    return out
