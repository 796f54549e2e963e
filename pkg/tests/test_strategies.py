"""Re-sampling rate formulas and the resample/merge contracts.

Expected values are frozen from high-precision evaluation of the rate
formulas (mpmath, 30 digits), independent of the implementation path.
"""

from fractions import Fraction

import numpy as np
import pytest

from castkit.core import LabelSpace, SeedStream, TripleLabel, pseudo_origin
from castkit.metrics import ClassStats
from castkit.strategies import (
    PseudoLabelBatch,
    SamplingPlan,
    StrategyConfig,
    cast_rate,
    cast_rates,
    crest_rates,
    make_batch,
    merge,
    resample,
    vst_rates,
)


def stats(class_id, tp, fp, fn):
    return ClassStats(class_id=class_id, tp=tp, fp=fp, fn=fn)


def stats_pr(class_id, p, r):
    """ClassStats whose tp/fp/fn realize precision p and recall r exactly."""
    pf, rf = Fraction(str(p)), Fraction(str(r))
    assert 0 < pf <= 1 and 0 < rf <= 1
    tp = pf.numerator * rf.numerator
    fp = pf.denominator * rf.numerator - tp
    fn = pf.numerator * rf.denominator - tp
    return ClassStats(class_id, tp=tp, fp=fp, fn=fn)


class TestCastRates:
    # (P, R, beta) -> mu, frozen from 30-digit evaluation of (P*(1-R))**beta
    GRID = [
        (1.0, 0.0, 1.0, 1.0),
        (0.0, 0.0, 1.0, 0.0),
        (0.8, 0.5, 0.5, 0.63245553203367588),
        (0.9, 0.3, 1.0, 0.63000000000000003),
        (0.7, 0.2, 2.0, 0.31359999999999995),
        (0.5, 0.5, 0.25, 0.70710678118654752),
        (0.95, 0.05, 0.75, 0.92594546275685154),
        (0.6, 0.9, 1.5, 0.014696938456699063),
        (0.25, 0.75, 3.0, 0.000244140625),
        (1.0, 1.0, 1.0, 0.0),
        (1.0, 0.5, 1.0, 0.5),
        (0.5, 0.0, 1.0, 0.5),
        (0.5, 0.0, 2.0, 0.25),
        (0.2, 0.4, 1.0, 0.12),
        (0.2, 0.4, 0.5, 0.34641016151377546),
        (0.75, 0.25, 4.0, 0.1001129150390625),  # (9/16)**4 = 6561/65536
        (1.0, 0.0, 0.0, 1.0),
        (0.0, 0.0, 0.0, 1.0),
        (0.3, 0.7, 0.0, 1.0),
        (0.9, 0.9, 3.0, 0.000729000000000000),
    ]

    @pytest.mark.parametrize("p,r,beta,expected", GRID)
    def test_grid(self, p, r, beta, expected):
        assert cast_rate(p, r, beta) == pytest.approx(expected, abs=1e-12)

    def test_runtime_under_one_second(self):
        import time

        t0 = time.time()
        for p, r, beta, expected in self.GRID:
            assert abs(cast_rate(p, r, beta) - expected) < 1e-12
        assert time.time() - t0 < 1.0

    def test_rates_from_integer_counts(self):
        # realizable (P, R) pairs must flow through ClassStats unchanged
        for p, r, beta in [(0.8, 0.5, 0.5), (0.9, 0.3, 1.0), (0.6, 0.9, 1.5)]:
            s = stats_pr("c", p, r)
            assert s.precision == p and s.recall == r
            plan = cast_rates([s], beta)
            assert plan.rates["c"] == cast_rate(p, r, beta)

    def test_undefined_precision_gives_zero(self):
        plan = cast_rates([ClassStats("c", tp=0, fp=0, fn=5)], beta=1.0)
        assert plan.rates["c"] == 0.0

    def test_undefined_recall_gives_zero(self):
        plan = cast_rates([ClassStats("c", tp=0, fp=5, fn=0)], beta=1.0)
        assert plan.rates["c"] == 0.0

    def test_beta_zero_keeps_undefined_classes(self):
        plan = cast_rates([ClassStats("c", tp=0, fp=0, fn=0)], beta=0.0)
        assert plan.rates["c"] == 1.0

    def test_monotone_in_recall_and_precision(self):
        grid = [0.1, 0.3, 0.5, 0.7, 0.9]
        for beta in (0.25, 1.0, 2.0):
            for p in grid:
                mus = [cast_rate(p, r, beta) for r in grid]
                assert all(a >= b for a, b in zip(mus, mus[1:]))
            for r in grid:
                mus = [cast_rate(p, r, beta) for p in grid]
                assert all(a <= b for a, b in zip(mus, mus[1:]))

    def test_order_invariance(self):
        sts = [stats("a", 5, 5, 5), stats("b", 1, 0, 9), stats("c", 0, 3, 2)]
        plan1 = cast_rates(sts, 0.7)
        plan2 = cast_rates(list(reversed(sts)), 0.7)
        assert plan1.rates == plan2.rates


class TestCrestRates:
    def test_hand_values(self):
        # counts [100, 50, 10], alpha = 0.33; frozen 30-digit values
        plan = crest_rates({"a": 100, "b": 50, "c": 10}, alpha=0.33)
        assert plan.rates["a"] == pytest.approx(0.46773514128719819, abs=1e-12)
        assert plan.rates["b"] == pytest.approx(0.79553648375491867, abs=1e-12)
        assert plan.rates["c"] == 1.0

    def test_least_frequent_gets_one(self):
        plan = crest_rates({"a": 7, "b": 3, "c": 19}, alpha=0.5)
        assert plan.rates["b"] == 1.0

    def test_alpha_zero_all_ones(self):
        plan = crest_rates({"a": 5, "b": 0}, alpha=0.0)
        assert plan.rates == {"a": 1.0, "b": 1.0}

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            crest_rates({"a": 0, "b": 0}, alpha=0.33)

    def test_zero_count_classes_rank_bottom(self):
        plan = crest_rates({"a": 10, "b": 0, "c": 5}, alpha=1.0)
        # ranking a(10), c(5), b(0): mu_a = 0/10, mu_c = 5/10, mu_b = 10/10
        assert plan.rates == {"a": 0.0, "c": 0.5, "b": 1.0}

    def test_frequency_ties_broken_by_table_order(self):
        plan = crest_rates({"a": 5, "b": 5, "c": 1}, alpha=1.0)
        # a ranks above b; rates mirror rank: a gets 1/5, b gets 5/5... c is rank 3
        assert plan.rates["a"] == pytest.approx(0.2)
        assert plan.rates["b"] == 1.0
        assert plan.rates["c"] == 1.0

    def test_more_frequent_never_higher_rate(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            counts = {f"c{i}": int(rng.integers(0, 100)) for i in range(10)}
            if all(v == 0 for v in counts.values()):
                continue
            plan = crest_rates(counts, alpha=0.33)
            ranked = sorted(counts, key=lambda c: -counts[c])
            for hi, lo in zip(ranked, ranked[1:]):
                if counts[hi] > counts[lo]:
                    assert plan.rates[hi] <= plan.rates[lo]


class TestVstRates:
    def test_all_ones(self):
        space = LabelSpace(classes=("a", "b", "c"))
        plan = vst_rates(space)
        assert set(plan.rates.values()) == {1.0}

    def test_equals_cast_beta_zero(self):
        space = LabelSpace(classes=("a", "b"))
        sts = [stats("a", 1, 2, 3), stats("b", 0, 0, 0)]
        assert vst_rates(space).rates == cast_rates(sts, 0.0).rates


def batch_of(labels, fold=1, round_index=1):
    return PseudoLabelBatch(fold=fold, round_index=round_index, labels=frozenset(labels))


def plab(doc, inst, cls, rnd=1):
    return TripleLabel(doc, inst, cls, origin=pseudo_origin(rnd))


class TestResample:
    def test_all_ones_identity_without_randomness(self):
        labels = {plab("d", f"i{k}", "a") for k in range(50)}
        batch = batch_of(labels)
        plan = SamplingPlan(rates={"a": 1.0})
        out = resample(batch, plan, SeedStream(1).derive("resample"))
        assert out.labels == batch.labels

    def test_all_zeros_empty(self):
        labels = {plab("d", f"i{k}", "a") for k in range(10)}
        out = resample(batch_of(labels), SamplingPlan(rates={"a": 0.0}), SeedStream(1))
        assert out.labels == frozenset()

    def test_binomial_interval_half(self):
        # central 99.9% interval for Binomial(10000, 0.5): [4835, 5165]
        # (scipy.stats.binom.ppf([5e-4, 1-5e-4], 10000, 0.5))
        labels = {plab("d", f"i{k}", "a") for k in range(10000)}
        out = resample(batch_of(labels), SamplingPlan(rates={"a": 0.5}), SeedStream(99))
        assert 4835 <= len(out.labels) <= 5165

    def test_kept_subset_of_input(self):
        rng = np.random.default_rng(0)
        labels = {plab("d", f"i{k}", f"c{k % 3}") for k in range(200)}
        plan = SamplingPlan(rates={"c0": 0.3, "c1": 0.8, "c2": 0.0})
        out = resample(batch_of(labels), plan, SeedStream(5))
        assert out.labels <= labels

    def test_deterministic_given_stream(self):
        labels = {plab("d", f"i{k}", "a") for k in range(100)}
        plan = SamplingPlan(rates={"a": 0.4})
        a = resample(batch_of(labels), plan, SeedStream(3))
        b = resample(batch_of(labels), plan, SeedStream(3))
        assert a.labels == b.labels

    def test_extreme_rates_consume_no_randomness(self):
        # mixing mu=1 labels into the batch must not change the draws
        # for the 0 < mu < 1 labels
        partial = {plab("d", f"i{k}", "a") for k in range(100)}
        sure = {plab("d", f"j{k}", "b") for k in range(57)}
        plan = SamplingPlan(rates={"a": 0.5, "b": 1.0})
        only = resample(batch_of(partial), SamplingPlan(rates={"a": 0.5}), SeedStream(8))
        mixed = resample(batch_of(partial | sure), plan, SeedStream(8))
        assert {lab for lab in mixed.labels if lab.class_id == "a"} == only.labels

    def test_uncovered_class_rejected(self):
        labels = {plab("d", "i", "zz")}
        with pytest.raises(ValueError):
            resample(batch_of(labels), SamplingPlan(rates={"a": 1.0}), SeedStream(1))


class TestMergeAndBatch:
    def test_union_with_original_priority(self):
        existing = {TripleLabel("d", "i1", "a", origin="original")}
        batch = batch_of({plab("d", "i1", "a"), plab("d", "i2", "b")})
        merged = merge(existing, batch)
        assert len(merged) == 2
        by_key = {lab.key: lab for lab in merged}
        assert by_key[("d", "i1", "a")].origin == "original"
        assert by_key[("d", "i2", "b")].origin == "pseudo:1"

    def test_subset_batch_is_identity(self):
        existing = {TripleLabel("d", "i1", "a"), TripleLabel("d", "i2", "b")}
        batch = batch_of({plab("d", "i1", "a")})
        assert merge(existing, batch) == frozenset(existing)

    def test_disjoint_batch_adds_all(self):
        existing = {TripleLabel("d", "i1", "a")}
        batch = batch_of({plab("d", f"x{k}", "a") for k in range(3)})
        assert len(merge(existing, batch)) == 4

    def test_associative_commutative_over_disjoint_batches(self):
        existing = frozenset({TripleLabel("d", "i0", "a")})
        b1 = batch_of({plab("d", "i1", "a")}, fold=1)
        b2 = batch_of({plab("d", "i2", "b")}, fold=2)
        b3 = batch_of({plab("d", "i3", "a")}, fold=3)
        import itertools

        results = set()
        for order in itertools.permutations([b1, b2, b3]):
            ann = existing
            for b in order:
                ann = merge(ann, b)
            results.add(ann)
        assert len(results) == 1

    def test_make_batch_dedupes_against_annotation(self):
        annotation = {TripleLabel("d", "i1", "a")}
        predicted = {plab("d", "i1", "a", rnd=2), plab("d", "i2", "a", rnd=2)}
        batch = make_batch(1, 2, predicted, annotation)
        assert len(batch.labels) == 1
        (lab,) = batch.labels
        assert lab.key == ("d", "i2", "a")
        assert lab.origin == "pseudo:2"


class TestStrategyConfig:
    def test_kinds(self):
        assert StrategyConfig("cast", beta=0.5).beta == 0.5
        assert StrategyConfig("crest").alpha == 0.33
        StrategyConfig("vst")

    def test_irrelevant_parameters_rejected(self):
        with pytest.raises(ValueError):
            StrategyConfig("vst", beta=1.0)
        with pytest.raises(ValueError):
            StrategyConfig("cast", alpha=0.3)
        with pytest.raises(ValueError):
            StrategyConfig("crest", beta=1.0)

    def test_negative_beta_rejected(self):
        with pytest.raises(ValueError):
            StrategyConfig("cast", beta=-0.1)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            StrategyConfig("ssr_pu")
