import numpy as np
import pytest

from castkit.core import (
    Corpus,
    CorpusIndex,
    Document,
    EntityPairInstance,
    LabelSpace,
    SeedStream,
    TripleLabel,
    derive_stream,
    pseudo_origin,
    read_corpus,
    validate_corpus,
    write_corpus,
)


def make_corpus(split_tag="train", with_gold=True):
    rng = np.random.default_rng(7)
    space = LabelSpace(classes=("a", "b", "c"), frequent_top_k=1)
    docs = []
    observed = []
    gold = []
    for di in range(4):
        insts = []
        for ii in range(3):
            insts.append(
                EntityPairInstance(
                    instance_id=f"i{ii}",
                    features=rng.normal(size=5),
                    fact_signature=f"fact-{di}-{ii}",
                )
            )
        docs.append(Document(doc_id=f"d{di}", instances=tuple(insts)))
        gold.append(TripleLabel(f"d{di}", "i0", "a"))
        if di % 2 == 0:
            observed.append(TripleLabel(f"d{di}", "i0", "a"))
    return Corpus(
        label_space=space,
        documents=tuple(docs),
        observed=frozenset(observed),
        gold=frozenset(gold) if with_gold else None,
        split_tag=split_tag,
    )


class TestSeedStream:
    def test_same_derivation_identical(self):
        s = SeedStream(1234)
        a = derive_stream(s, "fold", 0)
        b = derive_stream(s, "fold", 0)
        assert a == b
        va = a.generator().integers(0, 2**63, size=16)
        vb = b.generator().integers(0, 2**63, size=16)
        assert np.array_equal(va, vb)

    def test_sibling_indices_differ(self):
        s = SeedStream(1234)
        a = derive_stream(s, "fold", 0).generator().integers(0, 2**63)
        b = derive_stream(s, "fold", 1).generator().integers(0, 2**63)
        assert a != b

    def test_tags_differ(self):
        s = SeedStream(99)
        a = s.derive("round", 3).generator().integers(0, 2**63)
        b = s.derive("fold", 3).generator().integers(0, 2**63)
        assert a != b

    def test_cross_path_independence(self):
        # swapped (tag, index) paths must not collide over 10^4 draws
        s = SeedStream(42)
        g1 = s.derive("round", 1).derive("fold", 2).generator()
        g2 = s.derive("round", 2).derive("fold", 1).generator()
        seq1 = g1.integers(0, 2**63, size=10_000)
        seq2 = g2.integers(0, 2**63, size=10_000)
        assert not np.array_equal(seq1, seq2)
        assert np.sum(seq1 == seq2) == 0

    def test_order_of_sibling_creation_irrelevant(self):
        s = SeedStream(5)
        first = s.derive("a", 0).generator().integers(0, 2**63)
        s2 = SeedStream(5)
        _ = s2.derive("b", 9).generator().integers(0, 2**63)
        again = s2.derive("a", 0).generator().integers(0, 2**63)
        assert first == again

    def test_empty_tag_rejected(self):
        with pytest.raises(ValueError):
            SeedStream(1).derive("")


class TestLabelSpace:
    def test_basic(self):
        space = LabelSpace(classes=("x", "y"), frequent_top_k=2)
        assert len(space) == 2
        assert "x" in space and "z" not in space
        assert space.index_of("y") == 1

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            LabelSpace(classes=("x", "x"), frequent_top_k=0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            LabelSpace(classes=(), frequent_top_k=0)

    def test_top_k_bounds(self):
        with pytest.raises(ValueError):
            LabelSpace(classes=("x",), frequent_top_k=2)


class TestTripleLabel:
    def test_origin_forms(self):
        lab = TripleLabel("d", "i", "a")
        assert not lab.is_pseudo and lab.pseudo_round is None
        lab2 = TripleLabel("d", "i", "a", origin=pseudo_origin(3))
        assert lab2.is_pseudo and lab2.pseudo_round == 3

    def test_bad_origin(self):
        with pytest.raises(ValueError):
            TripleLabel("d", "i", "a", origin="pseudo:0")
        with pytest.raises(ValueError):
            TripleLabel("d", "i", "a", origin="guess")


class TestValidation:
    def test_well_formed(self):
        assert validate_corpus(make_corpus()) == []

    def test_missing_instance_reference(self):
        c = make_corpus()
        bad = frozenset(set(c.observed) | {TripleLabel("d0", "nope", "a")})
        c2 = Corpus(c.label_space, c.documents, bad, c.gold, c.split_tag)
        violations = validate_corpus(c2)
        assert len(violations) == 1
        assert "nope" in violations[0]

    def test_duplicate_doc_id(self):
        c = make_corpus()
        docs = c.documents + (c.documents[0],)
        c2 = Corpus(c.label_space, docs, c.observed, c.gold, c.split_tag)
        violations = [v for v in validate_corpus(c2) if "duplicate doc_id" in v]
        assert len(violations) == 1

    def test_unknown_class(self):
        c = make_corpus()
        bad = frozenset(set(c.observed) | {TripleLabel("d0", "i1", "zzz")})
        c2 = Corpus(c.label_space, c.documents, bad, c.gold, c.split_tag)
        assert any("zzz" in v for v in validate_corpus(c2))

    def test_dev_requires_gold(self):
        c = make_corpus(split_tag="dev", with_gold=False)
        assert any("must carry gold" in v for v in validate_corpus(c))

    def test_dimension_mismatch(self):
        space = LabelSpace(classes=("a",))
        docs = (
            Document(
                "d0",
                (
                    EntityPairInstance("i0", np.zeros(3)),
                    EntityPairInstance("i1", np.zeros(4)),
                ),
            ),
        )
        c = Corpus(space, docs, frozenset(), None, "train")
        assert any("dimension mismatch" in v for v in validate_corpus(c))


class TestSerialization:
    def test_round_trip(self, tmp_path):
        c = make_corpus()
        path = tmp_path / "c.jsonl"
        write_corpus(c, path)
        back = read_corpus(path)
        assert back == c

    def test_round_trip_no_gold(self, tmp_path):
        c = make_corpus(with_gold=False)
        path = tmp_path / "c.jsonl"
        write_corpus(c, path)
        back = read_corpus(path)
        assert back.gold is None
        assert back == c

    def test_round_trip_random_corpora(self, tmp_path):
        rng = np.random.default_rng(123)
        space = LabelSpace(classes=tuple(f"c{i}" for i in range(6)), frequent_top_k=2)
        for trial in range(5):
            docs = []
            labels = []
            for di in range(rng.integers(1, 6)):
                insts = tuple(
                    EntityPairInstance(f"i{k}", rng.normal(size=4))
                    for k in range(rng.integers(1, 5))
                )
                docs.append(Document(f"d{di}", insts))
                for inst in insts:
                    if rng.random() < 0.4:
                        cls = f"c{rng.integers(0, 6)}"
                        labels.append(
                            TripleLabel(
                                f"d{di}",
                                inst.instance_id,
                                cls,
                                origin=pseudo_origin(int(rng.integers(1, 4)))
                                if rng.random() < 0.3
                                else "original",
                                known_fact=bool(rng.random() < 0.2),
                            )
                        )
            c = Corpus(space, tuple(docs), frozenset(labels), frozenset(labels), "train")
            path = tmp_path / f"t{trial}.jsonl"
            write_corpus(c, path)
            assert read_corpus(path) == c

    def test_header_round_trips_exactly(self, tmp_path):
        c = make_corpus()
        path = tmp_path / "c.jsonl"
        write_corpus(c, path)
        write_corpus(read_corpus(path), tmp_path / "c2.jsonl")
        assert (tmp_path / "c.jsonl").read_bytes() == (tmp_path / "c2.jsonl").read_bytes()


class TestCorpusIndex:
    def test_rows_align(self):
        c = make_corpus()
        idx = CorpusIndex(c)
        assert idx.X.shape == (12, 5)
        row = idx.row_of[("d1", "i2")]
        assert np.array_equal(idx.X[row], c.documents[1].instances[2].features)

    def test_label_matrix(self):
        c = make_corpus()
        idx = CorpusIndex(c)
        Y = idx.label_matrix(c.gold)
        assert Y.sum() == len(c.gold)
        a_col = c.label_space.index_of("a")
        assert Y[idx.row_of[("d0", "i0")], a_col] == 1.0

    def test_label_matrix_subset(self):
        c = make_corpus()
        idx = CorpusIndex(c)
        rows = idx.rows_for_docs(["d2"])
        Y = idx.label_matrix(c.gold, rows=rows)
        assert Y.shape == (3, 3)
        assert Y.sum() == 1.0
