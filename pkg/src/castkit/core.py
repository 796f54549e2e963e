"""Shared domain types: label spaces, documents, annotations, seed streams.

Everything here is immutable after construction and safe to share across
workers.  Corpora are stored on disk as JSON lines: a single header line
(label space, feature dimension, split tag) followed by one JSON object per
document.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

ORIGIN_ORIGINAL = "original"
SPLIT_TAGS = ("train", "dev", "test")


def pseudo_origin(round_index: int) -> str:
    """Origin string for a pseudo label produced in self-training round j."""
    if round_index < 1:
        raise ValueError(f"pseudo round must be >= 1, got {round_index}")
    return f"pseudo:{round_index}"


@dataclass(frozen=True)
class LabelSpace:
    """Ordered positive classes.  NA is the empty label set, not a member."""

    classes: tuple[str, ...]
    frequent_top_k: int = 0

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.classes:
            raise ValueError("label space must be non-empty")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("class identifiers must be unique")
        if not 0 <= self.frequent_top_k <= len(self.classes):
            raise ValueError(
                f"frequent_top_k must be in [0, {len(self.classes)}], "
                f"got {self.frequent_top_k}"
            )

    def __len__(self) -> int:
        return len(self.classes)

    def __contains__(self, class_id: str) -> bool:
        return class_id in self._index

    @property
    def _index(self) -> dict[str, int]:
        idx = getattr(self, "_index_cache", None)
        if idx is None:
            idx = {c: i for i, c in enumerate(self.classes)}
            object.__setattr__(self, "_index_cache", idx)
        return idx

    def index_of(self, class_id: str) -> int:
        return self._index[class_id]


@dataclass(frozen=True, eq=False)
class EntityPairInstance:
    """One candidate pair, reduced to a fixed-dimension feature vector."""

    instance_id: str
    features: np.ndarray
    fact_signature: str | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)

    def __eq__(self, other):
        if not isinstance(other, EntityPairInstance):
            return NotImplemented
        return (
            self.instance_id == other.instance_id
            and self.fact_signature == other.fact_signature
            and np.array_equal(self.features, other.features)
        )


@dataclass(frozen=True, eq=False)
class Document:
    doc_id: str
    instances: tuple[EntityPairInstance, ...]

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))

    def __eq__(self, other):
        if not isinstance(other, Document):
            return NotImplemented
        return self.doc_id == other.doc_id and self.instances == other.instances


@dataclass(frozen=True)
class TripleLabel:
    """A positive (document, instance, class) annotation.

    origin is "original" for human annotation or "pseudo:<j>" for a label
    produced in self-training round j.  known_fact marks triples whose
    underlying fact also appears in the training annotation; the ignore
    variant of F1 removes them.
    """

    doc_id: str
    instance_id: str
    class_id: str
    origin: str = ORIGIN_ORIGINAL
    known_fact: bool = False

    def __post_init__(self):
        if self.origin != ORIGIN_ORIGINAL:
            kind, _, num = self.origin.partition(":")
            if kind != "pseudo" or not num.isdigit() or int(num) < 1:
                raise ValueError(f"bad label origin: {self.origin!r}")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.doc_id, self.instance_id, self.class_id)

    @property
    def is_pseudo(self) -> bool:
        return self.origin != ORIGIN_ORIGINAL

    @property
    def pseudo_round(self) -> int | None:
        if not self.is_pseudo:
            return None
        return int(self.origin.partition(":")[2])


@dataclass(frozen=True, eq=False)
class Corpus:
    """Documents plus the observed annotation and optional gold truth."""

    label_space: LabelSpace
    documents: tuple[Document, ...]
    observed: frozenset[TripleLabel]
    gold: frozenset[TripleLabel] | None
    split_tag: str

    def __post_init__(self):
        object.__setattr__(self, "documents", tuple(self.documents))
        object.__setattr__(self, "observed", frozenset(self.observed))
        if self.gold is not None:
            object.__setattr__(self, "gold", frozenset(self.gold))
        if self.split_tag not in SPLIT_TAGS:
            raise ValueError(f"split_tag must be one of {SPLIT_TAGS}")

    @property
    def feature_dim(self) -> int:
        for doc in self.documents:
            for inst in doc.instances:
                return int(inst.features.shape[0])
        return 0

    def num_instances(self) -> int:
        return sum(len(d.instances) for d in self.documents)

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.label_space == other.label_space
            and self.split_tag == other.split_tag
            and self.documents == other.documents
            and self.observed == other.observed
            and self.gold == other.gold
        )


# ---------------------------------------------------------------------------
# Seed streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SeedStream:
    """Splittable source of randomness.

    A stream is identified by (master_seed, derivation path).  Children are
    derived by (tag, index) and depend only on their own path, never on the
    order in which siblings were created.  The path is hashed with SHA-256,
    so distinct paths give statistically independent generators.
    """

    master_seed: int
    path: tuple[tuple[str, int], ...] = field(default=())

    def derive(self, tag: str, index: int = 0) -> "SeedStream":
        if not tag:
            raise ValueError("derivation tag must be non-empty")
        return SeedStream(self.master_seed, self.path + ((tag, int(index)),))

    def entropy(self) -> int:
        h = hashlib.sha256()
        h.update(struct.pack("<q", self.master_seed & 0xFFFFFFFFFFFFFFFF))
        for tag, index in self.path:
            h.update(tag.encode("utf-8"))
            h.update(b"\x00")
            h.update(struct.pack("<q", index))
        return int.from_bytes(h.digest()[:16], "little")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.entropy()))


def derive_stream(parent: SeedStream, tag: str, index: int = 0) -> SeedStream:
    """Pure child-stream derivation; see SeedStream.derive."""
    return parent.derive(tag, index)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate_corpus(corpus: Corpus) -> list[str]:
    """Check all corpus invariants.  Returns one message per violation.

    Never raises: an empty list means the corpus is well formed.
    """
    violations: list[str] = []
    seen_docs: set[str] = set()
    instance_keys: set[tuple[str, str]] = set()
    dim: int | None = None

    for doc in corpus.documents:
        if doc.doc_id in seen_docs:
            violations.append(f"duplicate doc_id: {doc.doc_id}")
        seen_docs.add(doc.doc_id)
        if not doc.instances:
            violations.append(f"document without instances: {doc.doc_id}")
        seen_inst: set[str] = set()
        for inst in doc.instances:
            if inst.instance_id in seen_inst:
                violations.append(
                    f"duplicate instance_id {inst.instance_id} in doc {doc.doc_id}"
                )
            seen_inst.add(inst.instance_id)
            instance_keys.add((doc.doc_id, inst.instance_id))
            if inst.features.ndim != 1:
                violations.append(
                    f"non-vector features on instance {inst.instance_id}"
                )
                continue
            if dim is None:
                dim = inst.features.shape[0]
            elif inst.features.shape[0] != dim:
                violations.append(
                    f"feature dimension mismatch on instance {inst.instance_id}: "
                    f"{inst.features.shape[0]} != {dim}"
                )
            if not np.all(np.isfinite(inst.features)):
                violations.append(
                    f"non-finite features on instance {inst.instance_id}"
                )

    def check_labels(labels, name):
        keys = set()
        for lab in labels:
            if (lab.doc_id, lab.instance_id) not in instance_keys:
                violations.append(
                    f"{name} label references missing instance: "
                    f"{lab.doc_id}/{lab.instance_id}"
                )
            if lab.class_id not in corpus.label_space:
                violations.append(
                    f"{name} label with unknown class_id: {lab.class_id}"
                )
            if lab.key in keys:
                violations.append(f"duplicate {name} label key: {lab.key}")
            keys.add(lab.key)

    check_labels(corpus.observed, "observed")
    if corpus.gold is not None:
        check_labels(corpus.gold, "gold")
    elif corpus.split_tag in ("dev", "test"):
        violations.append(f"{corpus.split_tag} corpus must carry gold labels")
    return violations


# ---------------------------------------------------------------------------
# Serialization (header line + one JSON object per document)
# ---------------------------------------------------------------------------


def _label_to_json(lab: TripleLabel) -> dict:
    return {
        "instance_id": lab.instance_id,
        "class_id": lab.class_id,
        "origin": lab.origin,
        "known_fact": lab.known_fact,
    }


def _labels_from_json(doc_id: str, rows) -> list[TripleLabel]:
    return [
        TripleLabel(
            doc_id=doc_id,
            instance_id=row["instance_id"],
            class_id=row["class_id"],
            origin=row["origin"],
            known_fact=bool(row["known_fact"]),
        )
        for row in rows
    ]


def _sorted_labels(labels) -> list[TripleLabel]:
    return sorted(labels, key=lambda lab: lab.key)


def write_corpus(corpus: Corpus, path) -> None:
    by_doc_obs: dict[str, list[TripleLabel]] = {}
    for lab in corpus.observed:
        by_doc_obs.setdefault(lab.doc_id, []).append(lab)
    by_doc_gold: dict[str, list[TripleLabel]] = {}
    if corpus.gold is not None:
        for lab in corpus.gold:
            by_doc_gold.setdefault(lab.doc_id, []).append(lab)

    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "label_space": {
                "classes": list(corpus.label_space.classes),
                "frequent_top_k": corpus.label_space.frequent_top_k,
            },
            "feature_dim": corpus.feature_dim,
            "split_tag": corpus.split_tag,
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for doc in corpus.documents:
            rec = {
                "doc_id": doc.doc_id,
                "instances": [
                    {
                        "instance_id": inst.instance_id,
                        "features": [float(x) for x in inst.features],
                        "fact_signature": inst.fact_signature,
                    }
                    for inst in doc.instances
                ],
                "observed": [
                    _label_to_json(lab)
                    for lab in _sorted_labels(by_doc_obs.get(doc.doc_id, []))
                ],
                "gold": None
                if corpus.gold is None
                else [
                    _label_to_json(lab)
                    for lab in _sorted_labels(by_doc_gold.get(doc.doc_id, []))
                ],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_corpus(path) -> Corpus:
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise ValueError(f"corpus file {path} has no header line")
        header = json.loads(header_line)
        label_space = LabelSpace(
            classes=tuple(header["label_space"]["classes"]),
            frequent_top_k=int(header["label_space"]["frequent_top_k"]),
        )
        documents: list[Document] = []
        observed: list[TripleLabel] = []
        gold: list[TripleLabel] = []
        has_gold = False
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            doc_id = rec["doc_id"]
            instances = tuple(
                EntityPairInstance(
                    instance_id=row["instance_id"],
                    features=np.array(row["features"], dtype=np.float64),
                    fact_signature=row["fact_signature"],
                )
                for row in rec["instances"]
            )
            documents.append(Document(doc_id=doc_id, instances=instances))
            observed.extend(_labels_from_json(doc_id, rec["observed"]))
            if rec["gold"] is not None:
                has_gold = True
                gold.extend(_labels_from_json(doc_id, rec["gold"]))
    return Corpus(
        label_space=label_space,
        documents=tuple(documents),
        observed=frozenset(observed),
        gold=frozenset(gold) if has_gold else None,
        split_tag=header["split_tag"],
    )


def corpus_equal(a: Corpus, b: Corpus) -> bool:
    return a == b


# ---------------------------------------------------------------------------
# Dense view used by the learner and engine
# ---------------------------------------------------------------------------


class CorpusIndex:
    """Row-aligned dense view of a corpus.

    Row i of X corresponds to keys[i] == (doc_id, instance_id).  Built once
    per corpus; training views and prediction batches slice into it.
    """

    def __init__(self, corpus: Corpus):
        self.corpus = corpus
        keys: list[tuple[str, str]] = []
        rows: list[np.ndarray] = []
        doc_rows: dict[str, np.ndarray] = {}
        fact_signatures: dict[tuple[str, str], str | None] = {}
        pos = 0
        for doc in corpus.documents:
            start = pos
            for inst in doc.instances:
                keys.append((doc.doc_id, inst.instance_id))
                rows.append(inst.features)
                fact_signatures[(doc.doc_id, inst.instance_id)] = inst.fact_signature
                pos += 1
            doc_rows[doc.doc_id] = np.arange(start, pos)
        self.keys = keys
        self.X = np.vstack(rows) if rows else np.zeros((0, 0))
        self.X.flags.writeable = False
        self.row_of = {k: i for i, k in enumerate(keys)}
        self.doc_rows = doc_rows
        self.fact_signatures = fact_signatures

    @property
    def label_space(self) -> LabelSpace:
        return self.corpus.label_space

    def rows_for_docs(self, doc_ids) -> np.ndarray:
        parts = [self.doc_rows[d] for d in doc_ids]
        if not parts:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(parts)

    def label_matrix(self, labels, rows: np.ndarray | None = None) -> np.ndarray:
        """Binary (n, C) matrix of the given labels, over all rows or a subset."""
        space = self.label_space
        if rows is None:
            Y = np.zeros((len(self.keys), len(space)), dtype=np.float64)
            for lab in labels:
                row = self.row_of.get((lab.doc_id, lab.instance_id))
                if row is not None:
                    Y[row, space.index_of(lab.class_id)] = 1.0
            return Y
        remap = {int(r): i for i, r in enumerate(rows)}
        Y = np.zeros((len(rows), len(space)), dtype=np.float64)
        for lab in labels:
            row = self.row_of.get((lab.doc_id, lab.instance_id))
            if row is not None:
                sub = remap.get(row)
                if sub is not None:
                    Y[sub, space.index_of(lab.class_id)] = 1.0
        return Y
