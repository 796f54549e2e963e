"""Synthetic corpus generation and DocRED-format ingestion.

The generator builds gold multi-label corpora whose class frequencies
follow a Zipf law, then injects false negatives by dropping observed
labels at a configurable rate.  Features are class prototypes plus
Gaussian noise, so learner quality is controlled by the noise scale.
Ingestion turns DocRED-style JSON into the same corpus types with a
hashed bag-of-features stand-in for a real encoder.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    Corpus,
    Document,
    EntityPairInstance,
    LabelSpace,
    SeedStream,
    TripleLabel,
)

log = logging.getLogger(__name__)

TRAIN_FRACTION = 0.8  # remainder split evenly between dev and test


@dataclass(frozen=True)
class GeneratorConfig:
    num_docs: int = 600
    classes: int = 20
    feature_dim: int = 64
    zipf_exponent: float = 1.5
    pairs_per_doc: int = 30
    target_na_rate: float = 0.95
    multi_label_rate: float = 0.15
    noise_sigma: float = 0.4
    drop_rate: float | tuple[float, ...] = 0.5
    dev_drop_rate: float = 0.0
    seed: SeedStream = SeedStream(0)
    known_fact_overlap: float = 0.3
    frequent_top_k: int = 5

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("classes must be >= 2")
        if self.pairs_per_doc < 1:
            raise ValueError("pairs_per_doc must be >= 1")
        if self.num_docs < 10:
            raise ValueError("num_docs must be >= 10 to split train/dev/test")
        if self.zipf_exponent <= 0:
            raise ValueError("zipf_exponent must be > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        for name in ("target_na_rate", "multi_label_rate", "dev_drop_rate",
                     "known_fact_overlap"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        drops = self.drop_rates()
        if len(drops) != self.classes:
            raise ValueError(
                f"per-class drop_rate needs {self.classes} entries, "
                f"got {len(drops)}"
            )
        if any(not 0.0 <= d <= 1.0 for d in drops):
            raise ValueError("drop rates must be in [0, 1]")
        if not 0 <= self.frequent_top_k <= self.classes:
            raise ValueError("frequent_top_k must be in [0, classes]")
        # smallest split must be able to carry at least one positive
        smallest = self.num_docs - int(self.num_docs * TRAIN_FRACTION)
        expected = (smallest // 2) * self.pairs_per_doc * (1 - self.target_na_rate)
        if expected < 1.0:
            raise ValueError(
                "target_na_rate and pairs_per_doc cannot realize at least "
                "one positive per corpus"
            )

    def drop_rates(self) -> tuple[float, ...]:
        if isinstance(self.drop_rate, (int, float)):
            return (float(self.drop_rate),) * self.classes
        return tuple(float(d) for d in self.drop_rate)


def _zipf_probs(classes: int, exponent: float) -> np.ndarray:
    ranks = np.arange(1, classes + 1, dtype=np.float64)
    w = ranks ** (-exponent)
    return w / w.sum()


def _generate_split(cfg, split_tag, num_docs, prototypes, probs, gen):
    """Gold documents and labels for one split, drawn sequentially from gen."""
    d = cfg.feature_dim
    # noise_sigma is the expected norm of the noise vector, so the
    # per-coordinate std is noise_sigma / sqrt(d); prototypes are unit norm
    # and the signal-to-noise ratio is then controlled by noise_sigma alone.
    coord_sigma = cfg.noise_sigma / np.sqrt(d)
    docs = []
    gold = []
    for di in range(num_docs):
        doc_id = f"{split_tag}-d{di:04d}"
        instances = []
        for pi in range(cfg.pairs_per_doc):
            inst_id = f"p{pi:03d}"
            sig = f"fact:{split_tag}:{di:04d}:{pi:03d}"
            feats = gen.normal(0.0, coord_sigma, size=d)
            if gen.random() >= cfg.target_na_rate:
                first = int(gen.choice(cfg.classes, p=probs))
                chosen = [first]
                if gen.random() < cfg.multi_label_rate:
                    second = int(gen.choice(cfg.classes, p=probs))
                    while second == first:
                        second = int(gen.choice(cfg.classes, p=probs))
                    chosen.append(second)
                for c in chosen:
                    feats = feats + prototypes[c]
                    gold.append(
                        TripleLabel(doc_id, inst_id, f"c{c:02d}")
                    )
            instances.append(
                EntityPairInstance(
                    instance_id=inst_id, features=feats, fact_signature=sig
                )
            )
        docs.append(Document(doc_id=doc_id, instances=tuple(instances)))
    return docs, gold


def _drop_labels(labels, rate_of_class, gen) -> list[TripleLabel]:
    """Independent false-negative injection; visits labels in sorted order."""
    kept = []
    for lab in sorted(labels, key=lambda lab: lab.key):
        rate = rate_of_class(lab.class_id)
        if rate <= 0.0:
            kept.append(lab)
        elif rate >= 1.0:
            continue
        elif gen.random() >= rate:
            kept.append(lab)
    return kept


def _flag_known_facts(labels, overlap, gen) -> list[TripleLabel]:
    out = []
    for lab in sorted(labels, key=lambda lab: lab.key):
        flag = overlap > 0.0 and gen.random() < overlap
        out.append(replace(lab, known_fact=flag) if flag else lab)
    return out


def generate(cfg: GeneratorConfig) -> tuple[Corpus, Corpus, Corpus]:
    """Build (train, dev, test) corpora from the config's seed stream.

    Train observed labels are the gold labels thinned by drop_rate; dev
    observed is thinned by dev_drop_rate (identical mechanism) while dev
    gold stays clean.  A known_fact_overlap fraction of dev/test gold
    triples is flagged as already-known facts.
    """
    space = LabelSpace(
        classes=tuple(f"c{i:02d}" for i in range(cfg.classes)),
        frequent_top_k=cfg.frequent_top_k,
    )
    probs = _zipf_probs(cfg.classes, cfg.zipf_exponent)
    proto_gen = cfg.seed.derive("prototypes").generator()
    prototypes = proto_gen.normal(size=(cfg.classes, cfg.feature_dim))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)

    n_train = int(cfg.num_docs * TRAIN_FRACTION)
    n_rest = cfg.num_docs - n_train
    n_dev = n_rest // 2
    n_test = n_rest - n_dev
    sizes = {"train": n_train, "dev": n_dev, "test": n_test}

    drops = dict(zip((f"c{i:02d}" for i in range(cfg.classes)), cfg.drop_rates()))

    corpora = {}
    for si, split_tag in enumerate(("train", "dev", "test")):
        gen = cfg.seed.derive("split", si).generator()
        docs, gold = _generate_split(
            cfg, split_tag, sizes[split_tag], prototypes, probs, gen
        )
        if split_tag in ("dev", "test"):
            gold = _flag_known_facts(
                gold, cfg.known_fact_overlap,
                cfg.seed.derive("known_fact", si).generator(),
            )
        if split_tag == "train":
            observed = _drop_labels(
                gold, lambda c: drops[c], cfg.seed.derive("drop_train").generator()
            )
        elif split_tag == "dev" and cfg.dev_drop_rate > 0.0:
            observed = _drop_labels(
                gold,
                lambda c: cfg.dev_drop_rate,
                cfg.seed.derive("drop_dev").generator(),
            )
        else:
            observed = list(gold)
        corpora[split_tag] = Corpus(
            label_space=space,
            documents=tuple(docs),
            observed=frozenset(observed),
            gold=frozenset(gold),
            split_tag=split_tag,
        )
    return corpora["train"], corpora["dev"], corpora["test"]


def class_frequency_table(corpus: Corpus, source: str = "observed") -> dict[str, int]:
    """Exhaustive per-class label counts; absent classes count 0."""
    if source == "observed":
        labels = corpus.observed
    elif source == "gold":
        if corpus.gold is None:
            raise ValueError("corpus carries no gold labels")
        labels = corpus.gold
    else:
        raise ValueError(f"source must be observed or gold, got {source!r}")
    table = {c: 0 for c in corpus.label_space.classes}
    for lab in labels:
        table[lab.class_id] += 1
    return table


def na_rate(corpus: Corpus, source: str = "gold") -> float:
    """Fraction of instances with no positive label in the given annotation."""
    labels = corpus.gold if source == "gold" else corpus.observed
    positive = {(lab.doc_id, lab.instance_id) for lab in labels or ()}
    total = corpus.num_instances()
    return 1.0 - len(positive) / total if total else 1.0


# ---------------------------------------------------------------------------
# DocRED-format ingestion
# ---------------------------------------------------------------------------

_DIST_BUCKETS = (0, 1, 2, 3, 4, 8, 16, 32)


def _bucket(value: int) -> str:
    for b in _DIST_BUCKETS:
        if value <= b:
            return str(b)
    return f">{_DIST_BUCKETS[-1]}"


def _hash_feature(text: str, dim: int) -> tuple[int, float]:
    h = int.from_bytes(
        hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little"
    )
    sign = 1.0 if h & 1 else -1.0
    return (h >> 1) % dim, sign


def ingest_docred_json(
    path,
    featurization: str = "hashed_bow",
    feature_dim: int = 64,
    label_space: list[str] | None = None,
    frequent_top_k: int | None = None,
    split_tag: str = "train",
) -> Corpus:
    """Read a DocRED-style JSON file into a corpus.

    One instance per ordered entity pair; features hash (head type, tail
    type, token-distance bucket, sentence-distance bucket) into
    feature_dim dimensions.  Pass label_space to pin the relation ids
    (unknown ids in the file then fail with a validation error); without
    it the ids found in the file are used, in sorted order.  Documents
    with fewer than two entities host no pairs and are skipped.
    """
    if featurization != "hashed_bow":
        raise ValueError(f"unknown featurization: {featurization!r}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ValueError(
                f"malformed JSON at line {e.lineno}: {e.msg}"
            ) from e
    if not isinstance(data, list):
        raise ValueError("DocRED file must contain a JSON array of documents")

    found_relations = sorted(
        {lab["r"] for doc in data for lab in doc.get("labels", [])}
    )
    if label_space is None:
        classes = found_relations
        if not classes:
            raise ValueError(
                "no relation ids found in file; pass label_space explicitly"
            )
    else:
        classes = list(label_space)
        unknown = sorted(set(found_relations) - set(classes))
        if unknown:
            raise ValueError(f"unknown relation ids: {unknown}")
    space = LabelSpace(
        classes=tuple(classes),
        frequent_top_k=min(
            len(classes) if frequent_top_k is None else frequent_top_k, len(classes)
        ),
    )

    documents = []
    labels: set[TripleLabel] = set()
    for doc_pos, doc in enumerate(data):
        vertex_set = doc["vertexSet"]
        sents = doc["sents"]
        doc_id = str(doc.get("title", f"doc{doc_pos:05d}"))
        if len(vertex_set) < 2:
            log.debug("skipping %s: fewer than two entities", doc_id)
            continue
        sent_offsets = np.cumsum([0] + [len(s) for s in sents])

        def mention_info(entity):
            m = entity[0]  # first mention is the canonical one
            token_pos = int(sent_offsets[m["sent_id"]]) + int(m["pos"][0])
            return m["name"], m.get("type", "UNK"), m["sent_id"], token_pos

        instances = []
        for h in range(len(vertex_set)):
            for t in range(len(vertex_set)):
                if h == t:
                    continue
                h_name, h_type, h_sent, h_tok = mention_info(vertex_set[h])
                t_name, t_type, t_sent, t_tok = mention_info(vertex_set[t])
                feats = np.zeros(feature_dim)
                for feat in (
                    f"head_type={h_type}",
                    f"tail_type={t_type}",
                    f"token_dist={_bucket(abs(h_tok - t_tok))}",
                    f"sent_dist={_bucket(abs(h_sent - t_sent))}",
                ):
                    idx, sign = _hash_feature(feat, feature_dim)
                    feats[idx] += sign
                instances.append(
                    EntityPairInstance(
                        instance_id=f"{h}-{t}",
                        features=feats,
                        fact_signature=f"{h_name}||{t_name}",
                    )
                )
        documents.append(Document(doc_id=doc_id, instances=tuple(instances)))
        for lab in doc.get("labels", []):
            labels.add(
                TripleLabel(
                    doc_id=doc_id,
                    instance_id=f"{lab['h']}-{lab['t']}",
                    class_id=lab["r"],
                )
            )
    return Corpus(
        label_space=space,
        documents=tuple(documents),
        observed=frozenset(labels),
        gold=None,
        split_tag=split_tag,
    )
