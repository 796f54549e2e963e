"""Reference base learner: linear one-vs-rest with sigmoid outputs.

The learner trains one weight vector and bias per class with mini-batch
SGD on binary cross-entropy over (instance, class) pairs.  Negative
sampling (rate gamma < 1) masks out a random subset of the negative pairs
from the loss; the mask is drawn once at training start.  Anything that
implements train/predict/score against the same view types can stand in
for it inside the engine.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import CorpusIndex, LabelSpace, SeedStream, TripleLabel, pseudo_origin

BATCH_SIZE = 32

MULTI_LABEL = "multi_label"
SINGLE_LABEL = "single_label"


@dataclass(frozen=True)
class LearnerConfig:
    epochs: int = 10
    learning_rate: float = 1.0
    l2: float = 0.0
    decision_threshold: float = 0.5
    decision_mode: str = MULTI_LABEL
    negative_sampling_rate: float = 1.0
    seed: SeedStream = SeedStream(0)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if not 0.0 < self.decision_threshold < 1.0:
            raise ValueError("decision_threshold must be in (0, 1)")
        if self.decision_mode not in (MULTI_LABEL, SINGLE_LABEL):
            raise ValueError(f"unknown decision_mode: {self.decision_mode!r}")
        if not 0.0 < self.negative_sampling_rate <= 1.0:
            raise ValueError("negative_sampling_rate must be in (0, 1]")


@dataclass(frozen=True, eq=False)
class LearnerModel:
    weights: np.ndarray  # (C, d)
    biases: np.ndarray  # (C,)
    label_space: LabelSpace

    def __post_init__(self):
        self.weights.flags.writeable = False
        self.biases.flags.writeable = False


@dataclass(frozen=True, eq=False)
class TrainView:
    """Dense training inputs: features X (n, d) and observed labels Y (n, C)."""

    X: np.ndarray
    Y: np.ndarray
    label_space: LabelSpace

    @classmethod
    def from_index(cls, index: CorpusIndex, annotation, rows=None) -> "TrainView":
        if rows is None:
            X = index.X
        else:
            X = index.X[rows]
        Y = index.label_matrix(annotation, rows=rows)
        return cls(X=X, Y=Y, label_space=index.label_space)

    @property
    def n(self) -> int:
        return int(self.X.shape[0])


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def loss_and_gradients(W, b, X, Y, mask=None, l2=0.0):
    """Mean-per-instance masked BCE and its analytic gradients.

    loss = (1/n) sum_i sum_c m_ic * (softplus(z_ic) - y_ic * z_ic)
         + (l2/2) * ||W||^2,  z = X W^T + b
    """
    n = X.shape[0]
    Z = X @ W.T + b
    terms = _softplus(Z) - Y * Z
    if mask is not None:
        terms = terms * mask
    loss = terms.sum() / n + 0.5 * l2 * float((W * W).sum())
    G = sigmoid(Z) - Y
    if mask is not None:
        G = G * mask
    grad_W = G.T @ X / n + l2 * W
    grad_b = G.sum(axis=0) / n
    return loss, grad_W, grad_b


def train(view: TrainView, cfg: LearnerConfig) -> LearnerModel:
    """Mini-batch SGD over the view; deterministic given cfg.seed."""
    if view.n == 0:
        raise ValueError("empty training view")
    X, Y = view.X, view.Y
    n, d = X.shape
    C = len(view.label_space)
    if Y.shape != (n, C):
        raise ValueError(f"label matrix shape {Y.shape} != ({n}, {C})")

    gamma = cfg.negative_sampling_rate
    if gamma < 1.0:
        mask_gen = cfg.seed.derive("negative_mask").generator()
        mask = np.where(Y > 0, 1.0, (mask_gen.random((n, C)) < gamma) * 1.0)
    else:
        mask = None

    W = np.zeros((C, d))
    b = np.zeros(C)
    lr = cfg.learning_rate
    for epoch in range(cfg.epochs):
        order = cfg.seed.derive("shuffle", epoch).generator().permutation(n)
        for start in range(0, n, BATCH_SIZE):
            rows = order[start : start + BATCH_SIZE]
            Xb = X[rows]
            Zb = Xb @ W.T + b
            G = sigmoid(Zb) - Y[rows]
            if mask is not None:
                G = G * mask[rows]
            m = rows.shape[0]
            W -= lr * (G.T @ Xb / m + cfg.l2 * W)
            b -= lr * (G.sum(axis=0) / m)
        loss, _, _ = loss_and_gradients(W, b, X, Y, mask, cfg.l2)
        if not np.isfinite(loss):
            raise RuntimeError(f"non-finite loss at epoch {epoch + 1}")
    return LearnerModel(weights=W, biases=b, label_space=view.label_space)


def score_matrix(model: LearnerModel, X: np.ndarray) -> np.ndarray:
    if X.shape[-1] != model.weights.shape[1]:
        raise ValueError(
            f"feature dimension {X.shape[-1]} != model dimension "
            f"{model.weights.shape[1]}"
        )
    return sigmoid(X @ model.weights.T + model.biases)


def score(model: LearnerModel, features: np.ndarray) -> np.ndarray:
    """Per-class sigmoid scores for a single instance."""
    return score_matrix(model, np.asarray(features, dtype=np.float64)[None, :])[0]


def predict_rows(
    model: LearnerModel,
    index: CorpusIndex,
    rows: np.ndarray,
    decision_mode: str = MULTI_LABEL,
    threshold: float = 0.5,
    round_index: int = 1,
) -> frozenset[TripleLabel]:
    """Positive predictions (origin pseudo) for the given corpus rows.

    multi_label emits every class whose score exceeds the threshold;
    single_label emits at most the argmax class, ties resolved toward the
    earlier class in label-space order.
    """
    S = score_matrix(model, index.X[rows])
    space = model.label_space
    origin = pseudo_origin(round_index)
    out = []
    if decision_mode == MULTI_LABEL:
        hit_rows, hit_cols = np.nonzero(S > threshold)
        for i, c in zip(hit_rows.tolist(), hit_cols.tolist()):
            doc_id, inst_id = index.keys[int(rows[i])]
            out.append(TripleLabel(doc_id, inst_id, space.classes[c], origin=origin))
    elif decision_mode == SINGLE_LABEL:
        best = np.argmax(S, axis=1)  # first max wins, matching class order
        for i, c in enumerate(best.tolist()):
            if S[i, c] > threshold:
                doc_id, inst_id = index.keys[int(rows[i])]
                out.append(
                    TripleLabel(doc_id, inst_id, space.classes[c], origin=origin)
                )
    else:
        raise ValueError(f"unknown decision_mode: {decision_mode!r}")
    return frozenset(out)


def predict_corpus(
    model: LearnerModel,
    index: CorpusIndex,
    decision_mode: str = MULTI_LABEL,
    threshold: float = 0.5,
    round_index: int = 1,
) -> frozenset[TripleLabel]:
    rows = np.arange(len(index.keys))
    return predict_rows(model, index, rows, decision_mode, threshold, round_index)


# ---------------------------------------------------------------------------
# Model persistence: {class_id -> {"weights": [...], "bias": x}}
# ---------------------------------------------------------------------------


def model_to_json_dict(model: LearnerModel) -> dict:
    return {
        cid: {
            "weights": [float(x) for x in model.weights[i]],
            "bias": float(model.biases[i]),
        }
        for i, cid in enumerate(model.label_space.classes)
    }


def save_model(model: LearnerModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json_dict(model), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_model(path, label_space: LabelSpace) -> LearnerModel:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    missing = [c for c in label_space.classes if c not in data]
    if missing:
        raise ValueError(f"model file missing classes: {missing}")
    W = np.array([data[c]["weights"] for c in label_space.classes])
    b = np.array([data[c]["bias"] for c in label_space.classes])
    return LearnerModel(weights=W, biases=b, label_space=label_space)
