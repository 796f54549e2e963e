"""Self-training for multi-label classification under incomplete annotation.

The package provides a synthetic corpus generator with false-negative
injection, a linear one-vs-rest reference learner, an evaluation suite
(micro / ignore / frequent / long-tail F1), pseudo-label re-sampling
strategies, and the round/fold self-training engine that ties them
together.
"""

__version__ = "0.1.0"

from .core import (
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

__all__ = [
    "Corpus",
    "CorpusIndex",
    "Document",
    "EntityPairInstance",
    "LabelSpace",
    "SeedStream",
    "TripleLabel",
    "derive_stream",
    "pseudo_origin",
    "read_corpus",
    "validate_corpus",
    "write_corpus",
    "__version__",
]
