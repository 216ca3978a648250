"""Pretrained word vectors: loading, restriction to a vocabulary, pair metrics."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ParseError

logger = logging.getLogger(__name__)

METRICS = ("cosine", "distance_kernel")


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Immutable word -> vector table.

    ``matrix`` row ``i`` is the vector of ``words[i]``; ``index`` is the
    inverse mapping.
    """

    dim: int
    words: tuple
    matrix: np.ndarray
    index: dict = field(repr=False)
    duplicates: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise InputError(f"dim must be positive, got {self.dim}")
        if self.matrix.shape != (len(self.words), self.dim):
            raise InputError(
                f"matrix shape {self.matrix.shape} does not match "
                f"{len(self.words)} words x dim {self.dim}"
            )
        if len(self.index) != len(self.words):
            raise InputError("duplicate words in table")
        self.matrix.setflags(write=False)

    @classmethod
    def from_rows(cls, words, matrix, duplicates=0):
        words = tuple(words)
        matrix = np.array(matrix, dtype=np.float64)
        return cls(matrix.shape[1], words, matrix, {w: i for i, w in enumerate(words)}, duplicates)

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index

    def __getitem__(self, word):
        return self.matrix[self.index[word]]

    def __eq__(self, other):
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.words == other.words
            and np.array_equal(self.matrix, other.matrix)
        )

    __hash__ = None


def _is_header(tokens):
    if len(tokens) != 2:
        return False
    return all(t.isdigit() for t in tokens)


def load_embeddings(path, dim=100):
    """Read a whitespace-separated text vector file (GloVe layout).

    A leading ``count dim`` header line is skipped. Duplicate words keep
    their first vector; each one is logged as a warning and counted in
    ``table.duplicates``.
    """
    words = []
    rows = []
    seen = set()
    duplicates = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if lineno == 1 and _is_header(tokens):
                continue
            if len(tokens) != dim + 1:
                raise ParseError(
                    f"expected word plus {dim} values, got {len(tokens)} tokens",
                    path, lineno,
                )
            word = tokens[0]
            try:
                vec = [float(t) for t in tokens[1:]]
            except ValueError as exc:
                raise ParseError(f"non-numeric value ({exc})", path, lineno) from None
            if not all(np.isfinite(vec)):
                raise ParseError("non-finite value", path, lineno)
            if word in seen:
                duplicates += 1
                logger.warning("%s:%d: duplicate word %r ignored", path, lineno, word)
                continue
            seen.add(word)
            words.append(word)
            rows.append(vec)
    if not words:
        raise ParseError("no vectors found (empty file)", path)
    return EmbeddingTable.from_rows(words, rows, duplicates)


def save_embeddings(table, path):
    # repr() round-trips float64 exactly
    with open(path, "w", encoding="utf-8") as f:
        for word, row in zip(table.words, table.matrix):
            f.write(word + " " + " ".join(repr(float(x)) for x in row) + "\n")


def vector_metric(u, v, metric="cosine"):
    """Similarity in [0, 1] between two vectors.

    ``cosine`` is the cosine clipped below at 0. ``distance_kernel`` is
    ``1 / (1 + ||u - v||)``, the single-word case of word mover's distance
    turned into a similarity.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise InputError(f"vector shapes differ: {u.shape} vs {v.shape}")
    if metric == "cosine":
        nu = np.linalg.norm(u)
        nv = np.linalg.norm(v)
        if nu == 0.0 or nv == 0.0:
            raise InputError("cosine similarity of a zero vector is undefined")
        c = float(np.dot(u, v) / (nu * nv))
        return min(max(c, 0.0), 1.0)
    if metric == "distance_kernel":
        return 1.0 / (1.0 + float(np.linalg.norm(u - v)))
    raise InputError(f"unknown metric {metric!r}; expected one of {METRICS}")


def sub_table(table, vocab):
    """Restrict ``table`` to ``vocab`` (in vocab order).

    Returns ``(table, missing)`` where ``missing`` lists vocab words the
    table has no vector for.
    """
    rows = []
    kept = []
    missing = []
    for w in vocab:
        i = table.index.get(w)
        if i is None:
            missing.append(w)
        else:
            kept.append(w)
            rows.append(i)
    matrix = table.matrix[rows] if rows else np.zeros((0, table.dim))
    sub = EmbeddingTable(table.dim, tuple(kept), np.array(matrix), {w: i for i, w in enumerate(kept)})
    return sub, missing
