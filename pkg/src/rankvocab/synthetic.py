"""Synthetic separable corpora and matching embeddings for demos and tests.

Each class draws its content words from its own disjoint word list; a few
shared filler words appear in every class. Word vectors are clustered per
class, so the classes are separable both in token space and in embedding
space.
"""

import numpy as np

from . import rng as rngmod
from .corpus import Corpus, Document
from .embed_store import EmbeddingTable


def class_words(label_id, n):
    return [f"c{label_id}w{i}" for i in range(n)]


def filler_words(n):
    return [f"fz{i}" for i in range(n)]


def synthetic_corpus(n_docs=200, n_classes=2, words_per_class=30, n_filler=10,
                     doc_len=(6, 16), filler_rate=0.3, test_fraction=0.2, seed=0):
    gen = rngmod.stream(seed, "synthetic_corpus")
    fillers = filler_words(n_filler)
    docs = []
    n_test = int(round(n_docs * test_fraction))
    for i in range(n_docs):
        label = i % n_classes
        words = class_words(label, words_per_class)
        length = int(gen.integers(doc_len[0], doc_len[1] + 1))
        tokens = []
        for _ in range(length):
            if fillers and gen.random() < filler_rate:
                tokens.append(fillers[int(gen.integers(len(fillers)))])
            else:
                tokens.append(words[int(gen.integers(len(words)))])
        if not any(t in words for t in tokens):
            tokens[0] = words[0]
        split = "test" if i >= n_docs - n_test else "train"
        docs.append(Document(f"class{label}", tuple(tokens), split))
    return Corpus.from_docs(docs)


def synthetic_embeddings(n_classes=2, words_per_class=30, n_filler=10, dim=16, radius=4.0, spread=1.0, seed=0):
    gen = rngmod.stream(seed, "synthetic_embeddings")
    centers = gen.normal(size=(n_classes + 1, dim))
    centers *= radius / np.linalg.norm(centers, axis=1, keepdims=True)
    words, rows = [], []
    for c in range(n_classes):
        for w in class_words(c, words_per_class):
            words.append(w)
            rows.append(centers[c] + spread * gen.normal(size=dim) / np.sqrt(dim))
    for w in filler_words(n_filler):
        words.append(w)
        rows.append(centers[n_classes] + spread * gen.normal(size=dim) / np.sqrt(dim))
    return EmbeddingTable.from_rows(words, np.array(rows))

