"""Labeled documents: ingestion, tokenization, preprocessing and encoding."""

import json
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import InputError, ParseError

PAD = 0
OOV = 1
SPLITS = ("train", "test")

_TOKEN_RE = re.compile(r"[^\W_]+")

# (suffix, replacement, minimum word length before stripping); first match wins.
# "ss" is a guard so that "class" does not lose its final s.
LEMMA_RULES = (
    ("sses", "ss", 0),
    ("ies", "y", 0),
    ("ss", "ss", 0),
    ("s", "", 4),
    ("ing", "", 6),
    ("ed", "", 5),
)


@dataclass(frozen=True)
class Document:
    label: str
    tokens: tuple
    split: str = "train"


@dataclass(frozen=True)
class Corpus:
    docs: tuple
    labels: tuple

    def __post_init__(self):
        known = set(self.labels)
        for d in self.docs:
            if d.label not in known:
                raise InputError(f"document label {d.label!r} not in label set")

    @classmethod
    def from_docs(cls, docs):
        docs = tuple(docs)
        return cls(docs, tuple(sorted({d.label for d in docs})))

    def split(self, name):
        return [d for d in self.docs if d.split == name]

    def label_index(self):
        return {label: i for i, label in enumerate(self.labels)}


@dataclass(frozen=True)
class TokenStats:
    """Occurrence counts over the (processed) train split."""

    counts: dict = field(default_factory=dict)

    @property
    def total(self):
        return sum(self.counts.values())

    def __len__(self):
        return len(self.counts)

    def ordered(self):
        """Words by descending count, ties broken lexicographically."""
        return sorted(self.counts, key=lambda w: (-self.counts[w], w))


def tokenize(text):
    return _TOKEN_RE.findall(text.lower())


def _doc(label, text, split, path, lineno):
    if split not in SPLITS:
        raise ParseError(f"unknown split {split!r}; expected one of {SPLITS}", path, lineno)
    return Document(label, tuple(tokenize(text)), split)


def _ingest_jsonl(path):
    docs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", path, lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", path, lineno)
            for key in ("label", "text"):
                if not isinstance(obj.get(key), str):
                    raise ParseError(f"missing or non-string field {key!r}", path, lineno)
            docs.append(_doc(obj["label"], obj["text"], obj.get("split", "train"), path, lineno))
    return docs


def _ingest_dirs(root):
    docs = []
    for split in sorted(os.listdir(root)):
        split_dir = os.path.join(root, split)
        if not os.path.isdir(split_dir):
            continue
        if split not in SPLITS:
            raise ParseError(f"unexpected split directory {split!r}", root)
        for label in sorted(os.listdir(split_dir)):
            label_dir = os.path.join(split_dir, label)
            if not os.path.isdir(label_dir):
                continue
            for name in sorted(os.listdir(label_dir)):
                doc_path = os.path.join(label_dir, name)
                if not os.path.isfile(doc_path):
                    continue
                with open(doc_path, encoding="utf-8", errors="replace") as f:
                    docs.append(_doc(label, f.read(), split, doc_path, None))
    return docs


def ingest(path, format="jsonl"):
    """Load a labeled corpus from a JSONL file or a ``split/label/doc`` tree."""
    try:
        if format == "jsonl":
            docs = _ingest_jsonl(path)
        elif format in ("labeled_dirs", "dirs"):
            docs = _ingest_dirs(path)
        else:
            raise InputError(f"unknown corpus format {format!r}")
    except OSError as exc:
        raise ParseError(f"cannot read corpus: {exc.strerror}", path) from None
    return Corpus.from_docs(docs)


def write_jsonl(corpus, path):
    with open(path, "w", encoding="utf-8") as f:
        for d in corpus.docs:
            f.write(json.dumps({"label": d.label, "split": d.split, "text": " ".join(d.tokens)},
                               ensure_ascii=False) + "\n")


def load_stopwords(path=None):
    """Read a stopword file (one word per line, ``#`` comments); default list if ``path`` is None."""
    if path is None:
        text = resources.files("rankvocab").joinpath("data/stopwords.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    words = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            words.add(line)
    return frozenset(words)


def _strip_once(word):
    for suffix, repl, min_len in LEMMA_RULES:
        if word.endswith(suffix) and len(word) >= min_len:
            return word[: len(word) - len(suffix)] + repl
    return word


def lemmatize(word):
    """Suffix-rule lemmatizer, applied until the word stops changing.

    Approximate by design: "cats" -> "cat", "studies" -> "study",
    "running" -> "runn".
    """
    while True:
        out = _strip_once(word)
        if out == word:
            return word
        word = out


def process_tokens(tokens, stopwords):
    out = []
    for t in tokens:
        if t in stopwords:
            continue
        lemma = lemmatize(t)
        if lemma and lemma not in stopwords:
            out.append(lemma)
    return tuple(out)


def count_tokens(corpus):
    return TokenStats(dict(Counter(t for d in corpus.split("train") for t in d.tokens)))


def preprocess(corpus, stopwords, min_count=1):
    """Drop stopwords, lemmatize, and count the train split.

    Returns ``(processed, stats, candidates)``. Candidates are the words with
    at least ``min_count`` train occurrences, most frequent first. Infrequent
    words stay in the documents; they simply fall out of every vocabulary.
    """
    if min_count < 1:
        raise InputError(f"min_count must be >= 1, got {min_count}")
    processed = Corpus(
        tuple(Document(d.label, process_tokens(d.tokens, stopwords), d.split) for d in corpus.docs),
        corpus.labels,
    )
    stats = count_tokens(processed)
    candidates = [w for w in stats.ordered() if stats.counts[w] >= min_count]
    return processed, stats, candidates


def build_index(vocab):
    """Map vocabulary words to model row indices; 0 and 1 are pad and OOV."""
    index = {}
    for i, w in enumerate(vocab):
        if w in index:
            raise InputError(f"duplicate vocabulary word {w!r}")
        index[w] = i + 2
    return index


def encode(doc, vocab, maxlen):
    tokens = doc.tokens if isinstance(doc, Document) else doc
    out = np.zeros(maxlen, dtype=np.int64)
    ids = [vocab.get(t, OOV) for t in tokens[:maxlen]]
    out[: len(ids)] = ids
    return out


def encode_all(docs, vocab, maxlen):
    if not docs:
        return np.zeros((0, maxlen), dtype=np.int64)
    return np.stack([encode(d, vocab, maxlen) for d in docs])


def write_counts(stats, path, words=None):
    words = stats.ordered() if words is None else words
    with open(path, "w", encoding="utf-8") as f:
        for w in words:
            f.write(f"{w}\t{stats.counts[w]}\n")


def read_counts(path):
    counts = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("expected word<TAB>count", path, lineno)
            try:
                counts[parts[0]] = int(parts[1])
            except ValueError:
                raise ParseError(f"bad count {parts[1]!r}", path, lineno) from None
    return TokenStats(counts)
