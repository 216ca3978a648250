"""Training, evaluation, baselines, and the vocabulary-selection comparison."""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as M
from . import rng as rngmod
from . import tensor as T
from . import wordrank as W
from .corpus import PAD, TokenStats, build_index, encode_all
from .errors import InputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InputError("epochs and batch_size must be >= 1")
        if self.lr < 0:
            raise InputError(f"lr must be >= 0, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0 and self.adam_eps > 0):
            raise InputError("invalid Adam hyperparameters")


class Adam:
    """Adam on a dict of tensors; ``frozen_rows[name]`` rows never move."""

    def __init__(self, tensors, config, frozen_rows=None):
        self.tensors = {k: t for k, t in tensors.items() if t.requires_grad}
        self.cfg = config
        self.frozen_rows = frozen_rows or {}
        self.m = {k: np.zeros_like(t.data) for k, t in self.tensors.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self.tensors.items()}
        self.t = 0

    def step(self):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for name, p in self.tensors.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            rows = self.frozen_rows.get(name)
            if rows is not None:
                g = g.copy()
                g[rows] = 0.0
            m, v = self.m[name], self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            update = c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.adam_eps)
            if rows is not None:
                update[rows] = 0.0
            p.data -= update


@dataclass
class RunReport:
    method: str = "textcnn_attention"
    params_total: int = 0
    epoch_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    test_accuracy: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    attention_means: dict = field(default_factory=dict)

    @property
    def final_train_accuracy(self):
        return self.train_accuracy[-1] if self.train_accuracy else None

    @property
    def final_test_accuracy(self):
        return self.test_accuracy[-1] if self.test_accuracy else None

    @property
    def seconds_per_epoch(self):
        return float(np.mean(self.epoch_seconds)) if self.epoch_seconds else 0.0

    def write_tsv(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("epoch\ttrain_loss\ttrain_accuracy\ttest_accuracy\tseconds\n")
            for i, loss in enumerate(self.epoch_loss):
                test = self.test_accuracy[i] if self.test_accuracy else None
                f.write(f"{i + 1}\t{loss!r}\t{self.train_accuracy[i]!r}\t"
                        f"{'' if test is None else repr(test)}\t{self.epoch_seconds[i]:.6f}\n")

    def write_log(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"method={self.method}\n")
            f.write(f"params_total={self.params_total}\n")
            f.write(f"epochs={len(self.epoch_loss)}\n")
            f.write(f"final_train_loss={self.epoch_loss[-1]!r}\n")
            f.write(f"final_train_accuracy={self.final_train_accuracy!r}\n")
            if self.test_accuracy:
                f.write(f"final_test_accuracy={self.final_test_accuracy!r}\n")
            f.write(f"seconds_per_epoch={self.seconds_per_epoch:.6f}\n")
            for h, a in self.attention_means.items():
                f.write(f"attention_mean.h{h}={a!r}\n")


# A classifier here is anything with ``tensors`` (name -> Tensor),
# ``frozen_rows`` (name -> row indices Adam must not move) and
# ``logits(example, mode, rng) -> Tensor``.

class _TextCNN:
    def __init__(self, params, config, seed):
        self.params = params
        self.config = config
        self.tensors = params.tensors
        self.frozen_rows = {"embedding": [PAD]}
        self.seed = seed

    def logits(self, seq, mode, rng):
        return M.forward_doc(self.params, self.config, seq, mode, rng).logits


def _shuffle(n, seed, epoch):
    return rngmod.stream(seed, "shuffle", epoch).permutation(n)


def _accuracy(clf, examples, labels):
    if len(examples) == 0:
        raise InputError("cannot evaluate an empty split")
    pred = np.array([int(np.argmax(clf.logits(x, "eval", None).data)) for x in examples])
    return float(np.mean(pred == np.asarray(labels)))


def _fit(clf, train_x, train_y, test_x, test_y, tc, report):
    if len(train_x) == 0:
        raise InputError("empty train split")
    opt = Adam(clf.tensors, tc, clf.frozen_rows)
    n = len(train_x)
    n_batches = math.ceil(n / tc.batch_size)
    for epoch in range(tc.epochs):
        t0 = time.perf_counter()
        order = _shuffle(n, tc.seed, epoch)
        total = 0.0
        for b in range(n_batches):
            idx = order[b * tc.batch_size:(b + 1) * tc.batch_size]
            batch_id = epoch * n_batches + b
            with T.Tape() as tape:
                losses = []
                for j, i in enumerate(idx):
                    rng = M.dropout_stream(tc.seed, batch_id, j)
                    losses.append(T.cross_entropy(clf.logits(train_x[i], "train", rng), int(train_y[i])))
                loss = T.mean(losses)
                tape.backward(loss)
            opt.step()
            total += loss.item() * len(idx)
        report.epoch_loss.append(total / n)
        report.epoch_seconds.append(time.perf_counter() - t0)
        report.train_accuracy.append(_accuracy(clf, train_x, train_y))
        if len(test_x):
            report.test_accuracy.append(_accuracy(clf, test_x, test_y))
        logger.info("epoch %d loss %.6f train_acc %.4f", epoch + 1, report.epoch_loss[-1],
                    report.train_accuracy[-1])
    return report


def _labels(corpus, docs):
    index = corpus.label_index()
    return np.array([index[d.label] for d in docs], dtype=np.int64)


def attention_means(params, config, seqs):
    if len(seqs) == 0:
        return {}
    alphas = np.array([t.alpha for t in M.forward(params, config, seqs)])
    return {h: float(a) for h, a in zip(config.filter_sizes, alphas.mean(axis=0))}


def train(params, config, corpus, vocab, tc):
    """Train the attention TextCNN in place; returns ``(params, report)``."""
    if not vocab:
        raise InputError("empty vocabulary")
    if len(vocab) != config.vocab_size:
        raise InputError(f"vocabulary has {len(vocab)} words but vocab_size={config.vocab_size}")
    index = build_index(vocab)
    train_docs, test_docs = corpus.split("train"), corpus.split("test")
    train_x = encode_all(train_docs, index, config.maxlen)
    test_x = encode_all(test_docs, index, config.maxlen)
    report = RunReport("textcnn_attention", M.count_params(config)["total"])
    clf = _TextCNN(params, config, tc.seed)
    _fit(clf, train_x, _labels(corpus, train_docs), test_x, _labels(corpus, test_docs), tc, report)
    report.attention_means = attention_means(params, config, train_x)
    return params, report


def evaluate(params, config, docs, vocab, labels):
    """Fraction of ``docs`` whose argmax logit is the label (class indices or names)."""
    if not docs:
        raise InputError("cannot evaluate an empty split")
    seqs = encode_all(docs, build_index(vocab), config.maxlen)
    pred = M.predict(params, config, seqs)
    return float(np.mean(pred == np.asarray(labels)))


def evaluate_split(params, config, corpus, split, vocab):
    docs = corpus.split(split)
    return evaluate(params, config, docs, vocab, _labels(corpus, docs))


# Baselines -------------------------------------------------------------------

class _BagOfWords:
    """Multinomial logistic regression; weights stored feature-major ``[features x C]``."""

    def __init__(self, n_features, n_classes):
        self.tensors = {
            "features.W": T.Tensor(np.zeros((n_features, n_classes)), True),
            "features.b": T.Tensor(np.zeros(n_classes), True),
        }
        self.frozen_rows = {}

    def logits(self, example, mode, rng):
        idx, counts = example
        scores = T.matmul(T.Tensor(counts), T.embedding(self.tensors["features.W"], idx))
        return T.add_bias(scores, self.tensors["features.b"])


def ngram_features(train_docs, vocab, ngram):
    """Feature index: vocabulary unigrams, plus in-vocabulary adjacent pairs seen in training."""
    if ngram not in (1, 2):
        raise InputError(f"ngram must be 1 or 2, got {ngram}")
    features = {w: i for i, w in enumerate(vocab)}
    if ngram == 2:
        pairs = set()
        for d in train_docs:
            for a, b in zip(d.tokens, d.tokens[1:]):
                if a in features and b in features:
                    pairs.add(a + " " + b)
        for p in sorted(pairs):
            features[p] = len(features)
    return features


def count_vector(tokens, features, ngram):
    counts = {}
    grams = list(tokens)
    if ngram == 2:
        grams += [a + " " + b for a, b in zip(tokens, tokens[1:])]
    for g in grams:
        j = features.get(g)
        if j is not None:
            counts[j] = counts.get(j, 0) + 1
    idx = np.array(sorted(counts), dtype=np.int64)
    return idx, np.array([counts[j] for j in idx], dtype=np.float64)


def baseline_bow_lr(corpus, vocab, ngram, tc):
    train_docs, test_docs = corpus.split("train"), corpus.split("test")
    features = ngram_features(train_docs, vocab, ngram)
    clf = _BagOfWords(len(features), len(corpus.labels))
    train_x = [count_vector(d.tokens, features, ngram) for d in train_docs]
    test_x = [count_vector(d.tokens, features, ngram) for d in test_docs]
    report = RunReport("bow_lr" if ngram == 1 else "bigram_lr", clf.tensors["features.W"].size + len(corpus.labels))
    return _fit(clf, train_x, _labels(corpus, train_docs), test_x, _labels(corpus, test_docs), tc, report)


class _AverageEmbedding:
    """Softmax regression on frozen mean embeddings, zero-initialized like the BoW model."""

    def __init__(self, dim, n_classes):
        self.tensors = {
            "classifier.W": T.Tensor(np.zeros((n_classes, dim)), True),
            "classifier.b": T.Tensor(np.zeros(n_classes), True),
        }
        self.frozen_rows = {}

    def logits(self, x, mode, rng):
        return T.add_bias(T.matmul(self.tensors["classifier.W"], T.Tensor(x)), self.tensors["classifier.b"])


def mean_embeddings(seqs, emb):
    """Mean of non-pad token rows per sequence; all-pad sequences give the zero vector."""
    out = np.zeros((len(seqs), emb.shape[1]))
    for i, seq in enumerate(seqs):
        ids = seq[seq != PAD]
        if len(ids):
            out[i] = emb[ids].mean(axis=0)
    return out


def baseline_avg_embedding(corpus, vocab, table, tc, maxlen=70):
    index = build_index(vocab)
    emb = M.embedding_matrix(vocab, table, table.dim, tc.seed)
    train_docs, test_docs = corpus.split("train"), corpus.split("test")
    train_x = mean_embeddings(encode_all(train_docs, index, maxlen), emb)
    test_x = mean_embeddings(encode_all(test_docs, index, maxlen), emb)
    clf = _AverageEmbedding(table.dim, len(corpus.labels))
    n_params = (len(vocab) + 2) * table.dim + clf.tensors["classifier.W"].size + len(corpus.labels)
    report = RunReport("average_embedding", n_params)
    return _fit(clf, train_x, _labels(corpus, train_docs), test_x, _labels(corpus, test_docs), tc, report)


# Vocabulary-selection comparison -----------------------------------------------

COMPARE_COLUMNS = ("method", "K", "params_total", "test_accuracy", "seconds_per_epoch")
METHODS = ("frequency", "wordrank")


@dataclass(frozen=True)
class CompareRow:
    method: str
    K: int
    params_total: int
    test_accuracy: float
    seconds_per_epoch: float
    vocab: tuple = ()


def _run_cell(job):
    method, k, vocab, corpus, table, template, tc = job
    config = replace(template, vocab_size=k)
    # Seed keyed by K only: both methods at the same K start from the same draws.
    cell_tc = replace(tc, seed=int(rngmod.stream(tc.seed, "compare", k).integers(2**31)))
    params = M.init_params(config, table, vocab, seed=cell_tc.seed)
    _, report = train(params, config, corpus, vocab, cell_tc)
    acc = evaluate_split(params, config, corpus, "test", vocab)
    return CompareRow(method, k, M.count_params(config)["total"], acc, report.seconds_per_epoch, tuple(vocab))


def rank_pool(candidates, table, metric="cosine", k=W.DEFAULT_K, damping=W.DEFAULT_DAMPING,
              tol=W.DEFAULT_TOL, max_iter=W.DEFAULT_MAX_ITER, symmetrize=False):
    graph = W.build_similarity_graph(candidates, table, metric, k, symmetrize)
    result = W.pagerank(W.to_transition_matrix(graph), damping, tol, max_iter)
    if not result.converged:
        logger.warning("pagerank did not converge in %d iterations", result.iterations)
    return graph, result


def compare_vocab_methods(corpus, table, ks, template, tc, candidates, stats, metric="cosine",
                          knn=W.DEFAULT_K, damping=W.DEFAULT_DAMPING, symmetrize=False, jobs=1):
    """Train and test one model per (selection method, K).

    Both methods choose from the same pool: the candidates that have an
    embedding. ``template`` is a ModelConfig whose vocab_size is replaced
    per cell.
    """
    if not corpus.split("test"):
        raise InputError("comparison needs a test split")
    graph, result = rank_pool(candidates, table, metric, knn, damping, symmetrize=symmetrize)
    pool = TokenStats({w: stats.counts.get(w, 0) for w in graph.nodes})
    jobs_list = []
    for k in ks:
        if k > graph.n:
            raise InputError(f"K={k} exceeds the {graph.n} candidates with embeddings")
        jobs_list.append(("frequency", k, W.select_vocab_frequency(pool, k), corpus, table, template, tc))
        jobs_list.append(("wordrank", k, W.select_vocab_wordrank(result.scores, graph, k),
                          corpus, table, template, tc))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool_exec:
            rows = list(pool_exec.map(_run_cell, jobs_list))
    else:
        rows = [_run_cell(j) for j in jobs_list]
    return rows


def write_comparison(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(COMPARE_COLUMNS) + "\n")
        for r in rows:
            f.write(f"{r.method}\t{r.K}\t{r.params_total}\t{r.test_accuracy!r}\t{r.seconds_per_epoch:.6f}\n")
