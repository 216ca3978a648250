"""WordRank: PageRank over a k-nearest-neighbour word similarity graph."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .embed_store import METRICS
from .errors import InputError, ParseError

logger = logging.getLogger(__name__)

DEFAULT_DAMPING = 0.85
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200
DEFAULT_K = 50
EXACT_CAP = 500

_ROW_BLOCK = 512


@dataclass(frozen=True, eq=False)
class SimilarityGraph:
    """Directed weighted graph in CSR layout.

    Outgoing edges of node ``i`` are ``indices[indptr[i]:indptr[i+1]]`` with
    matching ``weights``, sorted by descending weight.
    """

    nodes: tuple
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    k: int

    @property
    def n(self):
        return len(self.nodes)

    @property
    def num_edges(self):
        return len(self.indices)

    def edges(self, i):
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return list(zip(self.indices[lo:hi].tolist(), self.weights[lo:hi].tolist()))

    def out_degree(self):
        return np.diff(self.indptr)

    @classmethod
    def from_edge_lists(cls, nodes, edge_lists, k=None):
        """Build from ``edge_lists[i] = [(j, w), ...]`` (used by tests and tools)."""
        indptr = [0]
        indices = []
        weights = []
        for i, edges in enumerate(edge_lists):
            for j, w in edges:
                if j == i:
                    raise InputError(f"self-edge on node {i}")
                if not 0.0 < w <= 1.0:
                    raise InputError(f"edge weight {w} outside (0, 1]")
                indices.append(j)
                weights.append(w)
            indptr.append(len(indices))
        if k is None:
            k = max((len(e) for e in edge_lists), default=0)
        return cls(tuple(nodes), np.asarray(indptr, dtype=np.int64),
                   np.asarray(indices, dtype=np.int64), np.asarray(weights, dtype=np.float64), k)


def _similarity_block(x_block, x_all, sq_all, metric):
    if metric == "cosine":
        s = x_block @ x_all.T
        np.clip(s, 0.0, 1.0, out=s)
        return s
    sq_block = np.einsum("ij,ij->i", x_block, x_block)
    d2 = sq_block[:, None] + sq_all[None, :] - 2.0 * (x_block @ x_all.T)
    np.maximum(d2, 0.0, out=d2)
    return 1.0 / (1.0 + np.sqrt(d2))


def _top_k_row(s, k):
    """Indices of the ``k`` largest entries of ``s``; ties go to the lower index.

    Returned in descending-score order. ``-inf`` entries are never chosen.
    """
    valid = np.count_nonzero(s > -np.inf)
    k = min(k, valid)
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    thr = np.partition(s, len(s) - k)[len(s) - k]
    above = np.flatnonzero(s > thr)
    tied = np.flatnonzero(s == thr)[: k - len(above)]
    chosen = np.concatenate([above, tied])
    order = np.lexsort((chosen, -s[chosen]))
    return chosen[order]


def _knn_rows(start, stop, x, sq, metric, k):
    s_block = _similarity_block(x[start:stop], x, sq, metric)
    rows = []
    for r in range(stop - start):
        s = s_block[r]
        s[start + r] = -np.inf
        chosen = _top_k_row(s, k)
        w = s[chosen]
        keep = w > 0.0
        rows.append((chosen[keep], w[keep]))
    return rows


def build_similarity_graph(candidates, table, metric="cosine", k=DEFAULT_K, symmetrize=False, jobs=1):
    """Link each candidate to its ``k`` most similar other candidates.

    Candidates missing from ``table`` are dropped with a warning. Pairs with
    zero similarity are not linked. With ``symmetrize`` every edge also gets
    its reverse (same weight; the larger weight wins when both exist), which
    can exceed ``k`` out-edges per node.
    """
    if metric == "wmd":
        metric = "distance_kernel"
    if metric not in METRICS:
        raise InputError(f"unknown metric {metric!r}")
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    nodes = []
    seen = set()
    for w in candidates:
        if w in seen:
            continue
        seen.add(w)
        if w in table:
            nodes.append(w)
        else:
            logger.warning("candidate %r has no embedding; dropped", w)
    n = len(nodes)
    if n < 2:
        raise InputError(f"need at least 2 candidates with embeddings, got {n}")

    x = np.array([table[w] for w in nodes], dtype=np.float64)
    if metric == "cosine":
        norms = np.linalg.norm(x, axis=1)
        if np.any(norms == 0.0):
            bad = nodes[int(np.flatnonzero(norms == 0.0)[0])]
            raise InputError(f"zero embedding vector for {bad!r} under cosine")
        x = x / norms[:, None]
    sq = np.einsum("ij,ij->i", x, x)

    blocks = [(lo, min(lo + _ROW_BLOCK, n)) for lo in range(0, n, _ROW_BLOCK)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(lambda b: _knn_rows(b[0], b[1], x, sq, metric, k), blocks))
    else:
        parts = [_knn_rows(lo, hi, x, sq, metric, k) for lo, hi in blocks]
    rows = [row for part in parts for row in part]

    if symmetrize:
        merged = [dict() for _ in range(n)]
        for i, (idx, w) in enumerate(rows):
            for j, wt in zip(idx.tolist(), w.tolist()):
                for a, b in ((i, j), (j, i)):
                    if wt > merged[a].get(b, 0.0):
                        merged[a][b] = wt
        rows = []
        for m in merged:
            items = sorted(m.items(), key=lambda t: (-t[1], t[0]))
            rows.append((np.array([j for j, _ in items], dtype=np.int64),
                         np.array([w for _, w in items], dtype=np.float64)))

    indptr = np.zeros(n + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(idx) for idx, _ in rows])
    indices = np.concatenate([idx for idx, _ in rows]).astype(np.int64)
    weights = np.concatenate([w for _, w in rows]).astype(np.float64)
    return SimilarityGraph(tuple(nodes), indptr, indices, weights, k)


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Column-stochastic operator of the random surfer.

    ``links[i, j]`` is the probability of stepping from ``j`` to ``i``.
    Dangling columns (nodes with no out-edges) are implicitly uniform.
    """

    links: sp.csr_matrix
    dangling: np.ndarray

    @property
    def n(self):
        return self.links.shape[0]

    def matvec(self, r):
        return self.links @ r + r[self.dangling].sum() / self.n

    def dense(self):
        m = self.links.toarray()
        m[:, self.dangling] = 1.0 / self.n
        return m


def to_transition_matrix(graph):
    n = graph.n
    deg = graph.out_degree()
    src = np.repeat(np.arange(n), deg)
    out_sum = np.bincount(src, weights=graph.weights, minlength=n)
    values = graph.weights / out_sum[src]
    links = sp.csr_matrix((values, (graph.indices, src)), shape=(n, n))
    return TransitionMatrix(links, deg == 0)


@dataclass(frozen=True)
class RankResult:
    scores: np.ndarray
    iterations: int
    converged: bool


def pagerank(m, d=DEFAULT_DAMPING, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, on_iterate=None):
    """Damped power iteration ``r <- (1-d)/n + d * M r`` from the uniform vector.

    Stops when the L1 change drops below ``tol`` or after ``max_iter`` steps;
    ``converged`` tells which. Each iterate is renormalized to sum to 1.
    """
    n = m.n
    if n == 0:
        raise InputError("pagerank of an empty graph")
    if not 0.0 <= d <= 1.0:
        raise InputError(f"damping must be in [0, 1], got {d}")
    r = np.full(n, 1.0 / n)
    teleport = (1.0 - d) / n
    for it in range(1, max_iter + 1):
        nxt = teleport + d * m.matvec(r)
        nxt /= nxt.sum()
        if on_iterate is not None:
            on_iterate(nxt)
        delta = np.abs(nxt - r).sum()
        r = nxt
        if delta < tol:
            return RankResult(r, it, True)
    return RankResult(r, max_iter, False)


def pagerank_exact(m, d=DEFAULT_DAMPING, cap=EXACT_CAP):
    """Solve ``(I - d M) r = (1-d)/n`` densely; a check on :func:`pagerank`."""
    n = m.n
    if n == 0:
        raise InputError("pagerank of an empty graph")
    if n > cap:
        raise InputError(f"exact solve limited to n <= {cap}, got {n}")
    a = np.eye(n) - d * m.dense()
    r = np.linalg.solve(a, np.full(n, (1.0 - d) / n))
    return r / r.sum()


def _top(scores, k):
    order = np.lexsort((np.arange(len(scores)), -np.asarray(scores)))
    return order[:k]


def select_vocab_wordrank(scores, graph, k):
    """The ``k`` highest-scoring words; ties go to earlier candidates."""
    if k > graph.n:
        raise InputError(f"K={k} exceeds the {graph.n} ranked candidates")
    if k < 1:
        raise InputError(f"K must be positive, got {k}")
    return [graph.nodes[i] for i in _top(scores, k)]


def select_vocab_frequency(stats, k):
    if k > len(stats):
        raise InputError(f"K={k} exceeds the {len(stats)} counted words")
    if k < 1:
        raise InputError(f"K must be positive, got {k}")
    return stats.ordered()[:k]


def write_ranks(path, nodes, scores):
    with open(path, "w", encoding="utf-8") as f:
        for rank, i in enumerate(_top(scores, len(scores)), start=1):
            f.write(f"{nodes[i]}\t{float(scores[i])!r}\t{rank}\n")


def read_ranks(path):
    """Return ``(words, scores)`` from a rank TSV, in file order."""
    words, scores = [], []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError("expected word<TAB>score<TAB>rank", path, lineno)
            try:
                scores.append(float(parts[1]))
            except ValueError:
                raise ParseError(f"bad score {parts[1]!r}", path, lineno) from None
            words.append(parts[0])
    return words, np.asarray(scores)


def write_graph(path, graph):
    with open(path, "w", encoding="utf-8") as f:
        for i, src in enumerate(graph.nodes):
            for j, w in graph.edges(i):
                f.write(f"{src}\t{graph.nodes[j]}\t{w!r}\n")
