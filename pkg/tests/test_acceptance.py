"""Acceptance criteria, one test per criterion.

Each test records a ``PASS``/``FAIL`` line (printed at the end of the run and
to stdout as it happens) before asserting.
"""

import os
import time
from dataclasses import replace

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES, small_config

from rankvocab import cli
from rankvocab import model as M
from rankvocab import tensor as T
from rankvocab import train_eval as TE
from rankvocab import wordrank as W
from rankvocab.corpus import build_index, encode_all
from rankvocab.gradcheck import standard_suite


def record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] C{number} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def random_sparse_graph(gen, n):
    edges = []
    for i in range(n):
        deg = int(gen.integers(0, min(10, n - 1) + 1))
        targets = gen.choice(np.delete(np.arange(n), i), size=deg, replace=False)
        edges.append([(int(j), float(gen.uniform(1e-3, 1.0))) for j in targets])
    return W.SimilarityGraph.from_edge_lists([str(i) for i in range(n)], edges)


def test_c1_pagerank_matches_linear_solve():
    gen = np.random.default_rng(20240601)
    t0 = time.perf_counter()
    worst, all_converged = 0.0, True
    for _ in range(100):
        n = int(gen.integers(2, 201))
        m = W.to_transition_matrix(random_sparse_graph(gen, n))
        res = W.pagerank(m, d=0.85, tol=1e-8)
        all_converged &= res.converged
        worst = max(worst, float(np.max(np.abs(res.scores - W.pagerank_exact(m, d=0.85)))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 30 and all_converged
    record(1, "pagerank oracle equivalence", ok,
           f"max inf-norm diff {worst:.2e} (<= 1e-6) over 100 graphs in {elapsed:.2f}s (< 30s)")


def test_c2_pagerank_analytic_cases():
    tol = 1e-8
    two = W.to_transition_matrix(W.SimilarityGraph.from_edge_lists("ab", [[(1, 0.4)], [(0, 0.4)]]))
    r_two = W.pagerank(two, d=0.85, tol=tol).scores
    rng = np.random.default_rng(5)
    g = random_sparse_graph(rng, 7)
    r_d0 = W.pagerank(W.to_transition_matrix(g), d=0.0, tol=tol).scores
    cycle = W.to_transition_matrix(W.SimilarityGraph.from_edge_lists("abc", [[(1, 1.0)], [(2, 1.0)], [(0, 1.0)]]))
    r_cycle = W.pagerank(cycle, d=0.85, tol=tol).scores
    errs = (np.max(np.abs(r_two - 0.5)), np.max(np.abs(r_d0 - 1 / 7)), np.max(np.abs(r_cycle - 1 / 3)))
    ok = all(e <= tol for e in errs)
    record(2, "pagerank analytic cases", ok,
           f"2-node {errs[0]:.1e}, d=0 {errs[1]:.1e}, 3-cycle {errs[2]:.1e} (each <= {tol:g})")


@pytest.mark.parametrize("which", ["default", "paper_scale"])
def test_c3_parameter_counts(which):
    def total(v):
        if which == "paper_scale":
            cfg = M.paper_scale_config(v)
        else:
            cfg = M.ModelConfig(vocab_size=v, num_classes=20, embed_dim=100)
        return M.count_params(cfg)["total"]

    p30, p20, p10, p75 = total(30_000), total(20_000), total(10_000), total(75_000)
    steps = (p30 - p20, p20 - p10)
    ratio = p75 / p10
    ok = steps == (1_000_000, 1_000_000) and ratio > 5
    detail = f"diffs {steps[0]:,} and {steps[1]:,} (== 1,000,000), params(75K)/params(10K) = {ratio:.3f} (> 5)"
    if which == "paper_scale":
        rounded = tuple(round(p / 1e5) / 10 for p in (p30, p20, p10))
        ok = ok and rounded == (3.5, 2.5, 1.5)
        detail += f", totals {p30:,}/{p20:,}/{p10:,} round to {rounded[0]}M/{rounded[1]}M/{rounded[2]}M"
    record(3, f"parameter counts [{which}]", ok, detail)


def test_c4_gradient_suite():
    t0 = time.perf_counter()
    reports = standard_suite(seed=7)
    elapsed = time.perf_counter() - t0
    worst_name = max(reports, key=lambda k: reports[k].max_rel_error)
    worst = reports[worst_name].max_rel_error
    has_model = {"model[additive]", "model[dot]"} <= set(reports)
    checked = all(r.checked > 0 for r in reports.values())
    ok = worst < 1e-4 and elapsed < 60 and has_model and checked
    record(4, "gradient suite", ok,
           f"{len(reports)} checks, max rel error {worst:.2e} ({worst_name}) < 1e-4 in {elapsed:.2f}s (< 60s)")


def test_c5_attention_invariants(synth):
    processed, stats, candidates, table = synth
    gen = np.random.default_rng(3)

    # alpha sums to one on 1000 random forwards
    dev = 0.0
    for i in range(1000):
        kind = M.ATTENTION_KINDS[i % 2]
        cfg = small_config(12, 3, embed_dim=8, maxlen=10, filters_per_size=6, attention_dim=4, attention=kind)
        params = M.init_params(cfg, seed=i)
        for name, t in params.items():
            if name != "embedding":
                t.data[:] = gen.normal(scale=1.0, size=t.shape)
        seq = gen.integers(0, cfg.vocab_size + 2, size=cfg.maxlen)
        mode = "train" if i % 3 == 0 else "eval"
        alpha = M.forward(params, cfg, [seq], mode, seed=i)[0].alpha
        dev = max(dev, abs(alpha.sum() - 1.0))

    # identical branch vectors give uniform weights
    uni = 0.0
    for kind in M.ATTENTION_KINDS:
        cfg = small_config(5, attention=kind)
        params = M.init_params(cfg, seed=1)
        row = gen.normal(size=cfg.filters_per_size)
        _, alpha = M.attention(T.Tensor(np.stack([row] * cfg.num_branches)), params, kind)
        uni = max(uni, float(np.max(np.abs(alpha.data - 1 / cfg.num_branches))))

    # single branch gives alpha = (1.0)
    cfg1 = small_config(len(candidates), filter_sizes=(3,))
    p1 = M.init_params(cfg1, table, candidates)
    seqs = encode_all(processed.docs[:20], build_index(candidates), cfg1.maxlen)
    single = all(t.alpha.tolist() == [1.0] for t in M.forward(p1, cfg1, seqs))

    # a branch with negligible attention can be removed without changing logits
    cfg = small_config(len(candidates), filter_sizes=(2, 3, 4))
    params = M.init_params(cfg, table, candidates, seed=2)
    params["conv.h4.bias"].data[:] = -1e3  # branch output is all zero after relu
    params["attention.W"].data[:] = np.abs(params["attention.W"].data) * 100.0
    params["attention.b"].data[:] = -5.0
    params["attention.v"].data[:] = 5.0
    full = M.forward(params, cfg, seqs)
    alpha_low = max(float(t.alpha[2]) for t in full)
    p2, c2 = M.drop_branch(params, cfg, 4)
    reduced = M.forward(p2, c2, seqs)
    change = max(float(np.max(np.abs(a.logits.data - b.logits.data))) for a, b in zip(full, reduced))

    ok = dev <= 1e-9 and uni <= 1e-12 and single and alpha_low < 1e-6 and change < 1e-4
    record(5, "attention invariants", ok,
           f"max |sum(alpha)-1| {dev:.1e} (<= 1e-9) over 1000 forwards; identical branches "
           f"max |alpha-1/B| {uni:.1e}; single branch alpha==(1.0) {single}; removed branch alpha "
           f"{alpha_low:.1e} (< 1e-6) changed logits by {change:.1e} (< 1e-4)")


def test_c6_spatial_dropout():
    gen = np.random.default_rng(11)
    x = T.Tensor(gen.uniform(0.5, 2.0, size=(7, 20)) * gen.choice([-1.0, 1.0], size=(7, 20)))
    n = 10_000
    partial = 0
    worst_entry = {}
    for p in (0.2, 0.5):
        acc = np.zeros(x.shape)
        for i in range(n):
            y = T.spatial_dropout(x, p, "train", M.dropout_stream(p == 0.5, i, 0)).data
            zero_cols = np.all(y == 0.0, axis=0)
            kept_ok = np.array_equal(y[:, ~zero_cols], x.data[:, ~zero_cols] * (1.0 / (1.0 - p)))
            partial += int(np.any((y == 0.0) & ~zero_cols[None, :]) or not kept_ok)
            acc += y
        rel = np.abs(acc / n - x.data) / np.abs(x.data)
        worst_entry[p] = float(rel.max())
        mean_rel = float(np.abs((acc / n).mean(axis=0) / x.data.mean(axis=0) - 1.0).mean())
        worst_entry[f"{p}-agg"] = mean_rel
    ev = T.spatial_dropout(x, 0.5, "eval", None)
    cfg = small_config(10, dropout_p=0.5)
    params = M.init_params(cfg, seed=0)
    seq = gen.integers(0, 12, size=cfg.maxlen)
    a = M.forward(params, cfg, [seq], "eval")[0].logits.data
    b = M.forward(params, replace(cfg, dropout_p=0.0), [seq], "eval")[0].logits.data
    eval_ok = ev is x and np.array_equal(ev.data, x.data) and a.tobytes() == b.tobytes()
    ok = partial == 0 and worst_entry[0.2] <= 0.02 and worst_entry["0.5-agg"] <= 0.02 and eval_ok
    record(6, "spatial dropout", ok,
           f"{2 * n} masks, partial-column masks {partial}; mean/input max entry deviation "
           f"{worst_entry[0.2]:.2%} at p=0.2, mean column deviation {worst_entry['0.5-agg']:.2%} at p=0.5 "
           f"(<= 2%); eval identity {eval_ok}")


def test_c7_end_to_end_learning(synth):
    processed, stats, candidates, table = synth
    assert len(processed.docs) == 200
    t0 = time.perf_counter()
    tc = TE.TrainConfig(epochs=10, seed=0)
    cfg = small_config(len(candidates))
    params = M.init_params(cfg, table, candidates, seed=0)
    _, cnn = TE.train(params, cfg, processed, candidates, tc)
    bow = TE.baseline_bow_lr(processed, candidates, 1, tc)
    avg = TE.baseline_avg_embedding(processed, candidates, table, tc, maxlen=cfg.maxlen)
    elapsed = time.perf_counter() - t0
    accs = {r.method: max(r.train_accuracy) for r in (cnn, bow, avg)}
    epochs = {r.method: len(r.train_accuracy) for r in (cnn, bow, avg)}
    ok = all(a >= 0.95 for a in accs.values()) and all(e <= 10 for e in epochs.values()) and elapsed < 120
    record(7, "end-to-end learning", ok,
           ", ".join(f"{k} {v:.3f}" for k, v in accs.items()) + f" train accuracy (>= 0.95) within 10 epochs, "
           f"{elapsed:.1f}s total (< 120s)")


COMPARE_SET = ("--set", "maxlen=20", "--set", "filters_per_size=8", "--set", "attention_dim=4",
               "--set", "filter_sizes=2,3", "--dim", "16", "--epochs", "3", "--lr", "0.01", "--batch-size", "32")


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run every command once; maps command -> (output path, manifest path)."""
    root = tmp_path_factory.mktemp("accept")
    runs = {}

    def run(name, out, manifest, *argv):
        assert cli.main([str(a) for a in argv]) == 0, name
        runs[name] = (out, manifest)

    raw, prep = root / "raw", root / "prep"
    run("synth", raw, raw / "manifest.txt", "synth", "--out", raw, "--seed", 3)
    run("prep", prep, prep / "manifest.txt", "prep", "--corpus", raw / "corpus.jsonl", "--out", prep)
    ranks = root / "ranks.tsv"
    run("rank", ranks, str(ranks) + ".manifest", "rank", "--candidates", prep / "candidates.tsv",
        "--embeddings", raw / "embeddings.txt", "--dim", 16, "--k", 8, "--out", ranks)
    vocab = root / "vocab.txt"
    run("select", vocab, str(vocab) + ".manifest", "select", "--ranks", ranks, "--k", 30, "--out", vocab)
    for method in ("textcnn", "bow", "avg_embedding"):
        out = root / f"train_{method}"
        run(f"train[{method}]", out, out / "manifest.txt", "train", "--corpus", prep, "--vocab", vocab,
            "--embeddings", raw / "embeddings.txt", "--method", method, *COMPARE_SET, "--out", out)
    n_cand = len((prep / "candidates.tsv").read_text().splitlines())
    cmp_out = root / "compare"
    run("compare", cmp_out, cmp_out / "manifest.txt", "compare", "--corpus", prep,
        "--embeddings", raw / "embeddings.txt", "--ks", f"{n_cand},40,20", "--knn", 8, *COMPARE_SET,
        "--out", cmp_out)
    gc = root / "gradcheck"
    run("gradcheck", gc, gc / "manifest.txt", "gradcheck", "--seed", 7, "--out", gc)
    return root, runs, n_cand


def read_tsv(path):
    return [ln.split("\t") for ln in open(path, encoding="utf-8").read().splitlines()]


def test_c8_comparison_harness(pipeline):
    root, runs, n_cand = pipeline
    out = runs["compare"][0]
    rows = read_tsv(out / "comparison.tsv")
    header, body = rows[0], rows[1:]
    grid = [(r[0], int(r[1])) for r in body]
    expected_grid = [(m, k) for k in (n_cand, 40, 20) for m in ("frequency", "wordrank")]
    shape_ok = tuple(header) == TE.COMPARE_COLUMNS and grid == expected_grid
    shape_ok &= all(0.0 <= float(r[3]) <= 1.0 and int(r[2]) > 0 and float(r[4]) >= 0 for r in body)
    by = {(r[0], int(r[1])): r for r in body}
    params_ok = all(by[("frequency", k)][2] == by[("wordrank", k)][2] for k in (n_cand, 40, 20))
    params_ok &= int(by[("frequency", 40)][2]) - int(by[("frequency", 20)][2]) == 20 * 16
    v_freq = set((out / f"vocab.frequency.{n_cand}.txt").read_text().split())
    v_rank = set((out / f"vocab.wordrank.{n_cand}.txt").read_text().split())
    acc_f, acc_w = by[("frequency", n_cand)][3], by[("wordrank", n_cand)][3]
    ok = shape_ok and params_ok and v_freq == v_rank and len(v_freq) == n_cand and acc_f == acc_w
    record(8, "comparison harness", ok,
           f"{len(body)} rows over method x K with columns {','.join(header)}; at K={n_cand} (full) "
           f"vocabularies set-equal {v_freq == v_rank}, accuracies {acc_f} vs {acc_w}")


TIMING_COLUMNS = {"report.tsv": (4,), "comparison.tsv": (4,)}


def normalized(path):
    name = os.path.basename(path)
    if name == "manifest.txt" or name.endswith(".manifest"):
        return None
    if name == "report.log":
        return b"".join(ln for ln in open(path, "rb").read().splitlines(True)
                        if not ln.startswith(b"seconds_per_epoch="))
    if name in TIMING_COLUMNS:
        lines = []
        for ln in open(path, encoding="utf-8").read().splitlines():
            cells = ln.split("\t")
            for c in TIMING_COLUMNS[name]:
                cells[c] = "*"
            lines.append("\t".join(cells))
        return "\n".join(lines).encode()
    return open(path, "rb").read()


def snapshot(path):
    if os.path.isfile(path):
        return {os.path.basename(path): normalized(path)}
    out = {}
    for base, _, files in os.walk(path):
        for f in files:
            full = os.path.join(base, f)
            content = normalized(full)
            if content is not None:
                out[os.path.relpath(full, path)] = content
    return out


def test_c9_determinism(pipeline, tmp_path):
    _, runs, _ = pipeline
    mismatched = []
    for name, (out, manifest) in runs.items():
        new_out = tmp_path / name.replace("[", "_").replace("]", "")
        if cli.main(["rerun", str(manifest), "--out", str(new_out)]) != 0:
            mismatched.append(f"{name} (rerun failed)")
            continue
        a = snapshot(str(out))
        b = snapshot(str(new_out)) if os.path.isdir(new_out) else {os.path.basename(str(out)): normalized(new_out)}
        if not a or a != b:
            mismatched.append(name)
    ok = not mismatched
    record(9, "determinism", ok,
           f"{len(runs) - len(mismatched)}/{len(runs)} command runs ({', '.join(runs)}) reproduced "
           "bit-for-bit from their manifests (timing columns excluded)"
           + (f"; mismatched: {', '.join(mismatched)}" if mismatched else ""))
