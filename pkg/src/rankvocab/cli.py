"""``rankvocab`` command line: prep -> rank -> select -> train / compare.

Exit codes: 0 ok, 2 usage or input error, 3 pagerank did not converge
under ``--strict``, 4 internal assertion (including a failed gradcheck).
"""

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from . import corpus as C
from . import embed_store as E
from . import model as M
from . import train_eval as TE
from . import wordrank as W
from .errors import InputError, ParseError
from .gradcheck import standard_suite
from .kvconfig import config_to_kv, kv_to_fields, read_kv, write_kv

logger = logging.getLogger("rankvocab")

EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3
EXIT_ASSERT = 4

# Model fields the data decides; a config file may not set them.
_DERIVED = {"vocab_size", "num_classes"}


class CommandExit(Exception):
    def __init__(self, code, message=""):
        super().__init__(message)
        self.code = code


def default_seed():
    value = os.environ.get("RANKVOCAB_SEED")
    if value is None:
        return 0
    try:
        return int(value)
    except ValueError:
        raise InputError(f"RANKVOCAB_SEED must be an integer, got {value!r}") from None


# Manifests ---------------------------------------------------------------------

def digest(path):
    """sha256 of a file, or of every file under a directory (sorted by relative path)."""
    h = hashlib.sha256()
    if os.path.isdir(path):
        for root, dirs, files in os.walk(path):
            dirs.sort()
            for name in sorted(files):
                full = os.path.join(root, name)
                h.update(os.path.relpath(full, path).encode("utf-8") + b"\0")
                with open(full, "rb") as f:
                    h.update(hashlib.sha256(f.read()).digest())
    else:
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


def manifest_path(args):
    if args.command in ("rank", "select"):
        return args.out + ".manifest"
    if getattr(args, "out", None) is None:
        return None
    return os.path.join(args.out, "manifest.txt")


def write_manifest(args, inputs, resolved=None, seed=None):
    """Record everything needed to replay ``args``; done before any heavy work."""
    for name in inputs:
        if getattr(args, name) is not None:
            setattr(args, name, os.path.abspath(getattr(args, name)))
    items = {"command": args.command, "version": __version__}
    if seed is not None:
        items["seed"] = str(seed)
    for key, value in sorted(vars(args).items()):
        if key in ("func", "command", "verbose"):
            continue
        items[f"arg.{key}"] = json.dumps(value)
    for key, value in (resolved or {}).items():
        items[f"config.{key}"] = value
    for name in inputs:
        path = getattr(args, name)
        if path is not None:
            items[f"digest.{name}"] = digest(path)
    path = manifest_path(args)
    if path is None:
        for k, v in items.items():
            print(f"# {k}={v}", file=sys.stderr)
        return items
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    write_kv(path, items)
    return items


def read_manifest(path):
    items = read_kv(path)
    if "command" not in items:
        raise ParseError("not a run manifest (no command=)", path)
    args = {k[len("arg."):]: json.loads(v) for k, v in items.items() if k.startswith("arg.")}
    digests = {k[len("digest."):]: v for k, v in items.items() if k.startswith("digest.")}
    return items["command"], args, digests


# Shared helpers ----------------------------------------------------------------

def read_word_list(path):
    """First tab-separated column of each non-empty line."""
    words = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if line and not line.startswith("#"):
                words.append(line.split("\t", 1)[0])
    return words


def write_word_list(path, words):
    with open(path, "w", encoding="utf-8") as f:
        for w in words:
            f.write(w + "\n")


def resolve_configs(args, vocab_size, num_classes):
    """ModelConfig and TrainConfig from defaults < config file < flags."""
    items = read_kv(args.config) if getattr(args, "config", None) else {}
    for pair in getattr(args, "set", None) or []:
        if "=" not in pair:
            raise InputError(f"--set expects key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        items[k.strip()] = v.strip()
    known = {f for f in M.ModelConfig.__dataclass_fields__} | set(TE.TrainConfig.__dataclass_fields__)
    for key in items:
        if key not in known:
            raise InputError(f"unknown config key {key!r}")
        if key in _DERIVED:
            raise InputError(f"config key {key!r} is derived from the data and cannot be set")
    model_fields = kv_to_fields(M.ModelConfig, items)
    train_fields = kv_to_fields(TE.TrainConfig, items)
    if getattr(args, "embed_dim", None) is not None:
        model_fields["embed_dim"] = args.embed_dim
    for flag in ("epochs", "lr", "batch_size", "seed"):
        value = getattr(args, flag, None)
        if value is not None:
            train_fields[flag] = value
    train_fields.setdefault("seed", default_seed())
    mc = M.ModelConfig(vocab_size=max(vocab_size, 1), num_classes=num_classes, **model_fields)
    tc = TE.TrainConfig(**train_fields)
    return mc, tc


def _resolved_items(mc, tc):
    out = {f"model.{k}": v for k, v in config_to_kv(mc).items()}
    out.update({f"train.{k}": v for k, v in config_to_kv(tc).items()})
    return out


def _load_prepped(corpus_dir):
    return C.ingest(os.path.join(corpus_dir, "corpus.jsonl"), "jsonl")


# Commands ----------------------------------------------------------------------

def cmd_synth(args):
    from . import synthetic as S

    write_manifest(args, [], seed=args.seed)
    corpus = S.synthetic_corpus(n_docs=args.docs, n_classes=args.classes, seed=args.seed)
    table = S.synthetic_embeddings(n_classes=args.classes, dim=args.dim, seed=args.seed)
    C.write_jsonl(corpus, os.path.join(args.out, "corpus.jsonl"))
    E.save_embeddings(table, os.path.join(args.out, "embeddings.txt"))
    print(f"wrote {len(corpus.docs)} docs and {len(table)} vectors (dim {table.dim}) to {args.out}")


def cmd_prep(args):
    write_manifest(args, ["corpus", "stopwords"],
                   resolved={"min_count": str(args.min_count), "format": args.format})
    corpus = C.ingest(args.corpus, args.format)
    stopwords = C.load_stopwords(args.stopwords)
    processed, stats, candidates = C.preprocess(corpus, stopwords, args.min_count)
    C.write_jsonl(processed, os.path.join(args.out, "corpus.jsonl"))
    C.write_counts(stats, os.path.join(args.out, "token_stats.tsv"))
    C.write_counts(stats, os.path.join(args.out, "candidates.tsv"), candidates)
    n_train = len(processed.split("train"))
    print(f"docs={len(processed.docs)} train={n_train} test={len(processed.docs) - n_train} "
          f"labels={len(processed.labels)} words={len(stats)} candidates={len(candidates)}")


def cmd_rank(args):
    write_manifest(args, ["candidates", "embeddings"])
    candidates = read_word_list(args.candidates)
    table = E.load_embeddings(args.embeddings, args.dim)
    graph = W.build_similarity_graph(candidates, table, args.metric, args.k,
                                     symmetrize=args.symmetrize, jobs=args.jobs)
    m = W.to_transition_matrix(graph)
    result = W.pagerank(m, args.damping, args.tol, args.max_iter)
    W.write_ranks(args.out, graph.nodes, result.scores)
    if args.graph_out:
        W.write_graph(args.graph_out, graph)
    print(f"nodes={graph.n} edges={graph.num_edges} iterations={result.iterations} "
          f"converged={'true' if result.converged else 'false'}")
    if args.exact:
        exact = W.pagerank_exact(m, args.damping)
        W.write_ranks(args.out + ".exact", graph.nodes, exact)
        print(f"exact_max_abs_diff={float(np.max(np.abs(exact - result.scores))):.3e}")
    if args.strict and not result.converged:
        raise CommandExit(EXIT_NOT_CONVERGED, f"pagerank did not converge in {args.max_iter} iterations")


def cmd_select(args):
    write_manifest(args, ["ranks", "freqs"])
    if args.ranks:
        words, scores = W.read_ranks(args.ranks)
        if args.k > len(words):
            raise InputError(f"--k {args.k} exceeds the {len(words)} ranked words")
        order = np.lexsort((np.arange(len(words)), -scores))
        chosen = [words[i] for i in order[: args.k]]
    else:
        chosen = W.select_vocab_frequency(C.read_counts(args.freqs), args.k)
    write_word_list(args.out, chosen)
    print(f"selected {len(chosen)} words")


def cmd_train(args):
    corpus = _load_prepped(args.corpus)
    vocab = read_word_list(args.vocab)
    mc, tc = resolve_configs(args, len(vocab), len(corpus.labels))
    args.seed = tc.seed
    write_manifest(args, ["corpus", "vocab", "embeddings", "config"],
                   resolved=_resolved_items(mc, tc), seed=tc.seed)
    table = E.load_embeddings(args.embeddings, mc.embed_dim) if args.embeddings else None
    if args.method == "textcnn":
        params = M.init_params(mc, table, vocab, seed=tc.seed)
        params, report = TE.train(params, mc, corpus, vocab, tc)
        M.save_checkpoint(os.path.join(args.out, "checkpoint"), params, mc)
    elif args.method in ("bow", "bigram"):
        report = TE.baseline_bow_lr(corpus, vocab, 1 if args.method == "bow" else 2, tc)
    else:
        if table is None:
            raise InputError("--method avg_embedding needs --embeddings")
        report = TE.baseline_avg_embedding(corpus, vocab, table, tc, maxlen=mc.maxlen)
    write_word_list(os.path.join(args.out, "vocab.txt"), vocab)
    report.write_tsv(os.path.join(args.out, "report.tsv"))
    report.write_log(os.path.join(args.out, "report.log"))
    test = report.final_test_accuracy
    print(f"method={report.method} params={report.params_total} "
          f"train_accuracy={report.final_train_accuracy:.4f}"
          + ("" if test is None else f" test_accuracy={test:.4f}"))


def cmd_compare(args):
    corpus = _load_prepped(args.corpus)
    candidates = read_word_list(os.path.join(args.corpus, "candidates.tsv"))
    stats = C.read_counts(os.path.join(args.corpus, "token_stats.tsv"))
    ks = [int(k) for k in args.ks.split(",") if k.strip()]
    if not ks:
        raise InputError("--ks needs at least one K")
    template, tc = resolve_configs(args, 1, len(corpus.labels))
    args.seed = tc.seed
    resolved = _resolved_items(template, tc)
    del resolved["model.vocab_size"]
    resolved.update({"ks": ",".join(map(str, ks)), "metric": args.metric, "knn": str(args.knn),
                     "damping": repr(args.damping)})
    write_manifest(args, ["corpus", "embeddings", "config"], resolved=resolved, seed=tc.seed)
    table = E.load_embeddings(args.embeddings, template.embed_dim)
    rows = TE.compare_vocab_methods(corpus, table, ks, template, tc, candidates, stats, args.metric,
                                    args.knn, args.damping, args.symmetrize, args.jobs)
    TE.write_comparison(os.path.join(args.out, "comparison.tsv"), rows)
    for r in rows:
        write_word_list(os.path.join(args.out, f"vocab.{r.method}.{r.K}.txt"), r.vocab)
        print(f"{r.method}\tK={r.K}\tparams={r.params_total}\ttest_accuracy={r.test_accuracy:.4f}")


def cmd_gradcheck(args):
    seed = default_seed() if args.seed is None else args.seed
    args.seed = seed
    write_manifest(args, [], resolved={"eps": repr(args.eps), "tol": repr(args.tol)}, seed=seed)
    reports = standard_suite(seed, args.eps)
    worst = 0.0
    lines = []
    for name, rep in reports.items():
        worst = max(worst, rep.max_rel_error)
        status = "ok" if rep.passed(args.tol) else "FAIL"
        lines.append(f"{name}\t{rep.max_rel_error:.3e}\tchecked={rep.checked}\tskipped={rep.skipped}\t{status}")
    print("\n".join(lines))
    print(f"max_rel_error={worst:.3e}")
    if args.out:
        with open(os.path.join(args.out, "gradcheck.tsv"), "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
    if worst >= args.tol:
        raise CommandExit(EXIT_ASSERT, f"gradient check failed: {worst:.3e} >= {args.tol:g}")


def cmd_params(args):
    if args.paper_scale:
        mc = M.paper_scale_config(args.vocab_size, args.num_classes)
    else:
        items = read_kv(args.config) if args.config else {}
        mc = M.ModelConfig(vocab_size=args.vocab_size, num_classes=args.num_classes,
                           **kv_to_fields(M.ModelConfig, {k: v for k, v in items.items() if k not in _DERIVED}))
    for key, value in M.count_params(mc).items():
        print(f"{key}\t{value}")


def cmd_rerun(args):
    command, saved, digests = read_manifest(args.manifest)
    if command == "rerun":
        raise InputError("cannot rerun a rerun manifest")
    for name, expected in digests.items():
        path = saved.get(name)
        if path is None or not os.path.exists(path) or digest(path) != expected:
            raise InputError(f"input {name} ({path}) changed or missing since the manifest was written")
    saved["out"] = args.out
    if command == "rank" and saved.get("graph_out"):
        saved["graph_out"] = args.out + ".graph.tsv"
    parser = build_parser()
    ns = parser.parse_args([command, "--out", args.out] + _required_stub(command))
    for key, value in saved.items():
        setattr(ns, key, value)
    ns.command = command
    return ns.func(ns)


def _required_stub(command):
    # placeholder values for required flags; every one is overwritten from the manifest
    stubs = {
        "prep": ["--corpus", "-"],
        "rank": ["--candidates", "-", "--embeddings", "-"],
        "select": ["--freqs", "-", "--k", "1"],
        "train": ["--corpus", "-", "--vocab", "-"],
        "compare": ["--corpus", "-", "--embeddings", "-"],
    }
    return stubs.get(command, [])


# Parser ------------------------------------------------------------------------

def _add_config_flags(p):
    p.add_argument("--config", help="key=value file with model and training settings")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int, help="default: $RANKVOCAB_SEED or 0")
    p.add_argument("--dim", dest="embed_dim", type=int, help="embedding dimension (default 100)")


def build_parser():
    parser = argparse.ArgumentParser(prog="rankvocab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic separable corpus and embeddings")
    p.add_argument("--out", required=True)
    p.add_argument("--docs", type=int, default=200)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prep", help="ingest, preprocess and count a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=("jsonl", "dirs"), default="jsonl")
    p.add_argument("--stopwords", help="stopword file (default: bundled English list)")
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("rank", help="rank candidate words with WordRank")
    p.add_argument("--candidates", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--metric", choices=("cosine", "wmd"), default="cosine")
    p.add_argument("--k", type=int, default=W.DEFAULT_K, help="neighbours per word")
    p.add_argument("--symmetrize", action="store_true")
    p.add_argument("--damping", type=float, default=W.DEFAULT_DAMPING)
    p.add_argument("--tol", type=float, default=W.DEFAULT_TOL)
    p.add_argument("--max-iter", type=int, default=W.DEFAULT_MAX_ITER)
    p.add_argument("--strict", action="store_true", help="exit 3 if pagerank does not converge")
    p.add_argument("--exact", action="store_true", help="also solve exactly and report the difference")
    p.add_argument("--graph-out", help="dump the similarity graph as TSV")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("select", help="pick a K-word vocabulary from ranks or frequencies")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--ranks")
    src.add_argument("--freqs")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", help="train the attention TextCNN or a baseline")
    p.add_argument("--corpus", required=True, help="output directory of prep")
    p.add_argument("--vocab", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--method", choices=("textcnn", "bow", "bigram", "avg_embedding"), default="textcnn")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="frequency vs WordRank vocabularies over several K")
    p.add_argument("--corpus", required=True, help="output directory of prep")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--ks", default="30000,20000,10000")
    p.add_argument("--metric", choices=("cosine", "wmd"), default="cosine")
    p.add_argument("--knn", type=int, default=W.DEFAULT_K)
    p.add_argument("--symmetrize", action="store_true")
    p.add_argument("--damping", type=float, default=W.DEFAULT_DAMPING)
    p.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="print the parameter-count breakdown")
    p.add_argument("--vocab-size", type=int, required=True)
    p.add_argument("--num-classes", type=int, default=20)
    p.add_argument("--config")
    p.add_argument("--paper-scale", action="store_true", help="use the 1.5M-at-10K configuration")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("rerun", help="replay a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "synth" and args.seed is None:
        try:
            args.seed = default_seed()
        except InputError as exc:
            print(f"rankvocab: error: {exc}", file=sys.stderr)
            return EXIT_USAGE
    try:
        args.func(args)
    except CommandExit as exc:
        if str(exc):
            print(f"rankvocab: {exc}", file=sys.stderr)
        return exc.code
    except (InputError, OSError) as exc:
        print(f"rankvocab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AssertionError as exc:
        print(f"rankvocab: internal assertion: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    return 0


if __name__ == "__main__":
    sys.exit(main())
