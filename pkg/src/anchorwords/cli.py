"""Command-line driver: individual stages, the full pipeline, and parameter sweeps.

Every subcommand accepts ``--config FILE``, a flat ``key = value`` file whose
keys are flag names (``eg-tol`` or ``eg_tol``); flags given on the command
line take precedence. Exit status is 0 on success, 2 for configuration
errors (bad flags, missing input files) and 3 when a stage fails.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys
import time

import numpy as np

from . import anchors as anchors_mod
from . import cooccur, corpus as corpus_mod, evaluation, recover, synth

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3

# pipeline artifact names inside --out-dir
CORPUS_PREFIX = "corpus"
Q_FILE = "q.bin"
ANCHORS_FILE = "anchors.tsv"
MODEL_PREFIX = "model"
REPORT_FILE = "report.json"


class ConfigError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


# -- configuration ---------------------------------------------------------

def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _config_defaults(parser: argparse.ArgumentParser, values: dict, known=()) -> dict:
    """Convert config-file strings with the parser's own option types.

    Keys in ``known`` (options of other subcommands) are skipped, so one file
    can drive every stage.
    """
    actions = {a.dest: a for a in parser._actions}
    out = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            if key in known:
                continue
            raise ConfigError(f"unknown config key: {key}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            if raw.lower() not in ("1", "0", "true", "false", "yes", "no"):
                raise ConfigError(f"config key {key}: expected a boolean, got {raw!r}")
            out[key] = raw.lower() in ("1", "true", "yes")
            continue
        try:
            value = action.type(raw) if action.type else raw
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config key {key}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise ConfigError(f"config key {key}: {value!r} not in {sorted(action.choices)}")
        out[key] = value
    return out


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {text}")
    return value


def _add_common(p):
    p.add_argument("--config", help="flat key = value file; command-line flags override it")
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded fixed-order reductions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_corpus_input(p):
    p.add_argument("--docword", "--corpus", dest="docword", help="UCI docword file")
    p.add_argument("--vocab", help="UCI vocabulary file")
    p.add_argument("--min-df", type=int, default=1)
    p.add_argument("--max-df-frac", type=float, default=1.0)
    p.add_argument("--min-doc-len", type=int, default=2)


def _add_anchor_options(p):
    p.add_argument("--k", type=_positive_int)
    p.add_argument("--proj-dim", type=int, default=anchors_mod.DEFAULT_PROJECTION_DIM,
                   help="random projection dimension; 0 disables the projection")
    p.add_argument("--min-anchor-df", type=int, default=anchors_mod.DEFAULT_MIN_ANCHOR_DF)


def _add_recover_options(p):
    p.add_argument("--method", choices=[m.value for m in recover.Method], default="kl")
    p.add_argument("--eg-tol", type=_positive_float, default=recover.DEFAULT_TOL)
    p.add_argument("--eg-max-iters", type=_positive_int, default=recover.DEFAULT_MAX_ITERS)


def _add_synth_options(p):
    p.add_argument("--a", help="word-topic matrix (topics TSV or binary matrix)")
    p.add_argument("--vocab-size", type=_positive_int,
                   help="generate a random separable model with this many words (instead of --a)")
    p.add_argument("--model-k", type=_positive_int, help="topics in the random model")
    p.add_argument("--anchor-prob", type=float, default=0.05)
    p.add_argument("--concentration", type=_positive_float, default=1.0)
    p.add_argument("--overlap", type=float, default=0.0)
    p.add_argument("--model-seed", type=int, default=0)
    p.add_argument("--docs", type=_positive_int)
    p.add_argument("--doc-len", type=int, default=100)
    p.add_argument("--prior", choices=["dirichlet", "logistic-normal"], default="dirichlet")
    p.add_argument("--alpha", type=_positive_float, default=0.03)
    p.add_argument("--inject-anchors", action="store_true")
    p.add_argument("--corr-rho", type=float, default=0.0)
    p.add_argument("--corr-groups", type=_positive_int, default=1)


def _add_eval_options(p):
    p.add_argument("--top-n", type=_positive_int, default=20)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anchorwords",
                                     description="Anchor-word topic recovery.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-q", help="co-occurrence matrix from a corpus")
    _add_common(p)
    _add_corpus_input(p)
    p.add_argument("--out", default=Q_FILE)

    p = sub.add_parser("anchors", help="select anchor words from Q")
    _add_common(p)
    p.add_argument("--q", default=Q_FILE)
    _add_anchor_options(p)
    p.add_argument("--out", default=ANCHORS_FILE)

    p = sub.add_parser("recover", help="recover A and R given Q and anchors")
    _add_common(p)
    p.add_argument("--q", default=Q_FILE)
    p.add_argument("--anchors", default=ANCHORS_FILE)
    _add_recover_options(p)
    p.add_argument("--out-prefix", default=MODEL_PREFIX)

    p = sub.add_parser("synth", help="sample a semi-synthetic corpus")
    _add_common(p)
    _add_synth_options(p)
    p.add_argument("--out-prefix", default=CORPUS_PREFIX)

    p = sub.add_parser("eval", help="score a recovered model")
    _add_common(p)
    p.add_argument("--a-hat")
    p.add_argument("--a-true")
    p.add_argument("--corpus", help="docword file for coherence (vocab from --vocab or its sibling)")
    p.add_argument("--vocab")
    _add_eval_options(p)
    p.add_argument("--out", default=REPORT_FILE)

    for name, text in (("pipeline", "corpus (or synth) -> Q -> anchors -> recover -> eval"),
                       ("sweep", "pipeline over the cartesian product of --axis values")):
        p = sub.add_parser(name, help=text)
        _add_common(p)
        _add_corpus_input(p)
        _add_synth_options(p)
        _add_anchor_options(p)
        _add_recover_options(p)
        _add_eval_options(p)
        p.add_argument("--out-dir", default=".")
        if name == "pipeline":
            p.add_argument("--resume", action="store_true",
                           help="skip stages whose output already exists")
        else:
            p.add_argument("--axis", action="append", default=[], metavar="NAME=V1,V2,...",
                           help="sweep axis over a pipeline option, e.g. docs=2000,10000")
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        choices = parser._subparsers._group_actions[0].choices
        known = {a.dest for p in choices.values() for a in p._actions} - {"help", "config"}
        subparser = choices[args.command]
        subparser.set_defaults(**_config_defaults(subparser, read_config_file(args.config), known))
        args = parser.parse_args(argv)
    return args


# -- stage helpers ---------------------------------------------------------

def _require_file(path, what):
    if path is None:
        raise ConfigError(f"missing required option for the {what}")
    if not os.path.isfile(path):
        raise ConfigError(f"{what} not found: {path}")
    return path


def load_corpus(args) -> corpus_mod.SparseCorpus:
    docword = _require_file(args.docword, "docword file")
    vocab = _require_file(args.vocab, "vocab file")
    corpus = corpus_mod.parse_uci_bag_of_words(docword, vocab)
    if args.min_df > 1 or args.max_df_frac < 1.0:
        corpus, _ = corpus_mod.prune_vocabulary(corpus, args.min_df, args.max_df_frac)
    corpus = corpus_mod.filter_short_documents(corpus, max(2, args.min_doc_len))
    logger.info("corpus: %d documents, %d words, %d tokens", corpus.num_docs,
                corpus.vocab_size, corpus.num_tokens)
    return corpus


def _q_sidecar(path):
    return os.fspath(path) + ".json"


def write_q_artifacts(path, cooc, corpus) -> None:
    cooccur.save_q(path, cooc)
    meta = {"num_docs": corpus.num_docs, "vocab": list(corpus.vocab),
            "doc_freq": corpus.document_frequency().tolist()}
    with open(_q_sidecar(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh)


def read_q_artifacts(path):
    """``(cooc, vocab or None, doc_freq or None)``."""
    cooc = cooccur.load_q(_require_file(path, "Q file"))
    vocab = doc_freq = None
    if os.path.isfile(_q_sidecar(path)):
        with open(_q_sidecar(path), encoding="utf-8") as fh:
            meta = json.load(fh)
        vocab, doc_freq = meta["vocab"], np.asarray(meta["doc_freq"])
    return cooc, vocab, doc_freq


def read_word_topic_matrix(path):
    """``(a, vocab or None)`` from a topics TSV or a binary matrix file."""
    _require_file(path, "word-topic matrix")
    with open(path, "rb") as fh:
        magic = fh.read(len(cooccur.MATRIX_MAGIC))
    if magic == cooccur.MATRIX_MAGIC:
        return cooccur.load_matrix(path), None
    return recover.read_topic_matrix(path)


def _projection_dim(args):
    return args.proj_dim if args.proj_dim > 0 else None


def stage_anchors(cooc, doc_freq, args):
    if args.k is None:
        raise ConfigError("--k is required")
    return anchors_mod.find_anchors(cooc, args.k, doc_freq=doc_freq, min_df=args.min_anchor_df,
                                    projection_dim=_projection_dim(args), seed=args.seed)


def stage_recover(cooc, anchor_set, args):
    return recover.recover_topic_model(cooc, anchor_set, args.method, tol=args.eg_tol,
                                       max_iters=args.eg_max_iters, threads=args.threads)


def write_model(prefix, model, vocab) -> dict:
    prefix = os.fspath(prefix)
    paths = {"topics": prefix + ".topics.tsv", "a": prefix + ".a.bin", "r": prefix + ".r.bin",
             "summary": prefix + ".summary.txt", "meta": prefix + ".json"}
    recover.write_topic_matrix(paths["topics"], model.a, vocab)
    cooccur.save_matrix(paths["a"], model.a)
    cooccur.save_matrix(paths["r"], model.r)
    recover.write_topic_summary(paths["summary"], model, vocab)
    meta = {"method": model.method.value, "k": model.k, "p_z": model.p_z.tolist(),
            "alpha0": model.alpha0,
            "anchors": None if model.anchors is None else [int(i) for i in model.anchors]}
    with open(paths["meta"], "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def make_generator_spec(args):
    """The generator spec and vocabulary described by the synth options."""
    if args.docs is None:
        raise ConfigError("--docs is required for synthetic corpora")
    if args.a is not None:
        a, vocab = read_word_topic_matrix(args.a)
    elif args.vocab_size is not None:
        k = args.model_k or args.k
        if k is None:
            raise ConfigError("--model-k (or --k) is required with --vocab-size")
        a, _ = synth.random_separable_topics(args.vocab_size, k, args.anchor_prob,
                                             concentration=args.concentration,
                                             overlap=args.overlap, rng=args.model_seed)
        vocab = None
    else:
        raise ConfigError("a synthetic corpus needs --a or --vocab-size")
    vocab = list(vocab) if vocab is not None else [f"w{i}" for i in range(a.shape[0])]
    if args.inject_anchors:
        a = synth.inject_anchor_words(a)
        vocab += [f"anchor_{k + 1}" for k in range(a.shape[1])]
    k = a.shape[1]
    if args.prior == "dirichlet":
        prior = synth.DirichletPrior(np.full(k, args.alpha))
    else:
        cov = synth.block_covariance(k, args.corr_groups, args.corr_rho)
        prior = synth.LogisticNormalPrior(np.zeros(k), cov)
    return synth.GeneratorSpec(a, args.docs, args.doc_len, prior, seed=args.seed), vocab


def run_synth(args, prefix) -> dict:
    spec, vocab = make_generator_spec(args)
    corpus, w_true = synth.generate_corpus(spec, vocab)
    paths = synth.write_synth_outputs(prefix, spec, corpus, w_true)
    paths["a_true"] = os.fspath(prefix) + ".a_true.tsv"
    recover.write_topic_matrix(paths["a_true"], spec.a, vocab)
    return paths


def align_rows(a, words, target_words):
    """Rows of ``a`` (named by ``words``) placed on ``target_words``; missing words get zeros."""
    position = {w: i for i, w in enumerate(target_words)}
    out = np.zeros((len(target_words), a.shape[1]))
    for i, w in enumerate(words):
        j = position.get(w)
        if j is not None:
            out[j] = a[i]
    return out


def evaluate_model(a_hat, hat_vocab, a_true=None, true_vocab=None, corpus=None, top_n=20,
                   timings=None):
    """Score ``a_hat``; different vocabularies are matched by word string."""
    l1_hat = a_hat
    if a_true is not None and a_true.shape[0] != a_hat.shape[0]:
        if hat_vocab is None or true_vocab is None:
            raise ValueError(f"a_hat has {a_hat.shape[0]} words, a_true {a_true.shape[0]}, "
                             "and no vocabulary to align them")
        l1_hat = align_rows(a_hat, hat_vocab, true_vocab)
    report = evaluation.evaluate(l1_hat, a_true=a_true, n_top=top_n, timings=timings)
    if corpus is not None:
        coh_hat = a_hat
        if hat_vocab is not None and list(hat_vocab) != list(corpus.vocab):
            coh_hat = align_rows(a_hat, hat_vocab, corpus.vocab)
        report.coherence = evaluation.coherence(coh_hat, corpus, min(top_n, coh_hat.shape[0]))
    report.unique_words = evaluation.unique_words(a_hat, min(top_n, a_hat.shape[0]))
    return report


# -- pipeline --------------------------------------------------------------

def _timed(stage, timings, fn, *fn_args):
    start = time.perf_counter()
    try:
        result = fn(*fn_args)
    except (ConfigError, StageError):
        raise
    except (ValueError, OSError, np.linalg.LinAlgError) as exc:
        raise StageError(stage, exc) from exc
    timings[stage] = time.perf_counter() - start
    return result


def run_pipeline(args) -> dict:
    """Run every stage into ``args.out_dir``; returns the report dictionary."""
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    resume = getattr(args, "resume", False)
    timings = {}
    a_true = true_vocab = None

    synthetic = args.docword is None
    docword, vocab_path = args.docword, args.vocab
    if synthetic:
        prefix = os.path.join(out, CORPUS_PREFIX)
        docword, vocab_path = prefix + ".docword.txt", prefix + ".vocab.txt"
        a_true_path = prefix + ".a_true.tsv"
        if not (resume and os.path.isfile(docword) and os.path.isfile(a_true_path)):
            _timed("synth", timings, run_synth, args, prefix)
        a_true, true_vocab = recover.read_topic_matrix(a_true_path)
    else:
        _require_file(docword, "docword file")
        _require_file(vocab_path, "vocab file")
    if args.k is None:
        if a_true is None:
            raise ConfigError("--k is required")
        args.k = a_true.shape[1]

    corpus_args = argparse.Namespace(**{**vars(args), "docword": docword, "vocab": vocab_path})
    corpus = None
    q_path = os.path.join(out, Q_FILE)
    if resume and os.path.isfile(q_path):
        cooc, vocab, doc_freq = read_q_artifacts(q_path)
    else:
        corpus = _timed("load-corpus", timings, load_corpus, corpus_args)
        cooc = _timed("q-build", timings, cooccur.build_q, corpus, args.deterministic,
                      args.threads)
        write_q_artifacts(q_path, cooc, corpus)
        vocab, doc_freq = list(corpus.vocab), corpus.document_frequency()

    anchors_path = os.path.join(out, ANCHORS_FILE)
    if resume and os.path.isfile(anchors_path):
        anchor_set = anchors_mod.read_anchors(anchors_path)
    else:
        anchor_set = _timed("anchors", timings, stage_anchors, cooc, doc_freq, args)
        anchors_mod.write_anchors(anchors_path, anchor_set, vocab)

    model_prefix = os.path.join(out, MODEL_PREFIX)
    if resume and os.path.isfile(model_prefix + ".topics.tsv"):
        a_hat, _ = recover.read_topic_matrix(model_prefix + ".topics.tsv")
    else:
        model = _timed("recover", timings, stage_recover, cooc, anchor_set, args)
        write_model(model_prefix, model, vocab)
        a_hat = model.a

    if corpus is None:
        corpus = _timed("load-corpus", timings, load_corpus, corpus_args)
    report = _timed("eval", timings, evaluate_model, a_hat, vocab, a_true, true_vocab, corpus,
                    args.top_n, timings)
    report.timings = dict(timings)
    report.extra["config"] = {"k": args.k, "method": args.method, "seed": args.seed,
                              "synthetic": synthetic}
    if synthetic:
        report.extra["config"].update({"docs": args.docs, "doc_len": args.doc_len,
                                       "prior": args.prior, "inject_anchors": args.inject_anchors,
                                       "corr_rho": args.corr_rho})
    report.write_json(os.path.join(out, REPORT_FILE))
    return report.to_dict()


# -- sweep -----------------------------------------------------------------

def parse_axes(specs, template):
    """``["docs=1,2", ...]`` to ``[(dest, [typed values]), ...]``."""
    axes = []
    for spec in specs:
        if "=" not in spec:
            raise ConfigError(f"axis {spec!r}: expected NAME=V1,V2,...")
        name, values = spec.split("=", 1)
        dest = name.strip().lstrip("-").replace("-", "_")
        if dest not in vars(template) or dest in ("axis", "out_dir", "config"):
            raise ConfigError(f"axis {name!r} is not a pipeline option")
        current = getattr(template, dest)
        raw = [v.strip() for v in values.split(",") if v.strip()]
        if not raw:
            raise ConfigError(f"axis {name!r} has no values")
        if isinstance(current, bool):
            typed = [v.lower() in ("1", "true", "yes", "on") for v in raw]
        elif isinstance(current, int):
            typed = [int(v) for v in raw]
        elif isinstance(current, float):
            typed = [float(v) for v in raw]
        else:
            typed = raw
        axes.append((dest, typed))
    return axes


def run_sweep(args) -> list[dict]:
    """One pipeline run per cell; failures are recorded and the sweep continues."""
    axes = parse_axes(args.axis, args)
    names = [dest for dest, _ in axes]
    os.makedirs(args.out_dir, exist_ok=True)
    rows = []
    cells = list(itertools.product(*[values for _, values in axes]))
    for index, values in enumerate(cells):
        cell_dir = os.path.join(args.out_dir, f"cell_{index:03d}")
        cell_args = argparse.Namespace(**vars(args))
        for dest, value in zip(names, values):
            setattr(cell_args, dest, value)
        cell_args.out_dir = cell_dir
        cell_args.resume = False
        row = {"cell": index, **dict(zip(names, values))}
        try:
            report = run_pipeline(cell_args)
        except (StageError, ConfigError) as exc:
            logger.warning("cell %d failed: %s", index, exc)
            row.update(status="failed", mean_l1="", error=str(exc))
        else:
            l1 = report.get("l1", {}).get("mean", "")
            row.update(status="ok", mean_l1=l1, error="")
        rows.append(row)
    with open(os.path.join(args.out_dir, "summary.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["cell", *names, "status", "mean_l1", "error"])
        writer.writeheader()
        writer.writerows(rows)
    return rows


# -- entry points ----------------------------------------------------------

def _cmd_build_q(args):
    corpus = load_corpus(args)
    cooc = _timed("q-build", {}, cooccur.build_q, corpus, args.deterministic, args.threads)
    write_q_artifacts(args.out, cooc, corpus)


def _cmd_anchors(args):
    cooc, vocab, doc_freq = read_q_artifacts(args.q)
    anchor_set = _timed("anchors", {}, stage_anchors, cooc, doc_freq, args)
    anchors_mod.write_anchors(args.out, anchor_set, vocab)


def _cmd_recover(args):
    cooc, vocab, _ = read_q_artifacts(args.q)
    anchor_set = anchors_mod.read_anchors(_require_file(args.anchors, "anchors file"))
    model = _timed("recover", {}, stage_recover, cooc, anchor_set, args)
    write_model(args.out_prefix, model, vocab)


def _cmd_synth(args):
    _timed("synth", {}, run_synth, args, args.out_prefix)


def _cmd_eval(args):
    if args.a_hat is None:
        raise ConfigError("--a-hat is required")
    a_hat, hat_vocab = read_word_topic_matrix(args.a_hat)
    a_true = true_vocab = None
    if args.a_true is not None:
        a_true, true_vocab = read_word_topic_matrix(args.a_true)
    corpus = None
    if args.corpus is not None:
        vocab_path = args.vocab
        if vocab_path is None:
            head, tail = os.path.split(args.corpus)
            vocab_path = os.path.join(head, tail.replace("docword", "vocab"))
        ns = argparse.Namespace(docword=args.corpus, vocab=vocab_path, min_df=1, max_df_frac=1.0,
                                min_doc_len=2)
        corpus = load_corpus(ns)
    report = _timed("eval", {}, evaluate_model, a_hat, hat_vocab, a_true, true_vocab, corpus,
                    args.top_n)
    report.write_json(args.out)


def _cmd_sweep(args):
    rows = run_sweep(args)
    failed = sum(row["status"] != "ok" for row in rows)
    print(f"{len(rows)} cells, {failed} failed; summary in "
          f"{os.path.join(args.out_dir, 'summary.csv')}")


COMMANDS = {"build-q": _cmd_build_q, "anchors": _cmd_anchors, "recover": _cmd_recover,
            "synth": _cmd_synth, "eval": _cmd_eval, "pipeline": run_pipeline,
            "sweep": _cmd_sweep}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ValueError, OSError) as exc:
        # unreadable or inconsistent artifacts between stages
        print(f"error: stage {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
