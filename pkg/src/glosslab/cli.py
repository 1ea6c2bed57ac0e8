"""Command-line entry point.

One subcommand per pipeline stage: data preparation, tokenizer and GloVe
training, model training for both families, prediction, evaluation,
dataset statistics, hyperparameter search, and an interactive
reverse-dictionary lookup loop.

Conventions: logs go to standard error and data to files; artifacts are
written atomically; every run directory receives a resolved configuration
snapshot (seed included) so the run can be reproduced bit-for-bit. A
`key = value` config file can seed any subcommand's flags; unknown keys
are rejected so typos cannot pass silently.

Exit codes: 0 success, 1 validation/configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import corpus as C
from . import defmod as DM
from . import glove as G
from . import hyperopt as H
from . import metrics as M
from . import revdict as RD
from . import tokenizer as TK
from .errors import ConfigError, ValidationError
from .serialize import atomic_write_json, atomic_write_text

log = logging.getLogger("glosslab")

DEFAULT_VOCAB = {"en": 8000, "es": 8500, "fr": 8500, "it": 8500, "ru": 8500}
DEFAULT_COVERAGE = {"ru": 0.9995}

DEFMOD_PRESETS = {"v3": {"rnn": "gru", "epochs": 300}, "v4": {"rnn": "gru", "epochs": 450}}


# ---------------------------------------------------------------------------
# config file support
# ---------------------------------------------------------------------------

def config_file_argv(parser: argparse.ArgumentParser, path) -> list[str]:
    """Turn `key = value` lines into an argv prefix for `parser`.

    Keys must match flags of the subcommand (strict, so typos fail loudly);
    flags given on the real command line override the file because argparse
    lets later occurrences win.
    """
    actions = {a.dest: a for a in parser._actions if a.dest != "help"}
    argv: list[str] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (s.strip() for s in line.split("=", 1))
            dest = key.replace("-", "_")
            if dest not in actions:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            action = actions[dest]
            flag = action.option_strings[-1]
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                if raw.lower() in ("1", "true", "yes", "on"):
                    argv.append(flag)
                elif raw.lower() not in ("0", "false", "no", "off"):
                    raise ConfigError(f"{path}:{lineno}: {key!r} wants a boolean, got {raw!r}")
            else:
                argv.extend([flag, raw])
    return argv


def parse_with_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    prefix = config_file_argv(parser, known.config) if known.config else []
    return parser.parse_args(prefix + list(argv))


def write_snapshot(out_dir, args: argparse.Namespace) -> None:
    os.makedirs(out_dir, exist_ok=True)
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    atomic_write_json(os.path.join(out_dir, "config.json"), resolved)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_prepare(args) -> int:
    records = C.load_dataset(args.input, args.lang)
    atomics, actions = C.transform_dataset(records)
    os.makedirs(args.out_dir, exist_ok=True)
    out_json = os.path.join(args.out_dir, f"{args.lang}.transformed.json")
    out_log = os.path.join(args.out_dir, f"{args.lang}.transform.log")
    tmp = out_json + ".write"
    C.save_dataset(atomics, tmp)
    os.replace(tmp, out_json)
    atomic_write_text(out_log, "".join(f"{rid}\t{act}\n" for rid, act in actions))
    write_snapshot(args.out_dir, args)
    log.info("prepared %d atomic glosses from %d records", len(atomics), len(records))
    return 0


def _stats_input(args) -> str:
    if args.input:
        return args.input
    if args.data_dir and args.split:
        return os.path.join(args.data_dir, f"{args.lang}.{args.split}.json")
    raise ConfigError("stats needs --input or (--data-dir and --split)")


STATS_HEADER = (
    f"{'set':<12}{'dict':>9} {'tokens':>9} {'glosses':>9} "
    f"{'mean':>7} {'st.dev':>7} {'min':>4} {'q25':>5} {'median':>6} {'q75':>5} {'max':>5}"
)


def cmd_stats(args) -> int:
    path = _stats_input(args)
    records = C.load_dataset(path, args.lang)
    print(STATS_HEADER)
    stats = C.gloss_stats(C.texts(records))
    print(f"{'original':<12}" + C.stats_row(stats))
    if args.transformed:
        atomics, _ = C.transform_dataset(records)
        print(f"{'transformed':<12}" + C.stats_row(C.gloss_stats(C.texts(atomics))))
    if args.vectors:
        print()
        print(f"{'vector':<8}{'min':>9} {'mean':>8} {'max':>8} {'abs-min':>10} {'abs-mean':>9} {'abs-max':>8}")
        for etype in C.EMBEDDING_TYPES:
            try:
                vs = C.vector_stats(records, etype)
            except ValidationError:
                continue
            print(f"{etype:<8}{vs.min:>9.2f} {vs.mean:>8.3f} {vs.max:>8.2f} "
                  f"{vs.abs_min:>10.2e} {vs.abs_mean:>9.3f} {vs.abs_max:>8.2f}")
    return 0


def _training_corpus(args) -> list[str]:
    records = C.load_dataset(args.input, args.lang)
    if args.mode == "transformed":
        atomics, _ = C.transform_dataset(records)
        return [a.text for a in atomics]
    return [r.gloss.lower() for r in records]


def cmd_tokenizer_train(args) -> int:
    texts = _training_corpus(args)
    vocab = args.vocab_size or DEFAULT_VOCAB[args.lang]
    coverage = args.coverage if args.coverage is not None else DEFAULT_COVERAGE.get(args.lang, 1.0)
    model = TK.train(texts, vocab_size=vocab, char_coverage=coverage)
    model.save(args.output)
    log.info("tokenizer with %d entries written to %s", model.vocab_size, args.output)
    return 0


def cmd_glove_train(args) -> int:
    records = C.load_dataset(args.input, args.lang)
    atomics, _ = C.transform_dataset(records)
    tok = TK.TokenizerModel.load(args.tokenizer)
    sequences = [TK.encode(tok, a.text) for a in atomics]
    cooc = G.build_cooc(sequences, window=args.window)
    model = G.train_glove(
        cooc, dim=args.dim, x_max=args.x_max, alpha=args.alpha, iters=args.iters,
        lr=args.lr, vocab_size=tok.vocab_size, seed=args.seed,
        parallel_threads=args.threads,
    )
    G.save_embeddings(args.output, model, tok.id_pieces)
    log.info("GloVe vectors for %d tokens written to %s", tok.vocab_size, args.output)
    return 0


def _glove_table(path, tok: TK.TokenizerModel, dim: int, seed: int) -> np.ndarray:
    """Token-embedding init from a vectors file; unseen pieces stay random."""
    from .rng import stream

    vecs = G.load_embeddings(path)
    rng = stream(seed, 99)
    table = rng.uniform(-0.5 / dim, 0.5 / dim, size=(tok.vocab_size, dim)).astype(np.float32)
    hit = 0
    for piece, i in tok.piece_ids.items():
        if piece in vecs and vecs[piece].shape[0] == dim:
            table[i] = vecs[piece]
            hit += 1
    log.info("initialized %d/%d token vectors from %s", hit, tok.vocab_size, path)
    return table


def cmd_defmod_train(args) -> int:
    if args.preset:
        preset = DEFMOD_PRESETS[args.preset]
        args.rnn = preset["rnn"] if args.rnn is None else args.rnn
        args.epochs = preset["epochs"] if args.epochs is None else args.epochs
    args.rnn = args.rnn or "gru"
    args.epochs = args.epochs or 300
    tok = TK.TokenizerModel.load(args.tokenizer)
    train_recs = C.load_dataset(args.train, args.lang)
    dev_recs = C.load_dataset(args.dev, args.lang)
    train_atomics, _ = C.transform_dataset(train_recs)
    dev_atomics, _ = C.transform_dataset(dev_recs)
    types = DM.dataset_embedding_types(train_atomics)
    spec = DM.SeedContextSpec(seed_source=args.seed_source, context_source=args.context_source)
    glove_table = (
        _glove_table(args.glove, tok, args.emb_dim, args.seed) if args.glove else None
    )
    model = DM.DefmodModel(
        vocab_size=tok.vocab_size, types=types, spec=spec, rnn_type=args.rnn,
        hidden=args.hidden, emb_dim=args.emb_dim, max_len=args.max_len,
        seed=args.seed, glove_table=glove_table,
    )
    train_ex = DM.prepare_examples(train_atomics, tok, types, max_len=args.max_len)
    dev_ex = DM.prepare_examples(dev_atomics, tok, types, max_len=args.max_len)
    report = DM.train_defmod(
        model, train_ex, dev_ex, epochs=args.epochs, lr=args.lr,
        batch_size=args.batch_size, seed=args.seed,
    )
    DM.save_checkpoint(args.out_dir, model, tok)
    atomic_write_json(os.path.join(args.out_dir, "report.json"), report.to_json_dict())
    write_snapshot(args.out_dir, args)
    log.info("defmod run complete: best dev loss %.4f", report.best_dev)
    return 0


def cmd_revdict_train(args) -> int:
    preset = RD.PRESETS[args.preset] if args.preset else None
    batch_size = args.batch_size or (preset.batch_size if preset else 2048)
    max_epochs = args.epochs or (preset.max_epochs if preset else 20)
    scheduler = args.scheduler or (preset.scheduler if preset else "cosine")
    targets = args.targets.split(",") if args.targets else ["sgns"]
    if preset and preset.multitask and len(targets) == 1:
        log.warning("preset %s is multi-task but a single target was given", args.preset)
    tok = TK.TokenizerModel.load(args.tokenizer)
    train_recs = C.load_dataset(args.train, args.lang)
    dev_recs = C.load_dataset(args.dev, args.lang)
    glove_table = (
        _glove_table(args.glove, tok, args.dim, args.seed) if args.glove else None
    )
    model = RD.RevdictModel(
        vocab_size=tok.vocab_size, head_types=targets, primary_head=args.primary or targets[0],
        dim=args.dim, num_layers=args.layers, num_heads=args.heads,
        dropout=args.dropout, aggregation=args.aggregation, max_len=args.max_len,
        relu_after_affine=args.relu_after_affine, seed=args.seed, glove_table=glove_table,
    )
    train_ex = RD.prepare_revdict_examples(train_recs, tok, model)
    dev_ex = RD.prepare_revdict_examples(dev_recs, tok, model)
    report = RD.train_revdict(
        model, train_ex, dev_ex, batch_size=batch_size, max_epochs=max_epochs,
        lr=args.lr, scheduler=scheduler, warmup_fraction=args.warmup,
        cosine_weight=args.cosine_weight, weight_decay=args.weight_decay, seed=args.seed,
    )
    RD.save_checkpoint(args.out_dir, model, tok)
    atomic_write_json(os.path.join(args.out_dir, "report.json"), report.to_json_dict())
    write_snapshot(args.out_dir, args)
    log.info("revdict run complete: best dev MSE %.4f", report.best_dev_mse)
    return 0


def _checkpoint_family(directory) -> str:
    with open(os.path.join(directory, "descriptor.json"), encoding="utf-8") as f:
        return json.load(f).get("family", "")


def cmd_predict(args) -> int:
    tok = TK.TokenizerModel.load(args.tokenizer)
    family = _checkpoint_family(args.checkpoint)
    out = []
    if family == "defmod":
        model = DM.load_checkpoint(args.checkpoint, tok)
        fallback = DM.load_checkpoint(args.fallback, tok) if args.fallback else None
        records = C.load_dataset(args.input, args.lang, require_gloss=False)
        for rec in records:
            embs = {t: rec.embedding(t) for t in model.types}
            missing = [t for t, v in embs.items() if v is None]
            if missing:
                raise ValidationError(f"record {rec.id!r} lacks embeddings {missing}")
            result = DM.generate_with_fallback(model, fallback, tok, embs,
                                               beam_width=args.beam_width)
            out.append({"id": rec.id, "gloss": result.text})
    elif family == "revdict":
        model = RD.load_checkpoint(args.checkpoint, tok)
        records = C.load_dataset(args.input, args.lang, require_embedding=False)
        for rec in records:
            vec = model.predict(tok, rec.gloss)[model.primary_head]
            out.append({"id": rec.id, model.primary_head: [float(x) for x in vec]})
    else:
        raise ValidationError(f"{args.checkpoint}: unknown checkpoint family {family!r}")
    atomic_write_text(args.output, json.dumps(out, ensure_ascii=False))
    log.info("wrote %d predictions to %s", len(out), args.output)
    return 0


def cmd_evaluate(args) -> int:
    with open(args.pred, encoding="utf-8") as f:
        preds = json.load(f)
    if not isinstance(preds, list) or not preds:
        raise ValidationError(f"{args.pred}: expected a non-empty JSON array")
    report = M.MetricReport(metadata={"pred": str(args.pred), "gold": str(args.gold)})
    lang = args.lang
    if "gloss" in preds[0]:
        gold = C.load_dataset(args.gold, lang, require_embedding=False)
        by_id = {r.id: r.gloss for r in gold}
        scores = []
        for p in preds:
            if p["id"] not in by_id:
                raise ValidationError(f"prediction id {p['id']!r} not in gold file")
            cand = C.normalize(p["gloss"]).split()
            ref = C.normalize(by_id[p["id"]]).split()
            scores.append(M.bleu(cand, ref))
        report.add(lang, "text", "bleu", float(np.mean(scores)))
    else:
        gold = C.load_dataset(args.gold, lang)
        by_id = {r.id: r for r in gold}
        types = [t for t in C.EMBEDDING_TYPES if t in preds[0]]
        if not types:
            raise ValidationError(f"{args.pred}: no embedding key found in predictions")
        for t in types:
            P, Gt = [], []
            for p in preds:
                if p["id"] not in by_id:
                    raise ValidationError(f"prediction id {p['id']!r} not in gold file")
                gvec = by_id[p["id"]].embedding(t)
                if gvec is None:
                    raise ValidationError(f"gold record {p['id']!r} lacks {t!r}")
                P.append(np.asarray(p[t], dtype=np.float64))
                Gt.append(gvec)
            P, Gt = np.stack(P), np.stack(Gt)
            report.add(lang, t, "mse", M.mse(P, Gt))
            report.add(lang, t, "cos", M.cos(P, Gt))
            report.add(lang, t, "rnk", M.rnk(P, Gt))
    if args.output:
        report.save(args.output)
    print(report.to_table())
    return 0


def cmd_hyperopt(args) -> int:
    tok = TK.TokenizerModel.load(args.tokenizer)
    train_recs = C.load_dataset(args.train, args.lang)
    dev_recs = C.load_dataset(args.dev, args.lang)
    targets = args.targets.split(",") if args.targets else ["sgns"]

    def build_and_score(layers, heads, lr, dropout, warmup, weight_decay, seed):
        model = RD.RevdictModel(
            vocab_size=tok.vocab_size, head_types=targets, dim=args.dim,
            num_layers=layers, num_heads=heads, dropout=dropout,
            max_len=args.max_len, seed=seed,
        )
        train_ex = RD.prepare_revdict_examples(train_recs, tok, model)
        dev_ex = RD.prepare_revdict_examples(dev_recs, tok, model)
        RD.train_revdict(model, train_ex, dev_ex, batch_size=args.batch_size,
                         max_epochs=args.epochs_per_trial, lr=lr,
                         warmup_fraction=warmup, weight_decay=weight_decay, seed=seed)
        return RD.evaluate_revdict(model, dev_ex)["mse"]

    if args.mode == "grid":
        best, trials = H.grid_search(
            {"heads": [1, 2, 4, 8], "layers": [1, 2, 4, 8]},
            lambda cfg, seed: build_and_score(cfg["layers"], cfg["heads"], args.lr,
                                              0.1, 0.1, 0.01, seed),
            seed=args.seed,
        )
        payload = {"best": best,
                   "trials": [t.to_json_dict() for t in trials]}
        atomic_write_json(args.output, payload)
        print(json.dumps(best))
    else:
        space = H.SearchSpace([
            H.continuous("lr", 1e-5, 1e-2, log=True),
            H.continuous("dropout", 0.0, 0.5),
            H.continuous("warmup", 0.0, 0.3),
            H.continuous("weight_decay", 1e-6, 1e-1, log=True),
        ])
        best, history = H.bho_run(
            space,
            lambda cfg, seed: build_and_score(args.layers, args.heads, cfg["lr"],
                                              cfg["dropout"], cfg["warmup"],
                                              cfg["weight_decay"], seed),
            n_points=args.points,
            seed=args.seed,
            history_path=args.output,
        )
        print(json.dumps(best.to_json_dict()))
    return 0


def cmd_query(args) -> int:
    tok = TK.TokenizerModel.load(args.tokenizer)
    model = RD.load_checkpoint(args.checkpoint, tok)
    records = C.load_dataset(args.index_data, args.lang)
    index = RD.build_index(records, args.type)
    for line in sys.stdin:
        definition = line.strip()
        if not definition:
            continue
        hits = RD.query(model, tok, index, definition, k=args.k)
        print(f"{'rank':<5}{'cosine':>8}  {'id':<16}gloss")
        for rank, (rid, gloss, sim) in enumerate(hits, 1):
            print(f"{rank:<5}{sim:>8.3f}  {rid:<16}{gloss}")
        sys.stdout.flush()
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value file seeding these flags")
    p.add_argument("--lang", required=True, type=C.Language, help="dataset language")
    p.add_argument("--seed", type=int, default=0, help="root random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glosslab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="transform a dataset into atomic glosses")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("stats", help="gloss and vector statistics tables")
    _add_common(p)
    p.add_argument("--input")
    p.add_argument("--data-dir")
    p.add_argument("--split", choices=["train", "dev", "test"])
    p.add_argument("--transformed", action="store_true")
    p.add_argument("--vectors", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("tokenizer-train", help="train the unigram subword tokenizer")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--coverage", type=float)
    p.add_argument("--mode", choices=["transformed", "lowercase"], default="transformed")
    p.set_defaults(func=cmd_tokenizer_train)

    p = sub.add_parser("glove-train", help="train GloVe vectors on atomic glosses")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--x-max", type=float, default=10.0)
    p.add_argument("--alpha", type=float, default=0.75)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_glove_train)

    p = sub.add_parser("defmod-train", help="train the gloss generator")
    _add_common(p)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--preset", choices=sorted(DEFMOD_PRESETS))
    p.add_argument("--glove", help="vectors file for token-embedding init")
    p.add_argument("--seed-source", default="sgns")
    p.add_argument("--context-source", default="concat")
    p.add_argument("--rnn", choices=["gru", "lstm"])
    p.add_argument("--hidden", type=int, default=512)
    p.add_argument("--emb-dim", type=int, default=256)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.set_defaults(func=cmd_defmod_train)

    p = sub.add_parser("revdict-train", help="train the reverse-dictionary regressor")
    _add_common(p)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--preset", choices=sorted(RD.PRESETS))
    p.add_argument("--glove", help="vectors file for token-embedding init (off by default)")
    p.add_argument("--targets", help="comma-separated embedding types (heads)")
    p.add_argument("--primary", help="embedding type reported as the prediction")
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--aggregation", choices=RD.AGGREGATIONS, default="average")
    p.add_argument("--max-len", type=int, default=256)
    p.add_argument("--relu-after-affine", action="store_true")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--scheduler", choices=["cosine", "plateau"])
    p.add_argument("--warmup", type=float, default=0.1)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--cosine-weight", type=float, default=0.0)
    p.set_defaults(func=cmd_revdict_train)

    p = sub.add_parser("predict", help="produce challenge-shaped predictions")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--beam-width", type=int, default=4)
    p.add_argument("--fallback", help="fallback checkpoint for deformed outputs")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against gold data")
    _add_common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("hyperopt", help="grid or Bayesian hyperparameter search")
    _add_common(p)
    p.add_argument("--mode", choices=["grid", "bho"], required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--targets")
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--max-len", type=int, default=256)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--epochs-per-trial", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--points", type=int, default=30)
    p.set_defaults(func=cmd_hyperopt)

    p = sub.add_parser("query", help="interactive reverse-dictionary lookup")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--index-data", required=True)
    p.add_argument("--type", default="sgns", choices=C.EMBEDDING_TYPES)
    p.add_argument("-k", type=int, default=10)
    p.set_defaults(func=cmd_query)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_help(sys.stderr)
        return 1
    command = argv[0]
    try:
        sub_actions = next(a for a in parser._actions
                           if isinstance(a, argparse._SubParsersAction))
        if command in sub_actions.choices:
            args = parse_with_config(sub_actions.choices[command], argv[1:])
            args.command = command
        else:
            args = parser.parse_args(argv)
        return args.func(args)
    except (ValidationError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: missing file: {e.filename or e}", file=sys.stderr)
        return 1
    except SystemExit as e:
        # argparse raises SystemExit: code 0 for --help, 2 for usage errors,
        # which count as validation failures here
        return 1 if e.code == 2 else int(e.code or 0)
    except KeyboardInterrupt:
        return 130
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
