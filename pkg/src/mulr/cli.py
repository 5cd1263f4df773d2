"""Command-line front end.

Subcommands: gen-synthetic, build-corpus, embed, train, calibrate,
predict, evaluate, pipeline, report. Exit codes: 0 success, 1 usage,
2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import dataset as dataset_mod
from .embeddings import (SgnsConfig, load_embeddings, save_embeddings,
                         train_sgns, train_subword_sgns)
from .corpus import build_subword_index, build_vocabulary
from .errors import DataError, MulrError, NumericError
from .metrics import build_report, significance_matrix
from .pipeline import (PipelineRun, load_config, read_predictions,
                       run_pipeline, save_descriptions)
from .synthetic import generate, generate_order_corpus, preset_spec
from .typer import (calibrate_thresholds, load_model, predict_with_scores,
                    save_model)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _cmd_gen_synthetic(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.preset == "order":
        sentences, a_ids, b_ids = generate_order_corpus(seed=args.seed)
        corpus_path = out / "order-corpus.txt"
        with corpus_path.open("w", encoding="utf-8") as fh:
            for sent in sentences:
                fh.write(" ".join(sent) + "\n")
        classes_path = out / "order-classes.tsv"
        with classes_path.open("w", encoding="utf-8") as fh:
            for eid in a_ids:
                fh.write(f"{eid}\ta\n")
            for eid in b_ids:
                fh.write(f"{eid}\tb\n")
        print(f"wrote {corpus_path} and {classes_path}")
        return 0
    spec = preset_spec(args.preset, seed=args.seed,
                       entities_per_type=args.entities_per_type,
                       n_types=args.types)
    data = generate(spec)
    corpus_mod.save_corpus(data.corpus, out / "corpus.txt")
    dataset_mod.save_dataset(data.split, out / "dataset.tsv")
    dataset_mod.save_type_system(data.type_system, out / "hierarchy.tsv")
    corpus_mod.save_notable(data.notable, out / "notable.tsv")
    written = ["corpus.txt", "dataset.tsv", "hierarchy.tsv", "notable.tsv"]
    if data.descriptions is not None:
        save_descriptions(data.descriptions, out / "descriptions.tsv")
        written.append("descriptions.tsv")
    print(f"wrote {', '.join(written)} to {out}")
    return 0


def _cmd_build_corpus(args) -> int:
    ts = dataset_mod.load_type_system(args.hierarchy)
    split = dataset_mod.load_dataset(args.dataset, ts)
    annotated = corpus_mod.load_corpus(args.corpus)
    notable = corpus_mod.load_notable(args.notable)
    exclude = frozenset(e.id for e in split.test)
    stream = corpus_mod.build_three_copy_corpus(annotated, notable, exclude)
    with Path(args.out).open("w", encoding="utf-8") as fh:
        for sent in stream:
            fh.write(" ".join(sent) + "\n")
    protected = sorted(set(notable) | set(notable.values())
                       | {e.id for e in split.all_entities()})
    protected_path = Path(args.protected_out or
                          str(args.out) + ".protected.txt")
    protected_path.write_text("\n".join(protected) + "\n", encoding="utf-8")
    print(f"wrote {args.out} ({len(stream)} sentences) and {protected_path}")
    return 0


def _cmd_embed(args) -> int:
    with Path(args.corpus).open(encoding="utf-8") as fh:
        stream = [line.split() for line in fh if line.strip()]
    protected = frozenset()
    if args.protected:
        protected = frozenset(
            Path(args.protected).read_text(encoding="utf-8").split())
    threads = int(os.environ.get("MULR_THREADS", args.threads))
    vocab = build_vocabulary(stream, args.min_count, protected)
    cfg = SgnsConfig(dim=args.dim, negatives=args.neg, window=args.window,
                     epochs=args.epochs, learning_rate=args.lr,
                     seed=args.seed, positional=args.mode == "sskip",
                     threads=threads)
    if args.mode == "subword":
        index = build_subword_index(vocab, n_min=args.n_min, n_max=args.n_max,
                                    min_count=args.ngram_min_count)
        store = train_subword_sgns(stream, vocab, index, cfg)
    else:
        store = train_sgns(stream, vocab, cfg)
    save_embeddings(store, args.out)
    print(f"wrote {args.out} ({len(store)} vectors, dim {store.dim})")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.levels:
        cfg.levels = args.levels
    run = PipelineRun(cfg)
    model = run.train_model()
    if args.out:
        save_model(model, args.out, config_hash=run.model_key(),
                   seed=cfg.seed)
        print(f"wrote {args.out}")
    else:
        print(f"model cached at {run.artifacts['model']}")
    return 0


def _cmd_calibrate(args) -> int:
    cfg = load_config(args.config)
    model = load_model(args.model)
    ts = model.type_system
    split = dataset_mod.refine(dataset_mod.load_dataset(cfg.dataset_path, ts),
                               ts)
    calibrate_thresholds(model, list(split.dev))
    out = args.out or args.model
    save_model(model, out, seed=cfg.seed)
    print(f"wrote {out}")
    return 0


def _cmd_predict(args) -> int:
    model = load_model(args.model)
    split = dataset_mod.load_dataset(args.entities, model.type_system)
    with Path(args.out).open("w", encoding="utf-8") as fh:
        for e in split.all_entities():
            scored = predict_with_scores(model, e)
            cell = ",".join(f"{t}:{s:.6f}" for t, s in scored)
            fh.write(f"{e.id}\t{cell}\n")
    print(f"wrote {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    ts = dataset_mod.load_type_system(args.hierarchy)
    split = dataset_mod.refine(dataset_mod.load_dataset(args.dataset, ts), ts)
    predictions = read_predictions(args.preds)
    report = build_report(predictions, split, ts)
    print(report.to_text_table())
    if args.out:
        Path(args.out).write_text("\n".join(report.to_tsv_rows()) + "\n",
                                  encoding="utf-8")
        print(f"wrote {args.out}")
    return 0


def _cmd_pipeline(args) -> int:
    results = []
    for config_path in args.configs:
        cfg = load_config(config_path)
        report, artifacts = run_pipeline(cfg)
        name = Path(config_path).stem
        print(f"== {name} ==")
        print(report.to_text_table())
        print(f"report: {artifacts['report_tsv']}")
        results.append((name, report.correct_count, report.total))
    if len(results) > 1:
        matrix = significance_matrix(results, alpha=args.alpha)
        print("significance (row better than column -> *):")
        print(matrix)
    return 0


def _cmd_report(args) -> int:
    results = []
    for path in args.reports:
        rows = {}
        counts = {}
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            if not raw.strip() or raw.startswith("#"):
                continue
            sl, metric, value = raw.split("\t")
            if metric == "count":
                counts[sl] = int(value)
            elif metric == "correct_count":
                counts["__correct"] = int(value)
            else:
                rows[(sl, metric)] = float(value)
        name = Path(path).stem
        print(f"== {name} ==")
        for sl in ("all", "head", "tail", "known", "unknown"):
            if (sl, "accuracy") not in rows:
                continue
            print(f"{sl:10s} n={counts.get(sl, 0):6d} "
                  f"acc={rows[(sl, 'accuracy')]:.3f} "
                  f"mic={rows[(sl, 'micro_f1')]:.3f} "
                  f"mac={rows[(sl, 'entity_macro_f1')]:.3f}")
        if "__correct" in counts and "all" in counts:
            results.append((name, counts["__correct"], counts["all"]))
    if len(results) > 1:
        print("significance (row better than column -> *):")
        print(significance_matrix(results, alpha=args.alpha))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mulr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic experiment")
    p.add_argument("--preset", default="mixed",
                   choices=["mixed", "context", "suffix", "subword", "order"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--entities-per-type", type=int, default=200)
    p.add_argument("--types", type=int, default=10)
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("build-corpus", help="emit the three-copy token stream")
    p.add_argument("--corpus", required=True)
    p.add_argument("--notable", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--protected-out")
    p.set_defaults(func=_cmd_build_corpus)

    p = sub.add_parser("embed", help="train token embeddings")
    p.add_argument("--mode", choices=["skip", "sskip", "subword"],
                   default="skip")
    p.add_argument("--dim", type=int, default=200)
    p.add_argument("--neg", type=int, default=10)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--min-count", type=int, default=100)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.025)
    p.add_argument("--protected", help="file of tokens exempt from min-count")
    p.add_argument("--n-min", type=int, default=3)
    p.add_argument("--n-max", type=int, default=6)
    p.add_argument("--ngram-min-count", type=int, default=5)
    p.add_argument("corpus")
    p.add_argument("out")
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("train", help="train the typer per a config file")
    p.add_argument("--levels", help="override the config's level list")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("calibrate", help="recalibrate thresholds on dev")
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("predict", help="write type predictions")
    p.add_argument("--model", required=True)
    p.add_argument("--entities", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against a dataset")
    p.add_argument("--preds", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("pipeline", help="run configs end to end")
    p.add_argument("configs", nargs="+")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("report", help="render saved report files")
    p.add_argument("reports", nargs="+")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"mulr: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, MulrError) as exc:
        print(f"mulr: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"mulr: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
