"""Command-line pipeline: stats, curate, train, embed, eval, normalize.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import _kernels, __version__
from .config import ConfigError, RunConfig
from .corpus import Corpus, corpus_stats, file_digest, load_corpus
from .curation import (
    SCHEMES,
    TEST,
    TRAIN,
    curate,
    normalize_labels,
    read_labels,
    read_split,
    write_labels,
    write_split,
)
from .errors import ProvenanceError, RefuseError
from .model import checkpoint_digest, load_checkpoint
from .retrieval import embed_corpus, evaluate, load_embeddings, pool_evaluate
from .training import train

log = logging.getLogger("refuse")

SPLIT_FILE = "split.jsonl"
LABELS_FILE = "labels.jsonl"
SUMMARY_FILE = "curation_summary.json"


class UsageError(Exception):
    pass


def _dump_json(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _need_file(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"missing required {what}")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _need_seed(cfg: RunConfig, cmd: str) -> int:
    if cfg.seed is None:
        raise UsageError(f"'{cmd}' is stochastic; pass --seed or set seed in the config file")
    return cfg.seed


def _out_dir(args) -> Path:
    out = Path(getattr(args, "out", None) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _side_records(corpus: Corpus, curated: Path, side: str):
    split = read_split(curated / SPLIT_FILE)
    if side == "all":
        return [r for r in corpus if r.id in split.side]
    return [r for r in corpus if split.side.get(r.id) == side]


def cmd_stats(args, cfg: RunConfig) -> int:
    corpus_path = _need_file(args.corpus, "corpus path")
    stats = corpus_stats(load_corpus(corpus_path))
    doc = {"corpus_digest": file_digest(corpus_path), **stats.to_json()}
    if getattr(args, "out", None):
        _dump_json(doc, _out_dir(args) / "stats.json")
    print(json.dumps({k: doc[k] for k in ("n_records", "n_binaries", "n_names", "corpus_digest")}))
    return 0


def cmd_curate(args, cfg: RunConfig) -> int:
    corpus_path = _need_file(args.corpus, "corpus path")
    seed = _need_seed(cfg, "curate")
    out = _out_dir(args)
    outputs = [out / SPLIT_FILE, out / LABELS_FILE, out / SUMMARY_FILE]
    knobs = cfg.curation_kwargs()
    stage = "load"
    try:
        corpus = load_corpus(corpus_path)
        stage = "curate"
        result = curate(corpus, seed=seed, **knobs)
        stage = "write"
        write_split(result.split, corpus, outputs[0])
        write_labels(result.labels, outputs[1], order=[r.id for r in corpus])
        summary = {
            "corpus_digest": file_digest(corpus_path),
            "seed": seed,
            "config": knobs,
            "stage_counts": result.stage_counts,
            "n_train": len(result.train),
            "n_test": len(result.test),
            "split_digest": file_digest(outputs[0]),
            "labels_digest": file_digest(outputs[1]),
        }
        _dump_json(summary, outputs[2])
    except Exception as exc:
        for p in outputs:
            p.unlink(missing_ok=True)
        raise RefuseError(f"curate failed at stage '{stage}': {exc}") from exc
    print(json.dumps({"out": str(out), "n_train": summary["n_train"], "n_test": summary["n_test"]}))
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    corpus_path = _need_file(args.corpus, "corpus path")
    curated = _need_file(args.curated, "curated directory")
    _need_file(curated / SPLIT_FILE, "split sidecar")
    _need_file(curated / LABELS_FILE, "label sidecar")
    _need_seed(cfg, "train")
    model_cfg = cfg.model_config()
    train_cfg = cfg.train_config()
    out = _out_dir(args)
    corpus = load_corpus(corpus_path)
    records = _side_records(corpus, curated, TRAIN)
    table = read_labels(curated / LABELS_FILE).restrict(r.id for r in records)
    provenance = {
        "corpus_digest": file_digest(corpus_path),
        "split_digest": file_digest(curated / SPLIT_FILE),
        "labels_digest": file_digest(curated / LABELS_FILE),
    }
    ckpt = out / "checkpoint"
    params, entries = train(
        records, table, model_cfg, train_cfg,
        checkpoint_dir=ckpt, log_path=out / "train_log.jsonl",
        resume=args.resume, provenance=provenance, max_steps=args.max_steps,
    )
    last = entries[-1]["loss"] if entries else None
    print(json.dumps({"checkpoint": str(ckpt), "steps": len(entries), "final_loss": last}))
    return 0


def cmd_embed(args, cfg: RunConfig) -> int:
    corpus_path = _need_file(args.corpus, "corpus path")
    ckpt = _need_file(args.checkpoint, "checkpoint directory")
    params, model_cfg = load_checkpoint(ckpt)
    requested = cfg.requested_model_keys()
    mismatched = {k: (v, getattr(model_cfg, k)) for k, v in requested.items() if getattr(model_cfg, k) != v}
    if mismatched:
        raise ProvenanceError(
            "checkpoint does not match the requested model config: "
            + ", ".join(f"{k} requested {a}, checkpoint has {b}" for k, (a, b) in mismatched.items())
        )
    corpus = load_corpus(corpus_path)
    if args.side == "corpus":
        records = list(corpus)
    else:
        curated = _need_file(args.curated, "curated directory (needed for --side)")
        records = _side_records(corpus, curated, args.side)
    out = _out_dir(args) / "embeddings"
    provenance = {
        "checkpoint_digest": checkpoint_digest(ckpt),
        "corpus_digest": file_digest(corpus_path),
        "side": args.side,
        "config": model_cfg.to_dict(),
    }
    emb = embed_corpus(params, model_cfg, records, out, provenance)
    print(json.dumps({"embeddings": str(out), "count": len(emb), "dim": model_cfg.output_dim}))
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    emb_dir = _need_file(args.embeddings, "embeddings directory")
    labels_path = _need_file(args.labels, "label sidecar")
    emb = load_embeddings(emb_dir)
    summary_path = labels_path.parent / SUMMARY_FILE
    digests = {
        "labels_digest": file_digest(labels_path),
        "vectors_digest": emb.header.get("vectors_digest"),
        "checkpoint_digest": emb.header.get("checkpoint_digest"),
        "corpus_digest": emb.header.get("corpus_digest"),
    }
    if summary_path.exists():
        summary = json.loads(summary_path.read_text(encoding="utf-8"))
        if summary.get("labels_digest") not in (None, digests["labels_digest"]):
            raise ProvenanceError("label sidecar differs from the one recorded in the curation summary")
        if emb.header.get("corpus_digest") != summary.get("corpus_digest"):
            raise ProvenanceError("embeddings and labels derive from different corpora")

    base = read_labels(labels_path)
    schemes = args.schemes.split(",") if args.schemes else (cfg.list_of("schemes") or [cfg.get("scheme", base.scheme)])
    for s in schemes:
        if s not in SCHEMES:
            raise UsageError(f"unknown scheme {s!r}; choose from {', '.join(SCHEMES)}")
    pools = [int(p) for p in args.pool_sizes.split(",")] if args.pool_sizes else cfg.list_of("pool_sizes", int)
    index_cfg = cfg.index_config()
    seed = cfg.seed or 0
    out = _out_dir(args)
    suffix = len(schemes) > 1
    headline = []
    for scheme in schemes:
        table = normalize_labels(base, scheme)
        labels = {rid: table.label_of[rid] for rid in table.label_of}
        report = evaluate(emb, labels, index_cfg)
        report.digests = digests
        report.extra = {"scheme": scheme, "n_labels": table.restrict(emb.ids).n_labels()}
        name = f"eval_report_{scheme}.json" if suffix else "eval_report.json"
        report.write(out / name)
        headline.append({"report": str(out / name), "scheme": scheme,
                         "mrr": [report.mrr_lower, report.mrr_upper],
                         "mrr_exact": report.mrr_exact, "recall@1": report.recall[1]})
        for pool in pools:
            pr = pool_evaluate(emb, labels, pool, cfg.get("pool_queries"), seed)
            pr.digests = digests
            pr.extra = {"scheme": scheme}
            pname = f"pool_{pool}_{scheme}.json" if suffix else f"pool_{pool}.json"
            pr.write(out / pname)
            headline.append({"report": str(out / pname), "pool_size": pool, "mrr": pr.mrr_exact})
    for h in headline:
        print(json.dumps(h))
    return 0


def cmd_normalize(args, cfg: RunConfig) -> int:
    labels_path = _need_file(args.labels, "label sidecar")
    scheme = args.scheme or cfg.get("scheme")
    if scheme not in SCHEMES:
        raise UsageError(f"--scheme must be one of {', '.join(SCHEMES)}")
    table = read_labels(labels_path)
    order = list(table.label_of)
    out = _out_dir(args) / f"labels_{scheme}.jsonl"
    write_labels(normalize_labels(table, scheme), out, order=order)
    print(json.dumps({"labels": str(out), "scheme": scheme}))
    return 0


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    d = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=d, help="INI-style key=value config file")
    p.add_argument("--seed", type=int, default=d, help="seed for every stochastic step")
    p.add_argument("--threads", type=int, default=d, help="numba worker threads")
    p.add_argument("--out", default=d, help="output directory (default: current directory)")
    p.add_argument("-v", "--verbose", action="store_true", default=d if suppress else False)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refuse", parents=[_global_flags(False)],
        description="Raw-byte function similarity: curate, train, embed, evaluate.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({_kernels.BACKEND})")
    sub = parser.add_subparsers(dest="command", required=True)
    common = [_global_flags(True)]

    p = sub.add_parser("stats", parents=common, help="corpus summary")
    p.add_argument("--corpus")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("curate", parents=common, help="split, dedup, label")
    p.add_argument("--corpus")
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("train", parents=common, help="triplet training")
    p.add_argument("--corpus")
    p.add_argument("--curated", help="directory written by 'curate'")
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint")
    p.add_argument("--max-steps", type=int, help="stop after this many global steps (resumable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", parents=common, help="embed corpus functions")
    p.add_argument("--corpus")
    p.add_argument("--checkpoint")
    p.add_argument("--curated")
    p.add_argument("--side", choices=["corpus", TRAIN, TEST, "all"], default="corpus")
    for key in ("channels", "output_dim", "embed_dim", "window", "max_len"):
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=int)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("eval", parents=common, help="MRR / recall evaluation")
    p.add_argument("--embeddings")
    p.add_argument("--labels")
    p.add_argument("--schemes", help="comma list of label schemes")
    p.add_argument("--pool-sizes", help="comma list of pool sizes for the pool diagnostic")
    p.add_argument("--index-kind", choices=["Exact", "ApproxHNSW", "auto"])
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("normalize", parents=common, help="apply a label scheme to a sidecar")
    p.add_argument("--labels")
    p.add_argument("--scheme", choices=list(SCHEMES))
    p.set_defaults(func=cmd_normalize)
    return parser


def _overrides(args) -> dict:
    keys = ("seed", "epochs", "channels", "output_dim", "embed_dim", "window", "max_len", "index_kind", "k")
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "config", None) and not Path(args.config).exists():
            raise UsageError(f"config file not found: {args.config}")
        cfg = RunConfig.load(getattr(args, "config", None), _overrides(args))
        _kernels.set_threads(getattr(args, "threads", None) or 0)
        return args.func(args, cfg)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"refuse {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (RefuseError, ValueError, OSError) as exc:
        print(f"refuse {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print(f"refuse {args.command}: interrupted", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
