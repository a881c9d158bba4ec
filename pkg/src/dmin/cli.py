"""Command-line front end for training, evaluation, and analysis.

Subcommands mirror the pipeline stages: ``synth`` makes a vector dataset,
``pretrain`` fits the encoder and base classifier, ``metatrain`` runs
episode training, ``eval`` measures few-shot accuracy, ``ablate`` runs the
variant table, and ``separation`` writes before/after support vectors with
silhouette scores.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
malformed files, mismatched shapes), 3 numeric failure (divergence,
overflow).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from . import numerics as nm
from .encoder import EncoderConfig
from .episodes import (DataError, Dataset, gen_synthetic,
                       load_jsonl_vectors, load_tsv, save_jsonl_vectors)
from .harness import (TrainConfig, evaluate, meta_train, pretrain,
                      run_ablation_suite, separation_report,
                      train_config_from_dict)
from .model import CheckpointError, Model, load_checkpoint, save_checkpoint

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; this tool reserves 2
    for data problems, so usage errors are remapped to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def load_dataset(path) -> Dataset:
    """Pick the loader from the file extension (.tsv text, .jsonl vectors)."""
    name = str(path)
    if name.endswith(".tsv"):
        return load_tsv(path)
    if name.endswith(".jsonl"):
        return load_jsonl_vectors(path)
    raise DataError(
        f"cannot tell the format of {name!r}: expected .tsv (label<TAB>text "
        "lines) or .jsonl (vector records)")


def _read_json_object(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise DataError(f"cannot read config {path}: {err}") from err
    if not isinstance(raw, dict):
        raise DataError(f"{path}: config must be a JSON object")
    return raw


def _config_for(path, dataset: Dataset) -> TrainConfig:
    """Load a train config and reconcile its encoder with the dataset.

    When the file does not pin an encoder (or no file is given), the
    encoder is inferred from the data: vectors use a pass-through of the
    observed dimension, text uses feature hashing.  An explicitly
    configured encoder that cannot consume the data is an error.
    """
    raw = _read_json_object(path) if path is not None else {}
    cfg = train_config_from_dict(raw)
    explicit = "encoder" in raw
    enc = cfg.encoder
    if dataset.dim is None:  # text payloads
        if enc.kind == "feature_hash":
            return cfg
        if explicit:
            raise DataError(
                "text data needs encoder.kind='feature_hash', config says "
                f"{enc.kind!r}")
        return replace(cfg, encoder=EncoderConfig(kind="feature_hash"))
    if enc.kind == "precomputed" and enc.embed_dim == dataset.dim:
        return cfg
    if explicit:
        raise DataError(
            f"config encoder (kind={enc.kind!r}, embed_dim={enc.embed_dim}) "
            f"cannot consume vector data of dimension {dataset.dim}")
    return replace(cfg, encoder=EncoderConfig(kind="precomputed",
                                              embed_dim=dataset.dim))


def _check_data_matches(model: Model, dataset: Dataset) -> None:
    if dataset.dim is None:
        if model.config.encoder.kind != "feature_hash":
            raise DataError(
                "model was built for vector inputs "
                f"({model.config.encoder.kind!r} encoder), data is text")
    elif dataset.dim != model.config.embed_dim:
        raise DataError(
            f"data vectors have dimension {dataset.dim}, model expects "
            f"{model.config.embed_dim}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_pretrain(args) -> int:
    dataset = load_dataset(args.data)
    cfg = _config_for(args.config, dataset)
    result = pretrain(dataset, cfg)
    save_checkpoint(result.model, args.out)
    print(f"pretrained {cfg.stage1.steps} steps over "
          f"{dataset.num_classes} classes; train accuracy "
          f"{result.train_accuracy:.4f}")
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_metatrain(args) -> int:
    model = load_checkpoint(args.model)
    dataset = load_dataset(args.data)
    _check_data_matches(model, dataset)
    raw = _read_json_object(args.config) if args.config is not None else {}
    cfg = train_config_from_dict(raw)
    result = meta_train(model, dataset, cfg)
    save_checkpoint(model, args.out)
    tail = (f"; final loss {result.losses[-1]:.4f}" if result.losses else "")
    print(f"meta-trained {cfg.stage2.episodes} episodes "
          f"({cfg.stage2.C}-way {cfg.stage2.K}-shot){tail}")
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    dataset = load_dataset(args.data)
    _check_data_matches(model, dataset)
    raw = _read_json_object(args.config) if args.config is not None else {}
    cfg = train_config_from_dict(raw)
    report = evaluate(model, dataset, cfg, episodes=args.episodes,
                      way=args.way, shot=args.shot, queries=args.queries,
                      seed=args.seed, ablation=args.ablation)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    spread = ("n/a" if report.std_undefined
              else f"{report.std_accuracy:.4f}")
    print(f"mean_accuracy {report.mean_accuracy:.4f} (std {spread}) over "
          f"{report.episodes} episodes in {report.wall_time_ms} ms")
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    dataset = gen_synthetic(args.classes, args.per_class, args.dim,
                            args.separation, args.sigma, args.seed)
    save_jsonl_vectors(dataset, args.out)
    print(f"wrote {dataset.num_items} vectors ({dataset.num_classes} "
          f"classes, dim {args.dim}) to {args.out}")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    dataset = load_dataset(args.data)
    cfg = _config_for(args.config, dataset)
    rows = run_ablation_suite(dataset, cfg, csv_path=args.out)
    for row in rows:
        print(f"{row['model']:<8s} r={row['iterations']}  "
              f"1-shot {row['acc_1shot']:.4f}  5-shot {row['acc_5shot']:.4f}")
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_separation(args) -> int:
    model = load_checkpoint(args.model)
    dataset = load_dataset(args.data)
    _check_data_matches(model, dataset)
    rep = separation_report(model, dataset, way=args.way, shot=args.shot,
                            seed=args.seed, csv_path=args.out_csv)
    print(f"silhouette before {rep.silhouette_before:.4f}, "
          f"after {rep.silhouette_after:.4f}")
    print(f"wrote {args.out_csv}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dmin",
                     description="Few-shot text classification with dynamic "
                                 "memory routing.")
    sub = parser.add_subparsers(dest="command", metavar="command",
                                required=True)

    p = sub.add_parser("pretrain",
                       help="fit the encoder and base-class classifier")
    p.add_argument("--config", help="train config JSON")
    p.add_argument("--data", required=True, help="base-class dataset "
                   "(.tsv or .jsonl)")
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("metatrain",
                       help="episode training of the full pipeline")
    p.add_argument("--config", help="train config JSON")
    p.add_argument("--model", required=True, help="checkpoint to start from")
    p.add_argument("--data", required=True, help="episode source dataset")
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.set_defaults(func=_cmd_metatrain)

    p = sub.add_parser("eval", help="few-shot accuracy over fresh episodes")
    p.add_argument("--model", required=True, help="trained checkpoint")
    p.add_argument("--data", required=True, help="test-class dataset")
    p.add_argument("--episodes", type=int, metavar="E")
    p.add_argument("--way", type=int, metavar="C")
    p.add_argument("--shot", type=int, metavar="K")
    p.add_argument("--queries", type=int, metavar="L",
                   help="query items per class")
    p.add_argument("--seed", type=int, help="episode sampling seed")
    p.add_argument("--ablation",
                   help="full, no_dmm, no_qim, or no_dmm+no_qim")
    p.add_argument("--config", help="train config JSON supplying defaults")
    p.add_argument("--out", required=True, help="report JSON to write")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic vector dataset")
    p.add_argument("--classes", type=int, required=True, metavar="N")
    p.add_argument("--per-class", type=int, required=True, metavar="M")
    p.add_argument("--dim", type=int, required=True, metavar="D")
    p.add_argument("--separation", type=float, required=True, metavar="S",
                   help="class-center sphere radius in noise units")
    p.add_argument("--sigma", type=float, default=1.0,
                   help="per-item noise scale (default 1.0)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="JSONL file to write")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ablate",
                       help="train and score the five model variants")
    p.add_argument("--config", help="train config JSON")
    p.add_argument("--data", required=True, help="full dataset to split")
    p.add_argument("--out", required=True, help="CSV table to write")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("separation",
                       help="support-vector silhouette before/after "
                            "memory adaptation")
    p.add_argument("--model", required=True, help="trained checkpoint")
    p.add_argument("--data", required=True, help="dataset to sample from")
    p.add_argument("--way", type=int, default=10)
    p.add_argument("--shot", type=int, default=5)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out-csv", required=True, help="vector CSV to write")
    p.set_defaults(func=_cmd_separation)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as err:  # argparse --help or a usage error
        return err.code if isinstance(err.code, int) else EXIT_USAGE
    except (DataError, CheckpointError) as err:
        print(f"dmin: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except nm.NumericError as err:
        print(f"dmin: numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as err:
        print(f"dmin: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except OSError as err:
        print(f"dmin: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
