"""``rescrnet`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import CheckpointError, ConfigError, DataError, NumericalError, ResCRNetError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--manifest", help="dataset manifest (TSV)")
    p.add_argument("--seed", type=int, help="random seed (non-negative integer)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--device", choices=["none"], default="none", help="reserved; computation runs on the CPU")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rescrnet", description="Train and apply a residual segmentation network.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model; writes history, checkpoints and config echo")
    _common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--workers", type=int, help="augmentation worker threads")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")

    p = sub.add_parser("evaluate", help="per-sample metrics CSV for one split")
    _common(p)
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--split", default="val", choices=["train", "val"])
    p.add_argument("--batch-size", type=int, default=8)

    p = sub.add_parser("predict", help="write {0,255} lung masks for images")
    _common(p)
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--probabilities", action="store_true", help="also write 16-bit per-class probability maps")
    p.add_argument("images", nargs="+")

    p = sub.add_parser("plot", help="loss and metric SVG charts from history.csv")
    p.add_argument("history")
    p.add_argument("--out", help="output directory (default: next to the history)")

    p = sub.add_parser("synth-data", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--count", type=int, default=40)
    p.add_argument("--rows", type=int, default=96)
    p.add_argument("--cols", type=int, default=96)
    p.add_argument("--val-fraction", type=float, default=0.2)

    p = sub.add_parser("inspect", help="layer and parameter summary")
    _common(p)
    p.add_argument("--model", help="checkpoint to summarise instead of a config")
    p.add_argument("--reference", action="store_true", help="use the full-size reference configuration")
    p.add_argument("--survey", action="store_true", help="parameter totals over the structural switches")
    p.add_argument("--blocks-only", action="store_true", help="omit the per-tensor rows")
    return parser


def _train_config(args):
    from .config import TrainConfig

    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    overrides = {}
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}", field=item)
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for key, attr in (("manifest", "manifest"), ("seed", "seed"), ("out_dir", "out"), ("epochs", "epochs"),
                      ("batch_size", "batch_size"), ("workers", "workers")):
        val = getattr(args, attr, None)
        if val is not None:
            overrides[key] = str(val)
    if overrides:
        cfg = _apply(cfg, overrides)
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative", field="seed")
    return cfg


def _apply(cfg, overrides):
    from .config import TrainConfig

    text = cfg.to_text() + "".join(f"{k} = {v}\n" for k, v in overrides.items())
    return TrainConfig.from_text(text, "<command line>")


def cmd_train(args) -> int:
    from .train import train

    cfg = _train_config(args)
    hist = train(cfg)
    last = hist.rows[-1]
    print(f"trained {len(hist.rows)} epochs; final val_loss {last['val_loss']:.4f} "
          f"val_metric {last['val_metric']:.4f}; run directory {cfg.out_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    import os

    from .data import read_manifest
    from .train import evaluate

    if not args.manifest:
        raise ConfigError("evaluate needs --manifest", field="manifest")
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    csv_path = os.path.join(out, f"metrics_{args.split}.csv")
    res = evaluate(args.model, read_manifest(args.manifest).validate(), args.split, csv_path,
                   batch_size=args.batch_size)
    m = res["mean"]
    print(f"{len(res['rows'])} samples: dice {m['dice']:.4f} precision {m['precision']:.4f} "
          f"recall {m['recall']:.4f} f1 {m['f1']:.4f} tanimoto {res['mean_tanimoto']:.4f}")
    print(f"wrote {csv_path}")
    return EXIT_OK


def cmd_predict(args) -> int:
    from .train import predict

    results = predict(args.model, args.images, args.out or ".", args.probabilities)
    failed = 0
    for src, dst in results.items():
        print(f"{src} -> {dst}")
        failed += dst.startswith("error:")
    return EXIT_DATA if failed else EXIT_OK


def cmd_plot(args) -> int:
    from .history import plot_history

    for p in plot_history(args.history, args.out):
        print(f"wrote {p}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .data import generate_synthetic_dataset

    out = args.out or "synthetic"
    m = generate_synthetic_dataset(out, args.count, args.rows, args.cols, args.seed or 0,
                                   args.val_fraction or None)
    print(f"wrote {len(m.entries)} samples ({len(m.split('train'))} train, {len(m.split('val'))} val) to {out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    from .checkpoint import load_checkpoint
    from .model import REFERENCE_PARAM_COUNT, build_res_cr_net, reference_config, param_count_survey, summary_table

    if args.model:
        model = load_checkpoint(args.model)
        cfg = model.config
    else:
        cfg = reference_config() if args.reference else _train_config(args).net
        model = build_res_cr_net(cfg, seed=None)
    print(summary_table(model, per_tensor=not args.blocks_only))
    if args.reference or args.survey:
        from .model import param_count

        n = param_count(model)
        delta = n - REFERENCE_PARAM_COUNT
        print(f"\nreference total {REFERENCE_PARAM_COUNT}; this configuration {n} (delta {delta:+d})")
    if args.survey:
        print("\nstructural survey (closest first):")
        for over, count, delta in param_count_survey(cfg):
            desc = " ".join(f"{k}={v}" for k, v in over.items())
            print(f"  {count:>7d}  {delta:+7d}  {desc}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "predict": cmd_predict, "plot": cmd_plot,
            "synth-data": cmd_synth, "inspect": cmd_inspect}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ResCRNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
