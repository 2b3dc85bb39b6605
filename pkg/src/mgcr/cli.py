"""Command-line entry point: ``mgcr {gen-data,prune,train,eval,predict,gradcheck}``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import UsageError, parse_flat

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
DATA_ENV = "MGCR_DATA_DIR"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config_args(sp) -> None:
    sp.add_argument("--config", metavar="PATH", help="flat 'key = value' config file")
    sp.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE",
                    help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mgcr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("gen-data", help="generate a synthetic bi-temporal dataset")
    _config_args(sp)
    sp.add_argument("--out", help="dataset root (default: data_dir key or $MGCR_DATA_DIR)")

    sp = sub.add_parser("prune", help="prune a JSON-lines caption corpus")
    sp.add_argument("input", help="JSON-lines file with image_id, temporal_index, raw_text")
    sp.add_argument("--out", required=True, help="output JSON-lines path")
    sp.add_argument("--keyword", action="append", default=[], help="extra regex rule (repeatable)")

    sp = sub.add_parser("train", help="train a model")
    _config_args(sp)
    sp.add_argument("--out", help="run directory (overrides out_dir)")

    sp = sub.add_parser("eval", help="micro-averaged metrics of a checkpoint on one split")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", help="dataset root (default: $MGCR_DATA_DIR)")
    sp.add_argument("--split", default="test", choices=("train", "val", "test"))
    sp.add_argument("--out", help="directory for metrics.json and metrics.txt")

    sp = sub.add_parser("predict", help="change map for one pair directory")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--pair", required=True, help="directory holding t1.png, t2.png, captions.jsonl")
    sp.add_argument("--out", required=True)
    sp.add_argument("--heatmaps", action="store_true", help="also dump graph and attention maps")

    sp = sub.add_parser("gradcheck", help="finite-difference checks of the autograd engine")
    sp.add_argument("--seed", type=int, default=0)
    return parser


def _env_sets(config_path, sets) -> list[str]:
    """Precedence for data_dir: --set, then the config file, then $MGCR_DATA_DIR, then the default."""
    env = os.environ.get(DATA_ENV)
    if not env or any(s.split("=", 1)[0].strip() == "data_dir" for s in sets):
        return list(sets)
    if config_path and "data_dir" in parse_flat(Path(config_path).read_text(encoding="utf-8")):
        return list(sets)
    return [f"data_dir={env}", *sets]


def cmd_gen_data(args) -> int:
    from .config import DataConfig, load_config
    from .data import generate_dataset

    cfg = load_config(DataConfig, args.config, _env_sets(args.config, args.sets))
    root = args.out or cfg.data_dir
    m = generate_dataset(root, cfg.n_pairs, cfg.gen, cfg.seed, cfg.ratios, cfg.tile or None)
    print(f"wrote {len(m.train)}/{len(m.val)}/{len(m.test)} train/val/test pairs under {root}")
    return EXIT_OK


def cmd_prune(args) -> int:
    from .text import DEFAULT_PATTERNS, KeywordRules, read_caption_corpus, write_caption_corpus

    rules = KeywordRules(DEFAULT_PATTERNS + tuple(args.keyword))
    records = read_caption_corpus(args.input, rules)
    write_caption_corpus(args.out, records)
    print(f"pruned {len(records)} captions -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .config import TrainConfig, load_config
    from .train import train

    cfg = load_config(TrainConfig, args.config, _env_sets(args.config, args.sets))
    out = args.out or cfg.out_dir
    _, history, _ = train(cfg, out_dir=out)
    print(f"best val F1 {history.best_f1:.4f} at epoch {history.best_epoch}; artifacts in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .train import evaluate

    root = args.data or os.environ.get(DATA_ENV)
    if root is None:
        raise UsageError(f"no dataset root: pass --data or set ${DATA_ENV}")
    report = evaluate(args.checkpoint, root, args.split)
    print(report.to_text(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
        (out / "metrics.txt").write_text(report.to_text(), encoding="utf-8")
    return EXIT_OK


def cmd_predict(args) -> int:
    from .train import predict

    for path in predict(args.checkpoint, args.pair, args.out, args.heatmaps):
        print(path)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_checks

    ok = True
    for name, err, tol in run_checks(args.seed):
        passed = err < tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name:18s} max rel err {err:.2e} (tol {tol:.0e})")
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS = {"gen-data": cmd_gen_data, "prune": cmd_prune, "train": cmd_train, "eval": cmd_eval,
            "predict": cmd_predict, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"mgcr {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failures map to exit 2 with the reason
        print(f"mgcr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
