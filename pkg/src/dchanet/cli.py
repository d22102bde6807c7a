"""``dchanet`` command line: generate, train, eval and saliency.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .checkpoint import load_model, save_model
from .config import parse_config, thread_count, write_effective
from .errors import ConfigError, DchaError
from .model import build_model
from .phantom import generate_dataset, load_dataset, manifest_checksum
from .preprocess import preprocess_case
from .saliency import hit_rate, saliency_report
from .train import evaluate, read_loss_trace, split_by_case_id, train, write_loss_trace, write_report

COMMANDS = ("generate", "train", "eval", "saliency")
log = logging.getLogger("dchanet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="dchanet", description="Dual-view phantom experiments.")
    parser.add_argument("command", help="one of: " + ", ".join(COMMANDS))
    parser.add_argument("-c", "--config", help="key = value config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def _manifest(cfg):
    path = Path(cfg.paths.data_dir) / "manifest.csv"
    if not path.exists():
        raise FileNotFoundError(f"no dataset manifest at {path}; run 'dchanet generate' first")
    return path


def _split(cfg):
    cases = load_dataset(_manifest(cfg))
    train_set, val_set = split_by_case_id(cases, cfg.data.val_fraction)
    return ([preprocess_case(c, cfg.preprocess) for c in train_set],
            [preprocess_case(c, cfg.preprocess) for c in val_set])


def _load_checkpoint(cfg):
    path = cfg.checkpoint_path()
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return load_model(path)


def cmd_generate(cfg):
    out = Path(cfg.paths.data_dir)
    cases, manifest = generate_dataset(cfg.phantom, cfg.data.n_cases, out, workers=thread_count())
    write_effective(cfg, out / "effective_config.txt")
    n_pos = sum(c.label for c in cases)
    print(f"generated {len(cases)} cases ({n_pos} malignant) in {out}, manifest sha256 {manifest_checksum(manifest)}")


def cmd_train(cfg):
    run = Path(cfg.paths.run_dir)
    train_set, val_set = _split(cfg)
    model = build_model(cfg.model_config())
    result = train(train_set, model, cfg.train, run / "checkpoints", cfg.preprocess)
    write_loss_trace(run / "loss_trace.csv", result.loss_trace)
    final = save_model(cfg.checkpoint_path(), model)
    write_effective(cfg, run / "effective_config.txt")
    last = result.loss_trace[-1] if result.loss_trace else None
    tail = f", final total loss {last.total:.4f}" if last else ""
    print(f"trained on {len(train_set)} cases ({len(val_set)} held out){tail}; checkpoint {final}")


def cmd_eval(cfg):
    model = _load_checkpoint(cfg)
    _, val_set = _split(cfg)
    if not val_set:
        raise ValueError("the validation split is empty; raise data.val_fraction or data.n_cases")
    trace_path = Path(cfg.paths.run_dir) / "loss_trace.csv"
    trace = read_loss_trace(trace_path) if trace_path.exists() else []
    report = evaluate(val_set, model, trace)
    out = Path(cfg.paths.run_dir) / "eval"
    summary = write_report(out, report)
    write_effective(cfg, out / "effective_config.txt")
    print(summary)


def cmd_saliency(cfg):
    model = _load_checkpoint(cfg)
    _, val_set = _split(cfg)
    out = Path(cfg.paths.run_dir) / "saliency"
    rows = saliency_report(val_set, model, out)
    write_effective(cfg, out / "effective_config.txt")
    print(f"wrote {len(rows)} overlays to {out}; lesion hit rate {hit_rate(rows):.3f}")


HANDLERS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "saliency": cmd_saliency}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command not in HANDLERS:
            raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"dchanet: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = parse_config(args.config, args.overrides)
        cfg.model_config()
    except ConfigError as exc:
        print(f"dchanet {args.command}: config error: {exc}", file=sys.stderr)
        return 1
    try:
        HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"dchanet {args.command}: config error: {exc}", file=sys.stderr)
        return 1
    except (DchaError, OSError, ValueError) as exc:
        print(f"dchanet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
