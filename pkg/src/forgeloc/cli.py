"""Command-line entry point: ``forgeloc gen-data | train | eval``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import CheckpointError, ConfigError, DataError, ForgelocError

log = logging.getLogger("forgeloc")

BUILTIN_CONFIGS = {"desk": Path(__file__).parent / "configs" / "desk.cfg"}


def resolve_config_path(value: str | None) -> Path | None:
    if value is None:
        return None
    if value in BUILTIN_CONFIGS:
        return BUILTIN_CONFIGS[value]
    return Path(value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forgeloc", description="Forgery detection and localization on a synthetic benchmark.")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write a synthetic benchmark to disk")
    gen.add_argument("--config", help="config file (or 'desk')")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, type=Path)

    tr = sub.add_parser("train", help="run one training stage")
    tr.add_argument("--stage", required=True, choices=["pretrain", "1", "2"])
    tr.add_argument("--config", help="config file (or 'desk')")
    tr.add_argument("--data", required=True, type=Path)
    tr.add_argument("--init", type=Path, help="checkpoint to start from (required for stage 2)")
    tr.add_argument("--out", required=True, type=Path)
    tr.add_argument("--seed", type=int, default=0)

    ev = sub.add_parser("eval", help="score a checkpoint on a split")
    ev.add_argument("--ckpt", required=True, type=Path)
    ev.add_argument("--data", required=True, type=Path)
    ev.add_argument("--split", required=True, choices=["val", "test-ood"])
    ev.add_argument("--tta", action="store_true", help="adapt on each test batch before predicting")
    ev.add_argument("--tta-steps", type=int, help="adaptation steps per batch (default from config)")
    ev.add_argument("--config", help="override the TTA section echoed in the checkpoint")
    ev.add_argument("--report", type=Path, help="write 'key = value' metrics here, with figures alongside")
    ev.add_argument("--no-figures", action="store_true", help="skip the PNG figures next to --report")
    return parser


def cmd_gen_data(args) -> int:
    from .forgebench import generate_dataset
    from .runner.config import load_config

    config = load_config(resolve_config_path(args.config))
    records = generate_dataset(config.data, args.seed, args.out)
    log.info("wrote %d samples to %s", len(records), args.out)
    return 0


def cmd_train(args) -> int:
    from .forgebench import load_split
    from .runner.config import load_config
    from .runner.train import run_stage, save_model

    config = load_config(resolve_config_path(args.config))
    data = load_split(args.data, "train")
    model, meta, history = run_stage(args.stage, config, data, args.seed, args.init)
    save_model(args.out, model, meta)
    log.info("stage %s: %d steps in %.1fs, final loss %.4f -> %s", meta["stage"], len(history.losses),
             history.seconds, history.losses[-1] if history.losses else float("nan"), args.out)
    return 0


def cmd_eval(args) -> int:
    from .forgebench import count_splits, load_split
    from .runner.config import TTAConfig, load_config
    from .runner.evaluate import evaluate
    from .runner.train import load_model

    model, meta = load_model(args.ckpt)
    if args.config is not None:
        tta = load_config(resolve_config_path(args.config)).tta
    else:
        try:
            tta = TTAConfig(**meta.get("config", {}).get("tta", {}))
        except TypeError as exc:
            raise CheckpointError(f"checkpoint carries an unreadable TTA section: {exc}") from exc
    if args.tta_steps is not None and args.tta_steps < 1:
        raise ConfigError("--tta-steps must be positive")
    if "stage2" not in meta.get("provenance", []):
        raise CheckpointError("evaluation needs a checkpoint that went through stage 2")
    data = load_split(args.data, args.split)
    try:
        report, pred = evaluate(model, data, count_splits(args.data), tta if args.tta else None, args.tta_steps)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    text = report.to_text()
    sys.stdout.write(text)
    if args.report is not None:
        args.report.parent.mkdir(parents=True, exist_ok=True)
        args.report.write_text(text)
        if not args.no_figures:
            from .runner.figures import render_report_figures

            for path in render_report_figures(pred, data, args.report, report.auc):
                log.info("figure %s", path)
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", datefmt="%H:%M:%S")
    try:
        return COMMANDS[args.command](args)
    except ForgelocError as exc:
        kind = {ConfigError: "config error", DataError: "data error", CheckpointError: "checkpoint error"}
        log.error("%s: %s", kind.get(type(exc), "error"), exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
