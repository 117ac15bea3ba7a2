"""Command-line entry point.

Exit codes: 0 success, 2 invalid input or configuration, 3 numeric failure
(NaN/Inf during training), 4 evaluation-protocol violation. Logs go to
stderr; each subcommand prints one ``key=value`` summary line on stdout.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config, load_dataset_spec
from .eval_harness import SPLIT_NAMES, ProtocolViolation, resolution_sweep, sweep_csv
from .experiment import finetune_at, load_data, run_experiment, train_baseline
from .image_pipeline import TestPreproc, synth_dataset, write_dataset
from .model import build_model
from .tensor_core import NumericError, read_checkpoint, write_checkpoint

logger = logging.getLogger("fixres_lab")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_PROTOCOL = 0, 2, 3, 4


def _summary(command: str, **fields) -> None:
    print(command + "".join(f" {k}={v}" for k, v in fields.items()), flush=True)


def _log_path(ckpt) -> Path:
    ckpt = Path(ckpt)
    return ckpt.with_name(ckpt.stem + ".log.csv")


def _load_model(cfg, ckpt, seed):
    model = build_model(cfg.model, seed=seed)
    model.load_state_dict(read_checkpoint(ckpt))
    return model


def cmd_synth_data(args) -> int:
    spec = load_dataset_spec(args.spec)
    data = synth_dataset(spec)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_dataset(data, args.out)
    h, w, c = data.image_shape
    _summary("synth-data", count=len(data), classes=data.num_classes, resolution=f"{h}x{w}", channels=c, out=args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    protocol = load_data(cfg, args.seed)
    model, log = train_baseline(cfg, protocol["train"].read(), args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_checkpoint(args.out, model.state_dict())
    log.checkpoint = str(args.out)
    log.to_csv(_log_path(args.out))
    last = log.records[-1] if log.records else None
    _summary("train", epochs=len(log.records), loss=f"{last.loss:.6f}" if last else "nan",
             top1=f"{last.top1:.4f}" if last else "nan", ckpt=args.out, log=_log_path(args.out))
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = load_config(args.config)
    if args.target_res is not None:
        cfg = dataclasses.replace(cfg, finetune=dataclasses.replace(cfg.finetune, target_res=args.target_res))
    cfg.finetune.validate()
    model = _load_model(cfg, args.ckpt, args.seed)
    protocol = load_data(cfg, args.seed)
    tuned, log = finetune_at(cfg, model, protocol["train"].read(), cfg.finetune.target_res, args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_checkpoint(args.out, tuned.state_dict())
    log.checkpoint = str(args.out)
    log.to_csv(_log_path(args.out))
    _summary("finetune", target_res=cfg.finetune.target_res, scope=cfg.finetune.scope, epochs=len(log.records),
             ckpt=args.out)
    return EXIT_OK


def _parse_grid(text: str) -> list[int]:
    try:
        grid = [int(tok) for tok in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"--grid must be a comma-separated list of integers, got {text!r}") from None
    if not grid:
        raise ConfigError("--grid is empty")
    if len(set(grid)) != len(grid):
        raise ConfigError(f"--grid has duplicate resolutions: {text!r}")
    return sorted(grid)


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    grid = _parse_grid(args.grid)
    model = _load_model(cfg, args.ckpt, args.seed)
    for r in grid:
        if not model.config.supports(r):
            raise ConfigError(f"resolution {r} outside [{model.config.min_res}, {model.config.max_res}]")
    protocol = load_data(cfg, args.seed)
    curve = resolution_sweep(model, protocol[args.split], grid, TestPreproc(cfg.protocol.crop_ratio))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(sweep_csv(Path(args.ckpt).stem, curve))
    best = curve.argmax()
    _summary("sweep", split=args.split, argmax=best, top1=repr(curve.top1()[best]), out=args.out)
    return EXIT_OK


def cmd_protocol(args) -> int:
    cfg = load_config(args.config)
    out_dir = args.out_dir or cfg.output_dir
    if out_dir is None:
        raise ConfigError("no output directory: pass --out-dir or set output_dir in the config")
    outputs = run_experiment(cfg)
    outputs.write(out_dir)
    print(f"{outputs.summary} out={out_dir}", flush=True)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fixres-lab", description="Train/test resolution discrepancy lab.")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="render a synthetic dataset to an FXDS file")
    p.add_argument("--spec", required=True, help="TOML dataset spec")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train a baseline model at its train resolution")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="FXCK checkpoint path; the log goes next to it")
    p.add_argument("--seed", type=int, default=0, help="run seed (data draw, split, init, augmentation)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="recalibrate and fine-tune a checkpoint at a test resolution")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target-res", type=int, default=None, help="override finetune.target_res")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("sweep", help="evaluate a checkpoint over a grid of test resolutions")
    p.add_argument("--config", required=True, help="experiment config (model shape and data splits)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--grid", required=True, help="comma-separated resolutions, e.g. 24,32,40")
    p.add_argument("--split", required=True, choices=SPLIT_NAMES)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("protocol", help="train, fix and report every seed under the dual test-set protocol")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_protocol)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ProtocolViolation as exc:
        logger.error("protocol violation: %s", exc)
        return EXIT_PROTOCOL
    except NumericError as exc:
        logger.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
