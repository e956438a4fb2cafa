# -*- coding: utf-8 -*-
"""
Command line entry point::

    adjscc train     --config EXP.toml [--out DIR] [--seed N] [--no-timestamp]
    adjscc sweep     --config EXP.toml CHECKPOINT...
    adjscc mismatch  --config EXP.toml CHECKPOINT
    adjscc attention --config EXP.toml CHECKPOINT
    adjscc report    --config EXP.toml [--timing] CHECKPOINT...

Exit status is 0 on success, 2 for an invalid experiment (bad document,
missing paths, unreachable bandwidth ratio) and 3 for failures while working.
"""
import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
from uuid import UUID, uuid4

import structlog
import torch
from eventsourcing.persistence import PersistenceError
from torch.utils.data import Dataset

from adjscc.checkpoint import Checkpoint, load_checkpoint
from adjscc.config import ExperimentConfig, load_config
from adjscc.evaluation import (
    SweepResult,
    attention_stats,
    ensemble_eval,
    measure_complexity,
    mismatch_grid,
    storage_report,
    sweep,
    write_attention_csv,
    write_complexity_csv,
    write_mismatch_csv,
    write_storage_csv,
    write_sweep_csv,
)
from adjscc.exceptions import ADJSCCError, ArchitectureError, ConfigError
from adjscc.factory import Factory
from adjscc.recorders import SweepPoint
from adjscc.training import SNRDistribution, build_model, train

log = structlog.get_logger()

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

TRAIN_CHECKPOINT = "model.ckpt"
SWEEP_CSV = "sweep.csv"
MISMATCH_CSV = "mismatch.csv"
ATTENTION_CSV = "attention.csv"
STORAGE_CSV = "storage.csv"
STRATEGIES_CSV = "strategies.csv"
COMPLEXITY_CSV = "complexity.csv"


def _results_store(cfg: ExperimentConfig) -> Optional[Factory]:
    env = cfg.environment()
    if not env.get(Factory.SQLALCHEMY_URL):
        return None
    return Factory(env)


def _record_sweep(
    cfg: ExperimentConfig, run_id: UUID, points: Sequence[SweepPoint]
) -> None:
    factory = _results_store(cfg)
    if factory is not None:
        factory.sweep_recorder().insert_points(run_id, points)


def model_ids(paths: Sequence[Path]) -> List[str]:
    """File stems, or the paths as given when two stems collide."""
    stems = [p.stem for p in paths]
    if len(set(stems)) == len(stems):
        return stems
    return [str(p) for p in paths]


def _load_checkpoints(paths: Sequence[Path]) -> List[Checkpoint]:
    for path in paths:
        if not path.is_file():
            raise ConfigError(f"no such checkpoint: {path}")
    return [load_checkpoint(path) for path in paths]


def _test_dataset(cfg: ExperimentConfig) -> Dataset:  # type: ignore[type-arg]
    return cfg.data.load(
        "test", total_stride=cfg.arch().total_stride, seed=cfg.eval.config.seed
    )


def cmd_train(cfg: ExperimentConfig, timestamp: bool = True) -> Path:
    cfg.validate_paths("train")
    cfg.validate_paths("test")
    arch = cfg.arch()
    data = cfg.data.load("train", total_stride=arch.total_stride, seed=cfg.train.seed)
    model = build_model(arch, cfg.train.seed)
    factory = _results_store(cfg)
    recorder = factory.train_log_recorder() if factory is not None else None
    train(
        model,
        data,
        cfg.train,
        out_dir=cfg.out.dir,
        recorder=recorder,
        timestamp=timestamp,
    )
    return cfg.out.dir / TRAIN_CHECKPOINT


def cmd_sweep(
    cfg: ExperimentConfig, checkpoints: Sequence[Path], timestamp: bool = True
) -> Path:
    cfg.validate_paths("test")
    loaded = _load_checkpoints(checkpoints)
    data = _test_dataset(cfg)
    results = [
        sweep(ckpt.model, data, cfg.eval.config, model_id=model_id)
        for ckpt, model_id in zip(loaded, model_ids(checkpoints))
    ]
    _record_sweep(
        cfg,
        uuid4(),
        [SweepPoint.from_sweep_row(row) for r in results for row in r.rows],
    )
    return write_sweep_csv(
        cfg.out.dir / SWEEP_CSV,
        results,
        max_pixel=cfg.eval.config.max_pixel,
        timestamp=timestamp,
    )


def cmd_mismatch(
    cfg: ExperimentConfig, checkpoint: Path, timestamp: bool = True
) -> Path:
    cfg.validate_paths("test")
    (ckpt,) = _load_checkpoints([checkpoint])
    data = _test_dataset(cfg)
    rows = mismatch_grid(
        ckpt.model,
        data,
        cfg.eval.config,
        fb_list=cfg.eval.mismatch_fb,
        true_list=cfg.eval.mismatch_true,
        model_id=checkpoint.stem,
    )
    repeats = cfg.eval.config.repeats
    _record_sweep(
        cfg, uuid4(), [SweepPoint.from_mismatch_row(r, repeats) for r in rows]
    )
    return write_mismatch_csv(
        cfg.out.dir / MISMATCH_CSV,
        rows,
        max_pixel=cfg.eval.config.max_pixel,
        timestamp=timestamp,
    )


def cmd_attention(
    cfg: ExperimentConfig, checkpoint: Path, timestamp: bool = True
) -> Path:
    cfg.validate_paths("test")
    (ckpt,) = _load_checkpoints([checkpoint])
    data = _test_dataset(cfg)
    stats = [
        attention_stats(
            ckpt.model, data, snr, side=cfg.eval.attention_side, cfg=cfg.eval.config
        )
        for snr in cfg.eval.config.snr_test_list
    ]
    return write_attention_csv(cfg.out.dir / ATTENTION_CSV, stats, timestamp=timestamp)


def _fixed_snr(ckpt: Checkpoint) -> Optional[float]:
    try:
        dist = SNRDistribution.parse(ckpt.metadata.snr_dist)
    except ConfigError:
        return None
    return dist.lo if dist.is_fixed else None


def group_members(
    cfg: ExperimentConfig, loaded: Sequence[Checkpoint]
) -> Dict[str, List[Tuple[float, Checkpoint]]]:
    """
    Resolves every ``report.groups`` entry to the checkpoints trained at a
    fixed SNR equal to each listed value.
    """
    by_snr: Dict[float, Checkpoint] = {}
    for ckpt in loaded:
        snr = _fixed_snr(ckpt)
        if snr is not None:
            by_snr.setdefault(snr, ckpt)
    groups: Dict[str, List[Tuple[float, Checkpoint]]] = {}
    for name, snrs in cfg.report_groups.items():
        missing = [s for s in snrs if s not in by_snr]
        if missing:
            raise cfg.error(
                f"group {name!r} needs checkpoints trained at fixed SNR "
                f"{', '.join(f'{s:g}' for s in missing)} dB",
                "report",
                "groups",
            )
        groups[name] = [(s, by_snr[s]) for s in snrs]
    return groups


def cmd_report(
    cfg: ExperimentConfig,
    checkpoints: Sequence[Path],
    timestamp: bool = True,
    timing: bool = False,
) -> List[Path]:
    loaded = _load_checkpoints(checkpoints)
    ids = model_ids(checkpoints)
    groups = group_members(cfg, loaded)
    if groups or timing:
        cfg.validate_paths("test")

    strategies = {model_id: [ckpt.model] for model_id, ckpt in zip(ids, loaded)}
    for name, members in groups.items():
        strategies[name] = [ckpt.model for _, ckpt in members]
    written = [
        write_storage_csv(
            cfg.out.dir / STORAGE_CSV, storage_report(strategies), timestamp=timestamp
        )
    ]

    if groups:
        data = _test_dataset(cfg)
        results: List[SweepResult] = [
            ensemble_eval(
                [(snr, ckpt.model) for snr, ckpt in members],
                data,
                cfg.eval.config,
                model_id=name,
            )
            for name, members in groups.items()
        ]
        written.append(
            write_sweep_csv(
                cfg.out.dir / STRATEGIES_CSV,
                results,
                max_pixel=cfg.eval.config.max_pixel,
                timestamp=timestamp,
            )
        )

    if timing:
        data = _test_dataset(cfg)
        n = min(len(data), cfg.eval.config.batch_size)  # type: ignore[arg-type]
        batch = torch.stack([data[i] for i in range(n)])
        reports = [
            measure_complexity(ckpt.model, batch, model_id=model_id)
            for ckpt, model_id in zip(loaded, ids)
        ]
        written.append(
            write_complexity_csv(
                cfg.out.dir / COMPLEXITY_CSV, reports, timestamp=timestamp
            )
        )
    return written


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", required=True, type=Path, help="experiment document (TOML)"
    )
    common.add_argument("--out", type=Path, help="overrides out.dir")
    common.add_argument("--seed", type=int, help="overrides train.seed and eval.seed")
    common.add_argument(
        "--no-timestamp",
        action="store_true",
        help="leave wall-clock values out of the CSV files",
    )

    parser = argparse.ArgumentParser(
        prog="adjscc",
        description="SNR-adaptive deep joint source-channel coding experiments.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("train", parents=[common], help="train one model")
    sweep_parser = commands.add_parser(
        "sweep", parents=[common], help="PSNR against channel SNR"
    )
    sweep_parser.add_argument("checkpoints", nargs="+", type=Path)
    mismatch_parser = commands.add_parser(
        "mismatch", parents=[common], help="PSNR under wrong SNR feedback"
    )
    mismatch_parser.add_argument("checkpoint", type=Path)
    attention_parser = commands.add_parser(
        "attention", parents=[common], help="AF scaling-factor statistics"
    )
    attention_parser.add_argument("checkpoint", type=Path)
    report_parser = commands.add_parser(
        "report", parents=[common], help="storage and ensemble strategies"
    )
    report_parser.add_argument("checkpoints", nargs="+", type=Path)
    report_parser.add_argument(
        "--timing", action="store_true", help="also measure training/inference time"
    )
    return parser


def run(args: argparse.Namespace) -> None:
    cfg = load_config(args.config, out=args.out, seed=args.seed)
    timestamp = not args.no_timestamp
    log.info("command started", command=args.command, config=str(args.config))
    if args.command == "train":
        outputs = [cmd_train(cfg, timestamp)]
    elif args.command == "sweep":
        outputs = [cmd_sweep(cfg, args.checkpoints, timestamp)]
    elif args.command == "mismatch":
        outputs = [cmd_mismatch(cfg, args.checkpoint, timestamp)]
    elif args.command == "attention":
        outputs = [cmd_attention(cfg, args.checkpoint, timestamp)]
    else:
        outputs = cmd_report(cfg, args.checkpoints, timestamp, args.timing)
    log.info(
        "command finished",
        command=args.command,
        outputs=[str(p) for p in outputs],
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    structlog.configure(logger_factory=structlog.PrintLoggerFactory(file=sys.stderr))
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except (ConfigError, ArchitectureError) as e:
        print(f"adjscc: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ADJSCCError, PersistenceError) as e:
        log.error("command failed", command=args.command, error=str(e))
        print(f"adjscc: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        log.exception("command crashed", command=args.command)
        print(f"adjscc: unexpected error: {e!r}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
