# -*- coding: utf-8 -*-
"""
Training: minimize the mean per-image MSE between source and reconstruction
over random channel realizations, drawing the SNR from a configured
distribution.
"""
import math
import re
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, List, Optional, Tuple, Union
from uuid import UUID, uuid4

import structlog
import torch
from torch import Tensor, nn
from torch.utils.data import Dataset

from adjscc.channel import Channel, ChannelMode
from adjscc.checkpoint import CheckpointMetadata, save_checkpoint
from adjscc.codec import ArchSpec, JSCCModel
from adjscc.csvio import CsvLog
from adjscc.data import make_loader
from adjscc.exceptions import ConfigError, DivergenceError, ShapeError
from adjscc.rng import rng_stream

if TYPE_CHECKING:  # pragma: no cover
    from adjscc.recorders import TrainLogRecorder

log = structlog.get_logger()

TRAIN_LOG_HEADER = ("epoch", "loss", "seconds", "checkpoint_path")

_DIST_PATTERN = re.compile(
    r"^\s*(uniform|fixed)\s*\(\s*([^,()]+?)\s*(?:,\s*([^,()]+?)\s*)?\)\s*$"
)


@dataclass(frozen=True)
class SNRDistribution:
    kind: str
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if self.kind not in ("uniform", "fixed"):
            raise ConfigError(f"unknown SNR distribution {self.kind!r}")
        if self.lo > self.hi:
            raise ConfigError(f"uniform SNR range needs lo <= hi, got {self}")

    @classmethod
    def uniform(cls, lo_db: float, hi_db: float) -> "SNRDistribution":
        return cls("uniform", float(lo_db), float(hi_db))

    @classmethod
    def fixed(cls, value_db: float) -> "SNRDistribution":
        return cls("fixed", float(value_db), float(value_db))

    @classmethod
    def parse(cls, text: str) -> "SNRDistribution":
        """Parses ``"uniform(lo, hi)"`` or ``"fixed(value)"``."""
        match = _DIST_PATTERN.match(text)
        if match is None:
            raise ConfigError(
                f"cannot parse SNR distribution {text!r}, "
                "expected 'uniform(lo, hi)' or 'fixed(value)'"
            )
        kind, first, second = match.groups()
        try:
            if kind == "fixed":
                if second is not None:
                    raise ConfigError("fixed(...) takes one value")
                return cls.fixed(float(first))
            if second is None:
                raise ConfigError("uniform(...) takes two values")
            return cls.uniform(float(first), float(second))
        except ValueError as e:
            raise ConfigError(f"bad number in SNR distribution {text!r}") from e

    @property
    def is_fixed(self) -> bool:
        return self.kind == "fixed"

    def __str__(self) -> str:
        if self.is_fixed:
            return f"fixed({self.lo:g})"
        return f"uniform({self.lo:g}, {self.hi:g})"


def sample_snr_batch(
    dist: SNRDistribution,
    n: int,
    generator: torch.Generator,
    dtype: torch.dtype = torch.float32,
) -> Tensor:
    draws = torch.rand(n, generator=generator, dtype=torch.float64)
    if dist.is_fixed:
        return torch.full((n,), dist.lo, dtype=dtype)
    return (dist.lo + (dist.hi - dist.lo) * draws).to(dtype)


def sample_snr(dist: SNRDistribution, generator: torch.Generator) -> float:
    return float(sample_snr_batch(dist, 1, generator, torch.float64)[0])


@dataclass(frozen=True)
class TrainConfig:
    snr_dist: SNRDistribution
    learning_rate: float = 1e-4
    batch_size: int = 128
    epochs: int = 1280
    seed: int = 0
    bandwidth_ratio: Fraction = Fraction(1, 6)
    arch_preset: str = "tiny"
    snr_per_example: bool = True
    checkpoint_every_batches: int = 0
    keep_checkpoints: bool = False
    channel_mode: ChannelMode = ChannelMode.AWGN

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch size must be at least 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.checkpoint_every_batches < 0:
            raise ConfigError("checkpoint_every_batches must not be negative")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    seconds: float
    checkpoint_path: str = ""


@dataclass
class TrainLog:
    records: List[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError(
                f"epoch {record.epoch} does not follow {self.records[-1].epoch}"
            )
        self.records.append(record)

    @property
    def losses(self) -> List[float]:
        return [r.loss for r in self.records]

    def __len__(self) -> int:
        return len(self.records)


def per_image_mse(x: Tensor, x_hat: Tensor) -> Tensor:
    if x.shape != x_hat.shape:
        raise ShapeError(
            f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}"
        )
    return (x - x_hat).pow(2).flatten(start_dim=1).mean(dim=1)


def mse_distortion(x: Tensor, x_hat: Tensor) -> Tensor:
    if x.shape != x_hat.shape:
        raise ShapeError(
            f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}"
        )
    return (x - x_hat).pow(2).mean()


def batch_loss(x: Tensor, x_hat: Tensor) -> Tensor:
    """Mean over the batch of the per-image MSE."""
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    return per_image_mse(x, x_hat).mean()


def make_optimizer(
    parameters: Iterable[nn.Parameter], learning_rate: float = 1e-4
) -> torch.optim.Optimizer:
    return torch.optim.Adam(parameters, lr=learning_rate)


def build_model(arch: ArchSpec, seed: int = 0) -> JSCCModel:
    """Model with parameters initialized from ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return JSCCModel(arch)


def _checkpoint_path(out_dir: Path, epoch: int, step: int, keep: bool) -> Path:
    if not keep:
        return out_dir / "model.ckpt"
    return out_dir / f"model-epoch{epoch:04d}-step{step:07d}.ckpt"


def train(
    model: JSCCModel,
    data: Dataset,  # type: ignore[type-arg]
    cfg: TrainConfig,
    out_dir: Optional[Union[str, Path]] = None,
    recorder: Optional["TrainLogRecorder"] = None,
    run_id: Optional[UUID] = None,
    timestamp: bool = True,
    device: Union[str, torch.device] = "cpu",
) -> Tuple[JSCCModel, TrainLog]:
    """
    Runs ``cfg.epochs`` passes over ``data``: per batch, draw the SNR (per
    example or per batch), encode, transmit, decode, take an Adam step on the
    mean per-image MSE. Checkpoints go to ``out_dir`` every epoch, or every
    ``cfg.checkpoint_every_batches`` batches when set; ``train_log.csv`` there
    receives one row per epoch. With ``timestamp`` off, wall-clock values are
    left out of the CSV so reruns are byte-identical.
    """
    if len(data) == 0:  # type: ignore[arg-type]
        raise ValueError("training dataset is empty")
    run_id = run_id or uuid4()
    out_path = Path(out_dir) if out_dir is not None else None
    csv_log = None
    if out_path is not None:
        csv_log = CsvLog(
            out_path / "train_log.csv",
            TRAIN_LOG_HEADER,
            comments=[f"snr_dist={cfg.snr_dist}", f"seed={cfg.seed}"],
            timestamp=timestamp,
        )

    model.to(device)
    dtype = next(model.parameters()).dtype
    loader = make_loader(data, cfg.batch_size, cfg.seed)
    snr_stream = rng_stream(cfg.seed, "snr")
    channel = Channel(cfg.channel_mode, seed=cfg.seed, name="channel")
    optimizer = make_optimizer(model.parameters(), cfg.learning_rate)
    train_log = TrainLog()
    step = 0

    def checkpoint(epoch: int) -> str:
        assert out_path is not None
        path = _checkpoint_path(out_path, epoch, step, cfg.keep_checkpoints)
        metadata = CheckpointMetadata(
            epochs_seen=epoch,
            batches_seen=step,
            snr_dist=str(cfg.snr_dist),
            seed=cfg.seed,
            extra={
                "bandwidth_ratio": str(cfg.bandwidth_ratio),
                "learning_rate": cfg.learning_rate,
                "run_id": str(run_id),
            },
        )
        return str(save_checkpoint(path, model, metadata))

    model.train()
    for epoch in range(1, cfg.epochs + 1):
        set_epoch = getattr(data, "set_epoch", None)
        if callable(set_epoch):
            set_epoch(epoch)
        started = time.perf_counter()
        total = 0.0
        seen = 0
        saved = ""
        for batch in loader:
            x = batch.to(device=device, dtype=dtype)
            n = x.shape[0]
            if cfg.snr_per_example:
                snr = sample_snr_batch(cfg.snr_dist, n, snr_stream, dtype)
            else:
                snr = sample_snr_batch(cfg.snr_dist, 1, snr_stream, dtype).expand(n)
            x_hat = model(x, snr.to(device), channel)
            loss = batch_loss(x, x_hat)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise DivergenceError(
                    f"loss became {value} at epoch {epoch}, step {step + 1} "
                    f"(learning rate {cfg.learning_rate}, SNR {cfg.snr_dist})"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            step += 1
            total += value * n
            seen += n
            every = cfg.checkpoint_every_batches
            if out_path is not None and every and step % every == 0:
                saved = checkpoint(epoch)

        if out_path is not None and not cfg.checkpoint_every_batches:
            saved = checkpoint(epoch)
        seconds = time.perf_counter() - started
        record = EpochRecord(
            epoch=epoch, loss=total / seen, seconds=seconds, checkpoint_path=saved
        )
        train_log.append(record)
        if csv_log is not None:
            csv_log.append(
                [epoch, record.loss, seconds if timestamp else None, saved]
            )
        if recorder is not None:
            recorder.insert_epochs(run_id, [record])
        log.info("epoch finished", epoch=epoch, loss=record.loss, seconds=seconds)

    if out_path is not None and cfg.checkpoint_every_batches:
        # Final state regardless of where the batch cadence left off.
        checkpoint(cfg.epochs)
    model.eval()
    return model, train_log
