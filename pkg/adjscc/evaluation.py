# -*- coding: utf-8 -*-
"""
Measurement harness: PSNR with per-image-then-average reduction, SNR sweeps,
channel-mismatch grids, AF scaling-factor statistics, nearest-SNR ensembles
of fixed-SNR models, and storage/complexity accounting.

Channel noise for image ``i`` and repeat ``r`` comes from the stream
``(seed, "eval", i, r)`` and is scaled to the requested SNR afterwards, so
results do not depend on the number of workers, and every SNR point of a
sweep sees the same noise realizations.
"""
import copy
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import (
    Any,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
import structlog
import torch
from torch import Tensor, nn
from torch.utils.data import Dataset

from adjscc.attention import AttentionFeature
from adjscc.channel import (
    SNR,
    ChannelMode,
    complex_gaussian,
    noise_power_tensor,
    sample_rayleigh_gain,
)
from adjscc.codec import count_parameters
from adjscc.csvio import write_csv
from adjscc.data import denormalize
from adjscc.exceptions import EvaluationError, ShapeError
from adjscc.rng import rng_stream
from adjscc.training import batch_loss, make_optimizer

log = structlog.get_logger()

PSNR_CEILING_DB = 100.0
BYTES_PER_PARAMETER = 4
DEFAULT_MISMATCH_FB = (0.0, 5.0, 10.0, 15.0, 20.0)
DEFAULT_MISMATCH_TRUE = tuple(float(s) for s in range(0, 21, 2))

SWEEP_HEADER = ("model_id", "snr_test_db", "mean_psnr_db", "std_psnr_db", "repeats")
MISMATCH_HEADER = (
    "model_id",
    "snr_fb_db",
    "snr_true_db",
    "mean_psnr_db",
    "std_psnr_db",
)
ATTENTION_HEADER = ("module_index", "channel_index", "snr_db", "mean", "std")
STORAGE_HEADER = ("strategy", "param_count", "bytes", "mb")
COMPLEXITY_HEADER = ("model_id", "param_count", "train_step_ms", "inference_ms")


@dataclass(frozen=True)
class EvalConfig:
    snr_test_list: Tuple[float, ...] = tuple(float(s) for s in range(0, 21))
    repeats: int = 10
    seed: int = 0
    max_pixel: float = 1.0
    limit: Optional[int] = None
    workers: int = 1
    ceiling_db: float = PSNR_CEILING_DB
    channel_mode: ChannelMode = ChannelMode.AWGN
    batch_size: int = 64
    quantize: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "snr_test_list", tuple(self.snr_test_list))
        object.__setattr__(self, "channel_mode", ChannelMode(self.channel_mode))
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        if self.max_pixel <= 0:
            raise ValueError("max_pixel must be positive")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


# PSNR


def psnr_per_image(
    x: Tensor,
    x_hat: Tensor,
    max_pixel: float = 1.0,
    ceiling_db: float = PSNR_CEILING_DB,
) -> Tensor:
    if x.shape != x_hat.shape:
        raise ShapeError(
            f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}"
        )
    mse = (x - x_hat).to(torch.float64).pow(2).flatten(start_dim=1).mean(dim=1)
    values = 10.0 * torch.log10(max_pixel**2 / mse)
    return torch.where(mse == 0, torch.full_like(mse, ceiling_db), values).clamp(
        max=ceiling_db
    )


def psnr(
    x: Tensor,
    x_hat: Tensor,
    max_pixel: float = 1.0,
    ceiling_db: float = PSNR_CEILING_DB,
) -> float:
    """PSNR of one image (or of a batch taken as one signal)."""
    if x.shape != x_hat.shape:
        raise ShapeError(
            f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}"
        )
    mse = float((x - x_hat).to(torch.float64).pow(2).mean())
    if mse == 0:
        return ceiling_db
    return min(10.0 * math.log10(max_pixel**2 / mse), ceiling_db)


def to_pixel_scale(x: Tensor, max_pixel: float, quantize: bool = False) -> Tensor:
    """
    Maps model-space images in ``[0, 1]`` onto ``[0, max_pixel]``. With
    ``quantize`` the values are first rounded to 8-bit levels.
    """
    if quantize:
        x = denormalize(x).to(torch.float64) / 255.0
    return x.to(torch.float64) * max_pixel


# Sweeps


@dataclass
class SweepRow:
    model_id: str
    snr_test_db: float
    mean_psnr_db: float
    std_psnr_db: float
    repeats: int


@dataclass
class SweepResult:
    rows: List[SweepRow] = field(default_factory=list)

    def psnr_at(self, snr_test_db: float) -> float:
        for row in self.rows:
            if row.snr_test_db == snr_test_db:
                return row.mean_psnr_db
        raise KeyError(snr_test_db)

    def as_rows(self) -> List[Tuple[Any, ...]]:
        return [
            (r.model_id, r.snr_test_db, r.mean_psnr_db, r.std_psnr_db, r.repeats)
            for r in self.rows
        ]


@dataclass
class MismatchRow:
    model_id: str
    snr_fb_db: float
    snr_true_db: float
    mean_psnr_db: float
    std_psnr_db: float


def _image_count(dataset: Dataset, cfg: EvalConfig) -> int:  # type: ignore[type-arg]
    n = len(dataset)  # type: ignore[arg-type]
    if cfg.limit is not None:
        n = min(n, cfg.limit)
    if n == 0:
        raise EvaluationError("evaluation dataset is empty")
    return n


def _model_dtype(model: nn.Module) -> torch.dtype:
    for parameter in model.parameters():
        return parameter.dtype
    return torch.float32


def _transmit(
    z: Tensor, snr_true_db: SNR, cfg: EvalConfig, index: int, repeat: int
) -> Tensor:
    generator = rng_stream(cfg.seed, "eval", index, repeat)
    omega = complex_gaussian(z.shape, generator, z)
    omega = omega * torch.sqrt(noise_power_tensor(snr_true_db, z))
    if cfg.channel_mode is ChannelMode.EQUALIZED_FADING:
        h = sample_rayleigh_gain(1, generator, z)
        h = torch.where(h == 0, torch.ones_like(h), h)
        return z + omega / h
    return z + omega


def _image_psnr(
    model: nn.Module,
    image: Tensor,
    index: int,
    snr_true_db: float,
    snr_fb_db: float,
    cfg: EvalConfig,
) -> float:
    x = image.unsqueeze(0).to(_model_dtype(model))
    size = (x.shape[-2], x.shape[-1])
    with torch.no_grad():
        z = model.encode(x, snr_fb_db)[0]
        z_hat = torch.stack(
            [_transmit(z, snr_true_db, cfg, index, r) for r in range(cfg.repeats)]
        )
        x_hat = model.decode(z_hat, snr_fb_db, size)
        values = psnr_per_image(
            to_pixel_scale(x.expand_as(x_hat), cfg.max_pixel, cfg.quantize),
            to_pixel_scale(x_hat, cfg.max_pixel, cfg.quantize),
            cfg.max_pixel,
            cfg.ceiling_db,
        )
    return float(values.mean())


def image_psnrs(
    model: nn.Module,
    dataset: Dataset,  # type: ignore[type-arg]
    snr_db: float,
    cfg: EvalConfig,
    snr_fb_db: Optional[float] = None,
) -> np.ndarray:
    """Per-image PSNR, each averaged over ``cfg.repeats`` transmissions."""
    n = _image_count(dataset, cfg)
    feedback = snr_db if snr_fb_db is None else snr_fb_db
    model.eval()

    def one(index: int) -> float:
        return _image_psnr(model, dataset[index], index, snr_db, feedback, cfg)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            values = list(pool.map(one, range(n)))
    else:
        values = [one(i) for i in range(n)]
    return np.asarray(values, dtype=np.float64)


def dataset_psnr(
    model: nn.Module,
    dataset: Dataset,  # type: ignore[type-arg]
    snr_db: float,
    cfg: EvalConfig,
    snr_fb_db: Optional[float] = None,
) -> Tuple[float, float]:
    """Mean and standard deviation across images of the per-image PSNR."""
    values = image_psnrs(model, dataset, snr_db, cfg, snr_fb_db)
    return float(values.mean()), float(values.std())


def sweep(
    model: nn.Module,
    dataset: Dataset,  # type: ignore[type-arg]
    cfg: EvalConfig,
    model_id: str = "model",
) -> SweepResult:
    if not cfg.snr_test_list:
        raise EvaluationError("snr_test_list is empty")
    result = SweepResult()
    for snr in cfg.snr_test_list:
        mean, std = dataset_psnr(model, dataset, snr, cfg)
        result.rows.append(SweepRow(model_id, snr, mean, std, cfg.repeats))
        log.info("sweep point", model_id=model_id, snr_db=snr, psnr_db=mean)
    return result


def mismatch_eval(
    model: nn.Module,
    dataset: Dataset,  # type: ignore[type-arg]
    snr_fb_db: float,
    snr_true_db: float,
    cfg: EvalConfig,
) -> Tuple[float, float]:
    """AF modules see ``snr_fb_db`` while the channel runs at ``snr_true_db``."""
    return dataset_psnr(model, dataset, snr_true_db, cfg, snr_fb_db=snr_fb_db)


def mismatch_grid(
    model: nn.Module,
    dataset: Dataset,  # type: ignore[type-arg]
    cfg: EvalConfig,
    fb_list: Sequence[float] = DEFAULT_MISMATCH_FB,
    true_list: Sequence[float] = DEFAULT_MISMATCH_TRUE,
    model_id: str = "model",
) -> List[MismatchRow]:
    rows = []
    for fb in fb_list:
        for true in true_list:
            mean, std = mismatch_eval(model, dataset, fb, true, cfg)
            rows.append(MismatchRow(model_id, fb, true, mean, std))
    return rows


# Scaling factors


@dataclass
class ModuleStats:
    module_index: int
    mean: np.ndarray
    std: np.ndarray

    @property
    def var(self) -> float:
        """Variance of the per-channel means."""
        return float(np.var(self.mean))


@dataclass
class AttentionStats:
    snr_db: float
    side: str
    modules: List[ModuleStats]


def attention_stats(
    model: nn.Module,
    dataset: Dataset,  # type: ignore[type-arg]
    snr_db: float,
    side: str = "encoder",
    cfg: Optional[EvalConfig] = None,
) -> AttentionStats:
    """
    Scaling factors of every AF module on ``side`` over the dataset at
    ``snr_db``. Decoder-side factors depend on the channel noise, drawn from
    the evaluation streams (one transmission per image).
    """
    cfg = cfg or EvalConfig()
    modules: List[AttentionFeature] = list(model.attention_modules(side))
    if not modules:
        raise EvaluationError("no attention modules")
    n = _image_count(dataset, cfg)
    dtype = _model_dtype(model)
    collected: List[List[Tensor]] = [[] for _ in modules]
    model.eval()
    with torch.no_grad():
        for start in range(0, n, cfg.batch_size):
            indices = range(start, min(start + cfg.batch_size, n))
            x = torch.stack([dataset[i] for i in indices]).to(dtype)
            z = model.encode(x, snr_db)
            if side == "decoder":
                z_hat = torch.stack(
                    [_transmit(z[j], snr_db, cfg, i, 0) for j, i in enumerate(indices)]
                )
                model.decode(z_hat, snr_db, (x.shape[-2], x.shape[-1]))
            for bucket, module in zip(collected, modules):
                assert module.scaling_factors is not None
                bucket.append(module.scaling_factors.to(torch.float64))

    stats = []
    for index, bucket in enumerate(collected):
        factors = torch.cat(bucket).numpy()
        stats.append(
            ModuleStats(
                module_index=index,
                mean=factors.mean(axis=0),
                std=factors.std(axis=0),
            )
        )
    return AttentionStats(snr_db=snr_db, side=side, modules=stats)


# Ensembles of fixed-SNR models


def select_nearest(snr_test_db: float, snr_trains: Sequence[float]) -> int:
    """Index of the nearest training SNR; ties go to the lower one."""
    if not snr_trains:
        raise EvaluationError("no models to choose from")
    return min(
        range(len(snr_trains)),
        key=lambda i: (abs(snr_trains[i] - snr_test_db), snr_trains[i]),
    )


def ensemble_eval(
    models: Sequence[Tuple[float, nn.Module]],
    dataset: Dataset,  # type: ignore[type-arg]
    cfg: EvalConfig,
    model_id: Optional[str] = None,
) -> SweepResult:
    """
    Evaluates a BDJSCC-N strategy: at every test SNR the model trained
    nearest to it transmits.
    """
    if not models:
        raise EvaluationError("an ensemble needs at least one model")
    model_id = model_id or f"BDJSCC-{len(models)}"
    snr_trains = [snr for snr, _ in models]
    result = SweepResult()
    for snr in cfg.snr_test_list:
        chosen = models[select_nearest(snr, snr_trains)][1]
        mean, std = dataset_psnr(chosen, dataset, snr, cfg)
        result.rows.append(SweepRow(model_id, snr, mean, std, cfg.repeats))
    return result


# Storage and complexity


@dataclass
class StorageRow:
    strategy: str
    param_count: int
    bytes: int
    mb: float


def storage_report(
    strategies: Mapping[str, Sequence[Union[int, nn.Module]]]
) -> List[StorageRow]:
    """
    Storage of each strategy's models as 32-bit floats. MB are mebibytes
    rounded to two decimals.
    """
    rows = []
    for name, members in strategies.items():
        count = sum(
            m if isinstance(m, int) else count_parameters(m) for m in members
        )
        size = count * BYTES_PER_PARAMETER
        rows.append(StorageRow(name, count, size, round(size / 2**20, 2)))
    return rows


@dataclass
class ComplexityReport:
    model_id: str
    param_count: int
    train_step_ms: float
    inference_ms: float


def measure_complexity(
    model: nn.Module,
    batch: Tensor,
    snr_db: float = 10.0,
    steps: int = 5,
    model_id: str = "model",
    seed: int = 0,
) -> ComplexityReport:
    """
    Mean wall time of one training step and one inference pass over
    ``batch``. Training runs on a copy, the given model is left untouched.
    """
    trial = copy.deepcopy(model)
    x = batch.to(_model_dtype(trial))
    size = (x.shape[-2], x.shape[-1])
    generator = rng_stream(seed, "complexity")

    def channel(z: Tensor, snr: SNR) -> Tensor:
        omega = complex_gaussian(z.shape, generator, z)
        return z + omega * torch.sqrt(noise_power_tensor(snr, z))

    optimizer = make_optimizer(trial.parameters())
    trial.train()
    started = time.perf_counter()
    for _ in range(steps):
        loss = batch_loss(x, trial(x, snr_db, channel))
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    train_ms = 1000.0 * (time.perf_counter() - started) / steps

    trial.eval()
    started = time.perf_counter()
    with torch.no_grad():
        for _ in range(steps):
            trial.decode(channel(trial.encode(x, snr_db), snr_db), snr_db, size)
    inference_ms = 1000.0 * (time.perf_counter() - started) / steps
    return ComplexityReport(
        model_id, count_parameters(model), train_ms, inference_ms
    )


# CSV output


def _max_pixel_comment(max_pixel: float) -> str:
    return f"max_pixel={max_pixel:g} psnr_reduction=per_image_then_mean"


def write_sweep_csv(
    path: Union[str, Path],
    results: Iterable[SweepResult],
    max_pixel: float = 1.0,
    timestamp: bool = True,
) -> Path:
    rows = [row for result in results for row in result.as_rows()]
    return write_csv(
        path,
        SWEEP_HEADER,
        rows,
        comments=[_max_pixel_comment(max_pixel)],
        timestamp=timestamp,
    )


def write_mismatch_csv(
    path: Union[str, Path],
    rows: Iterable[MismatchRow],
    max_pixel: float = 1.0,
    timestamp: bool = True,
) -> Path:
    return write_csv(
        path,
        MISMATCH_HEADER,
        [
            (r.model_id, r.snr_fb_db, r.snr_true_db, r.mean_psnr_db, r.std_psnr_db)
            for r in rows
        ],
        comments=[_max_pixel_comment(max_pixel)],
        timestamp=timestamp,
    )


def attention_rows(stats: AttentionStats) -> List[Tuple[Any, ...]]:
    """
    One row per module and channel, then per module a summary row whose
    ``channel_index`` is ``var`` and whose ``mean`` column holds the variance
    of the channel means.
    """
    rows: List[Tuple[Any, ...]] = []
    for module in stats.modules:
        for channel, (mean, std) in enumerate(zip(module.mean, module.std)):
            rows.append(
                (module.module_index, channel, stats.snr_db, float(mean), float(std))
            )
        rows.append((module.module_index, "var", stats.snr_db, module.var, None))
    return rows


def write_attention_csv(
    path: Union[str, Path],
    stats: Iterable[AttentionStats],
    timestamp: bool = True,
) -> Path:
    stats = list(stats)
    side = stats[0].side if stats else "encoder"
    return write_csv(
        path,
        ATTENTION_HEADER,
        [row for s in stats for row in attention_rows(s)],
        comments=[f"side={side}"],
        timestamp=timestamp,
    )


def write_storage_csv(
    path: Union[str, Path], rows: Iterable[StorageRow], timestamp: bool = True
) -> Path:
    return write_csv(
        path,
        STORAGE_HEADER,
        [(r.strategy, r.param_count, r.bytes, r.mb) for r in rows],
        timestamp=timestamp,
    )


def write_complexity_csv(
    path: Union[str, Path],
    reports: Iterable[ComplexityReport],
    timestamp: bool = True,
) -> Path:
    return write_csv(
        path,
        COMPLEXITY_HEADER,
        [
            (r.model_id, r.param_count, r.train_step_ms, r.inference_ms)
            for r in reports
        ],
        timestamp=timestamp,
    )
