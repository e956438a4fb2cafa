# -*- coding: utf-8 -*-
"""
Experiment documents.

An experiment is a TOML document with the sections ``model``, ``train``,
``eval``, ``data``, ``out`` and ``report``; see the README for every key.
Relative paths are resolved against the directory holding the document.
Errors carry the line of the offending key, so they can be shown as
``path:line: message``.
"""
import os
import re
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import (
    Any,
    Callable,
    Dict,
    Iterator,
    Mapping,
    Optional,
    Tuple,
    Union,
)

from eventsourcing.utils import Environment
from torch.utils.data import Dataset

from adjscc.channel import ChannelMode
from adjscc.codec import (
    PRESETS,
    TINY,
    ArchSpec,
    build_arch,
    channels_for_ratio,
    parse_ratio,
)
from adjscc.data import RandomCropDataset, load_cifar10_binary, load_image_dir
from adjscc.evaluation import DEFAULT_MISMATCH_FB, DEFAULT_MISMATCH_TRUE, EvalConfig
from adjscc.exceptions import ADJSCCError, ArchitectureError, ConfigError
from adjscc.factory import Factory
from adjscc.training import SNRDistribution, TrainConfig

if sys.version_info >= (3, 11):  # pragma: no cover
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

ENVIRONMENT_NAME = "ADJSCC"

_NUMBER = "number"
_INTEGER = "integer"
_BOOLEAN = "boolean"
_STRING = "string"
_NUMBERS = "list of numbers"
_STRINGS = "list of strings"
_RATIO = "ratio"
_TABLE = "table"

SCHEMA: Dict[str, Dict[str, str]] = {
    "model": {
        "arch_preset": _STRING,
        "use_attention": _BOOLEAN,
        "bandwidth_ratio": _RATIO,
        "af_hidden_width": _INTEGER,
    },
    "train": {
        "snr_dist": _STRING,
        "lr": _NUMBER,
        "batch": _INTEGER,
        "epochs": _INTEGER,
        "seed": _INTEGER,
        "snr_per": _STRING,
        "checkpoint_every_batches": _INTEGER,
        "keep_checkpoints": _BOOLEAN,
        "channel": _STRING,
    },
    "eval": {
        "snr_list": _NUMBERS,
        "repeats": _INTEGER,
        "seed": _INTEGER,
        "max_pixel": _NUMBER,
        "quantize": _BOOLEAN,
        "mismatch_fb": _NUMBERS,
        "mismatch_true": _NUMBERS,
        "attention_side": _STRING,
        "workers": _INTEGER,
    },
    "data": {
        "kind": _STRING,
        "train_paths": _STRINGS,
        "test_paths": _STRINGS,
        "crop": _INTEGER,
        "limit_train": _INTEGER,
        "limit_test": _INTEGER,
    },
    "out": {
        "dir": _STRING,
        "database_url": _STRING,
    },
    "report": {
        "groups": _TABLE,
    },
}

_HEADER = re.compile(r"^\s*\[\s*([A-Za-z0-9_.\-]+)\s*\]")
_TOML_POSITION = re.compile(r"at line (\d+)")


class _Document:
    """Raw parsed document plus what is needed to point at its lines."""

    def __init__(self, text: str, path: Optional[Path]):
        self.path = path
        self.lines = text.splitlines()
        try:
            self.data: Dict[str, Any] = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            match = _TOML_POSITION.search(str(e))
            raise self.error(
                f"invalid TOML: {e}", lineno=int(match.group(1)) if match else None
            ) from e

    def locate(self, section: str, key: Optional[str] = None) -> Optional[int]:
        current = ""
        key_pattern = re.compile(rf"^\s*{re.escape(key)}\s*=") if key else None
        for number, line in enumerate(self.lines, start=1):
            header = _HEADER.match(line)
            if header:
                current = header.group(1)
                if key is None and current == section:
                    return number
                if key is not None and current == f"{section}.{key}":
                    return number
                continue
            if key_pattern and current == section and key_pattern.match(line):
                return number
        return None

    def error(
        self,
        message: str,
        section: Optional[str] = None,
        key: Optional[str] = None,
        lineno: Optional[int] = None,
    ) -> ConfigError:
        if lineno is None and section is not None:
            lineno = self.locate(section, key) or self.locate(section)
        return ConfigError(
            message, lineno=lineno, path=str(self.path) if self.path else None
        )


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


_CHECKS: Dict[str, Callable[[Any], bool]] = {
    _NUMBER: _is_number,
    _INTEGER: lambda v: isinstance(v, int) and not isinstance(v, bool),
    _BOOLEAN: lambda v: isinstance(v, bool),
    _STRING: lambda v: isinstance(v, str),
    _NUMBERS: lambda v: isinstance(v, list) and all(_is_number(x) for x in v),
    _STRINGS: lambda v: isinstance(v, list) and all(isinstance(x, str) for x in v),
    _RATIO: lambda v: isinstance(v, str) or _is_number(v),
    _TABLE: lambda v: isinstance(v, dict),
}


def _check_schema(doc: _Document) -> None:
    for section, values in doc.data.items():
        if section not in SCHEMA:
            raise doc.error(f"unknown section [{section}]", section)
        if not isinstance(values, dict):
            raise doc.error(f"{section} must be a table", lineno=doc.locate(section))
        for key, value in values.items():
            kind = SCHEMA[section].get(key)
            if kind is None:
                raise doc.error(f"unknown key {section}.{key}", section, key)
            if not _CHECKS[kind](value):
                raise doc.error(
                    f"{section}.{key} must be a {kind}, got {value!r}", section, key
                )


@dataclass(frozen=True)
class ModelSection:
    arch_preset: str = TINY
    use_attention: bool = True
    bandwidth_ratio: Fraction = Fraction(1, 6)
    af_hidden_width: Optional[int] = None

    def arch(self, image_size: Tuple[int, int], image_channels: int = 3) -> ArchSpec:
        """Architecture whose last encoder layer realizes the bandwidth ratio."""
        height, width = image_size
        stride = build_arch(self.arch_preset).total_stride
        c = channels_for_ratio(
            self.bandwidth_ratio, height, width, image_channels, stride
        )
        return build_arch(
            self.arch_preset,
            output_channels=c,
            use_attention=self.use_attention,
            af_hidden_width=self.af_hidden_width,
            image_channels=image_channels,
        )


@dataclass(frozen=True)
class EvalSection:
    config: EvalConfig = field(default_factory=EvalConfig)
    mismatch_fb: Tuple[float, ...] = DEFAULT_MISMATCH_FB
    mismatch_true: Tuple[float, ...] = DEFAULT_MISMATCH_TRUE
    attention_side: str = "encoder"


@dataclass(frozen=True)
class DataSection:
    kind: str = "cifar10"
    train_paths: Tuple[Path, ...] = ()
    test_paths: Tuple[Path, ...] = ()
    crop: int = 128
    limit_train: Optional[int] = None
    limit_test: Optional[int] = None

    @property
    def image_size(self) -> Tuple[int, int]:
        if self.kind == "cifar10":
            return 32, 32
        return self.crop, self.crop

    def paths(self, split: str) -> Tuple[Path, ...]:
        return self.train_paths if split == "train" else self.test_paths

    def load(
        self, split: str, total_stride: int = 4, seed: int = 0
    ) -> Dataset:  # type: ignore[type-arg]
        limit = self.limit_train if split == "train" else self.limit_test
        paths = self.paths(split)
        if self.kind == "cifar10":
            return load_cifar10_binary(paths, split=split, limit=limit)
        parts = [
            load_image_dir(p, self.crop, total_stride, seed, split) for p in paths
        ]
        rasters = [r for part in parts for r in part.rasters][:limit]
        return RandomCropDataset(
            rasters,
            crop=self.crop,
            seed=seed,
            split=split,
            provenance=",".join(str(p) for p in paths),
        )


@dataclass(frozen=True)
class OutSection:
    dir: Path = Path("out")
    database_url: Optional[str] = None


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSection
    train: TrainConfig
    eval: EvalSection
    data: DataSection
    out: OutSection
    report_groups: Dict[str, Tuple[float, ...]] = field(default_factory=dict)
    path: Optional[Path] = None
    document: Optional[_Document] = field(default=None, repr=False, compare=False)

    def arch(self) -> ArchSpec:
        return self.model.arch(self.data.image_size)

    def validate_paths(self, split: str) -> None:
        """Every dataset path of ``split`` must exist."""
        key = f"{split}_paths"
        paths = self.data.paths(split)
        if not paths:
            raise self.error(f"data.{key} is empty", "data", key)
        for p in paths:
            if not p.exists():
                raise self.error(f"no such file or directory: {p}", "data", key)

    def environment(self, environ: Optional[Mapping[str, str]] = None) -> Environment:
        """
        ``ADJSCC``-named environment for the results store; ``out.database_url``
        wins over ``ADJSCC_SQLALCHEMY_URL`` and ``SQLALCHEMY_URL``.
        """
        env = Environment(
            ENVIRONMENT_NAME, dict(os.environ if environ is None else environ)
        )
        if self.out.database_url:
            env[f"{ENVIRONMENT_NAME}_{Factory.SQLALCHEMY_URL}"] = self.out.database_url
        return env

    def error(self, message: str, section: str, key: str) -> ConfigError:
        if self.document is None:
            return ConfigError(message)
        return self.document.error(message, section, key)


class _Builder:
    """Turns a schema-checked document into typed sections."""

    def __init__(self, doc: _Document):
        self.doc = doc
        self.base = doc.path.parent if doc.path else Path.cwd()

    def get(self, section: str, key: str, default: Any = None) -> Any:
        return self.doc.data.get(section, {}).get(key, default)

    def resolve(self, value: Union[str, Path]) -> Path:
        path = Path(value).expanduser()
        return path if path.is_absolute() else self.base / path

    def paths(self, key: str) -> Tuple[Path, ...]:
        return tuple(self.resolve(p) for p in self.get("data", key, []))

    def require(self, ok: bool, message: str, section: str, key: str) -> None:
        if not ok:
            raise self.doc.error(message, section, key)

    def model(self) -> ModelSection:
        preset = self.get("model", "arch_preset", TINY)
        self.require(
            preset in PRESETS,
            f"unknown arch_preset {preset!r}, expected one of "
            f"{', '.join(sorted(PRESETS))}",
            "model",
            "arch_preset",
        )
        hidden = self.get("model", "af_hidden_width")
        self.require(
            hidden is None or hidden >= 1,
            "af_hidden_width must be at least 1",
            "model",
            "af_hidden_width",
        )
        raw_ratio = self.get("model", "bandwidth_ratio", "1/6")
        with self.at("model", "bandwidth_ratio"):
            ratio = parse_ratio(raw_ratio)
            if ratio <= 0:
                raise ValueError("bandwidth_ratio must be positive")
        return ModelSection(
            arch_preset=preset,
            use_attention=self.get("model", "use_attention", True),
            bandwidth_ratio=ratio,
            af_hidden_width=hidden,
        )

    def train(self, model: ModelSection) -> TrainConfig:
        with self.at("train", "snr_dist"):
            snr_dist = SNRDistribution.parse(
                self.get("train", "snr_dist", "uniform(0, 20)")
            )
        epochs = self.get("train", "epochs", 1280)
        self.require(epochs >= 1, "epochs must be at least 1", "train", "epochs")
        batch = self.get("train", "batch", 128)
        self.require(batch >= 1, "batch must be at least 1", "train", "batch")
        lr = self.get("train", "lr", 1e-4)
        self.require(lr > 0, "lr must be positive", "train", "lr")
        every = self.get("train", "checkpoint_every_batches", 0)
        self.require(
            every >= 0,
            "checkpoint_every_batches must not be negative",
            "train",
            "checkpoint_every_batches",
        )
        snr_per = self.get("train", "snr_per", "example")
        self.require(
            snr_per in ("example", "batch"),
            f"snr_per must be 'example' or 'batch', got {snr_per!r}",
            "train",
            "snr_per",
        )
        with self.at("train", "channel"):
            channel = ChannelMode(self.get("train", "channel", ChannelMode.AWGN.value))
        with self.at("train", None):
            return TrainConfig(
                snr_dist=snr_dist,
                learning_rate=float(lr),
                batch_size=batch,
                epochs=epochs,
                seed=self.get("train", "seed", 0),
                bandwidth_ratio=model.bandwidth_ratio,
                arch_preset=model.arch_preset,
                snr_per_example=snr_per == "example",
                checkpoint_every_batches=every,
                keep_checkpoints=self.get("train", "keep_checkpoints", False),
                channel_mode=channel,
            )

    def evaluation(self) -> EvalSection:
        snr_list = self.get("eval", "snr_list", list(range(0, 21)))
        self.require(bool(snr_list), "snr_list is empty", "eval", "snr_list")
        repeats = self.get("eval", "repeats", 10)
        self.require(repeats >= 1, "repeats must be at least 1", "eval", "repeats")
        max_pixel = self.get("eval", "max_pixel", 1.0)
        self.require(max_pixel > 0, "max_pixel must be positive", "eval", "max_pixel")
        workers = self.get("eval", "workers", 1)
        self.require(workers >= 1, "workers must be at least 1", "eval", "workers")
        side = self.get("eval", "attention_side", "encoder")
        self.require(
            side in ("encoder", "decoder"),
            f"attention_side must be 'encoder' or 'decoder', got {side!r}",
            "eval",
            "attention_side",
        )
        fb = self.get("eval", "mismatch_fb", list(DEFAULT_MISMATCH_FB))
        true = self.get("eval", "mismatch_true", list(DEFAULT_MISMATCH_TRUE))
        self.require(bool(fb), "mismatch_fb is empty", "eval", "mismatch_fb")
        self.require(bool(true), "mismatch_true is empty", "eval", "mismatch_true")
        return EvalSection(
            config=EvalConfig(
                snr_test_list=tuple(float(s) for s in snr_list),
                repeats=repeats,
                seed=self.get("eval", "seed", 0),
                max_pixel=float(max_pixel),
                limit=self.get("data", "limit_test"),
                workers=workers,
                quantize=self.get("eval", "quantize", False),
            ),
            mismatch_fb=tuple(float(s) for s in fb),
            mismatch_true=tuple(float(s) for s in true),
            attention_side=side,
        )

    def data(self) -> DataSection:
        kind = self.get("data", "kind", "cifar10")
        self.require(
            kind in ("cifar10", "image_dir"),
            f"data kind must be 'cifar10' or 'image_dir', got {kind!r}",
            "data",
            "kind",
        )
        crop = self.get("data", "crop", 128)
        self.require(crop >= 1, "crop must be positive", "data", "crop")
        for key in ("limit_train", "limit_test"):
            limit = self.get("data", key)
            self.require(
                limit is None or limit >= 1, f"{key} must be at least 1", "data", key
            )
        return DataSection(
            kind=kind,
            train_paths=self.paths("train_paths"),
            test_paths=self.paths("test_paths"),
            crop=crop,
            limit_train=self.get("data", "limit_train"),
            limit_test=self.get("data", "limit_test"),
        )

    def out(self) -> OutSection:
        return OutSection(
            dir=self.resolve(self.get("out", "dir", "out")),
            database_url=self.get("out", "database_url"),
        )

    def report_groups(self) -> Dict[str, Tuple[float, ...]]:
        groups: Dict[str, Tuple[float, ...]] = {}
        for name, values in self.get("report", "groups", {}).items():
            self.require(
                isinstance(values, list)
                and bool(values)
                and all(_is_number(v) for v in values),
                f"report group {name!r} must be a non-empty list of SNRs",
                "report",
                "groups",
            )
            groups[name] = tuple(float(v) for v in values)
        return groups

    @contextmanager
    def at(self, section: str, key: Optional[str]) -> Iterator[None]:
        """Attaches the key's line to errors raised inside the block."""
        try:
            yield
        except ConfigError as e:
            if e.lineno is not None:
                raise
            raise self.doc.error(e.message, section, key) from e
        except (ValueError, ZeroDivisionError, ADJSCCError) as e:
            raise self.doc.error(str(e), section, key) from e


def _apply_overrides(
    data: Dict[str, Any], out: Optional[Union[str, Path]], seed: Optional[int]
) -> None:
    if out is not None:
        # Absolute so that relative command-line paths stay relative to cwd.
        data.setdefault("out", {})["dir"] = str(Path(out).resolve())
    if seed is not None:
        data.setdefault("train", {})["seed"] = seed
        data.setdefault("eval", {})["seed"] = seed


def parse_config(
    text: str,
    path: Optional[Union[str, Path]] = None,
    out: Optional[Union[str, Path]] = None,
    seed: Optional[int] = None,
) -> ExperimentConfig:
    """
    Parses and validates an experiment document. ``out`` and ``seed``
    override the document before validation.
    """
    doc = _Document(text, Path(path) if path is not None else None)
    _check_schema(doc)
    _apply_overrides(doc.data, out, seed)
    builder = _Builder(doc)
    model = builder.model()
    data = builder.data()
    config = ExperimentConfig(
        model=model,
        train=builder.train(model),
        eval=builder.evaluation(),
        data=data,
        out=builder.out(),
        report_groups=builder.report_groups(),
        path=doc.path,
        document=doc,
    )
    try:
        config.arch()
    except ArchitectureError as e:
        raise doc.error(str(e), "model", "bandwidth_ratio") from e
    return config


def load_config(
    path: Union[str, Path],
    out: Optional[Union[str, Path]] = None,
    seed: Optional[int] = None,
) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read experiment config: {e}", path=str(path)) from e
    return parse_config(text, path=path, out=out, seed=seed)


