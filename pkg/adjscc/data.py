# -*- coding: utf-8 -*-
"""
Dataset ingestion and pixel normalization.

Images are float tensors ``(C, H, W)`` with values in ``[0, 1]``. Two sources
are supported: the CIFAR-10 binary distribution (3073-byte records: one
label byte, then 1024 red, 1024 green and 1024 blue bytes, row-major) and
directories of raster files (PPM, PNG and anything else Pillow decodes),
randomly cropped to a fixed size.
"""
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
import structlog
import torch
from PIL import Image, UnidentifiedImageError
from torch import Tensor
from torch.utils.data import DataLoader, Dataset

from adjscc.exceptions import DatasetError, ShapeError
from adjscc.rng import rng_stream

log = structlog.get_logger()

CIFAR10_RECORD_BYTES = 3073
CIFAR10_SHAPE = (3, 32, 32)
CIFAR10_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR10_TEST_FILES = ("test_batch.bin",)

PathLike = Union[str, Path]


class ImageDataset(Dataset):  # type: ignore[type-arg]
    """
    Ordered, in-memory collection of images sharing one shape.
    """

    def __init__(
        self,
        images: Tensor,
        split: str = "train",
        provenance: str = "",
        bit_depth: int = 8,
    ):
        if images.dim() != 4:
            raise DatasetError(
                f"expected (N, C, H, W) images, got {tuple(images.shape)}"
            )
        self.images = images
        self.split = split
        self.provenance = provenance
        self.bit_depth = bit_depth

    def __len__(self) -> int:
        return self.images.shape[0]

    def __getitem__(self, index: int) -> Tensor:
        return self.images[index]

    def subset(self, limit: Optional[int]) -> "ImageDataset":
        if limit is None or limit >= len(self):
            return self
        return ImageDataset(
            self.images[:limit],
            split=self.split,
            provenance=f"{self.provenance}[:{limit}]",
            bit_depth=self.bit_depth,
        )


def normalize(raster: Tensor, bit_depth: int = 8) -> Tensor:
    return raster.to(torch.float32) / float(2**bit_depth - 1)


def denormalize(x: Tensor, bit_depth: int = 8) -> Tensor:
    """
    Quantizes ``[0, 1]`` values to integers, rounding half up and clamping.
    """
    top = float(2**bit_depth - 1)
    levels = torch.floor(x * top + 0.5).clamp(0.0, top)
    return levels.to(torch.uint8 if bit_depth <= 8 else torch.int32)


def cifar10_files(directory: PathLike, split: str) -> List[Path]:
    names = CIFAR10_TRAIN_FILES if split == "train" else CIFAR10_TEST_FILES
    return [Path(directory) / name for name in names]


def load_cifar10_binary(
    paths: Iterable[PathLike], split: str = "train", limit: Optional[int] = None
) -> ImageDataset:
    """
    Reads CIFAR-10 binary batches. Labels are discarded. A path naming a
    directory expands to the standard batch files of ``split``.
    """
    files: List[Path] = []
    for path in paths:
        path = Path(path)
        files.extend(cifar10_files(path, split) if path.is_dir() else [path])

    arrays = []
    for path in files:
        try:
            raw = path.read_bytes()
        except OSError as e:
            raise DatasetError(f"cannot read {path}: {e}") from e
        remainder = len(raw) % CIFAR10_RECORD_BYTES
        if remainder or not raw:
            raise DatasetError(
                f"truncated record in {path} at byte offset {len(raw) - remainder}"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR10_RECORD_BYTES)
        arrays.append(records[:, 1:].reshape(-1, *CIFAR10_SHAPE))

    if not arrays:
        raise DatasetError("no CIFAR-10 files given")
    pixels = np.concatenate(arrays)
    if limit is not None:
        pixels = pixels[:limit]
    images = normalize(torch.from_numpy(pixels.copy()))
    provenance = ",".join(str(p) for p in files)
    log.info("cifar10 loaded", split=split, images=len(images), files=len(files))
    return ImageDataset(images, split=split, provenance=provenance)


class RandomCropDataset(Dataset):  # type: ignore[type-arg]
    """
    Full-size rasters, cropped on access. The crop offset of image ``i`` in
    epoch ``e`` comes from the stream ``(seed, "crop", e, i)``.
    """

    def __init__(
        self,
        rasters: Sequence[Tensor],
        crop: int,
        seed: int = 0,
        split: str = "train",
        provenance: str = "",
    ):
        self.rasters = list(rasters)
        self.crop = crop
        self.seed = seed
        self.split = split
        self.provenance = provenance
        self.bit_depth = 8
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.rasters)

    def __getitem__(self, index: int) -> Tensor:
        raster = self.rasters[index]
        height, width = raster.shape[-2:]
        generator = rng_stream(self.seed, "crop", self.epoch, index)
        top = int(torch.randint(0, height - self.crop + 1, (1,), generator=generator))
        left = int(torch.randint(0, width - self.crop + 1, (1,), generator=generator))
        patch = raster[:, top : top + self.crop, left : left + self.crop]
        return normalize(patch, self.bit_depth)


def load_image_dir(
    path: PathLike,
    crop: int,
    total_stride: int = 4,
    seed: int = 0,
    split: str = "train",
    limit: Optional[int] = None,
) -> RandomCropDataset:
    """
    Decodes every raster under ``path`` (sorted by name), keeping those at
    least ``crop`` pixels in both dimensions.
    """
    if crop % total_stride:
        raise ShapeError(f"crop {crop} must be a multiple of {total_stride}")
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"not a directory: {root}")

    rasters: List[Tensor] = []
    for file in sorted(p for p in root.rglob("*") if p.is_file()):
        if file.name.startswith("."):
            continue
        try:
            with Image.open(file) as image:
                rgb = np.asarray(image.convert("RGB"), dtype=np.uint8)
        except (UnidentifiedImageError, OSError) as e:
            log.warning("skipping undecodable raster", path=str(file), error=str(e))
            continue
        height, width = rgb.shape[:2]
        if height < crop or width < crop:
            continue
        rasters.append(torch.from_numpy(rgb.copy()).permute(2, 0, 1).contiguous())
        if limit is not None and len(rasters) >= limit:
            break

    if not rasters:
        raise DatasetError(f"no images of at least {crop}x{crop} in {root}")
    log.info("image directory loaded", path=str(root), images=len(rasters), crop=crop)
    return RandomCropDataset(
        rasters, crop=crop, seed=seed, split=split, provenance=str(root)
    )


def make_loader(
    dataset: Dataset,  # type: ignore[type-arg]
    batch_size: int,
    seed: int,
    shuffle: bool = True,
) -> DataLoader:  # type: ignore[type-arg]
    """Batches with a seeded permutation per epoch."""
    return DataLoader(
        dataset,
        batch_size=batch_size,
        shuffle=shuffle,
        generator=rng_stream(seed, "batches"),
        drop_last=False,
        num_workers=0,
    )
