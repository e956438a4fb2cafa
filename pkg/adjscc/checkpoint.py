# -*- coding: utf-8 -*-
"""
Checkpoint container.

Byte layout (all integers little-endian)::

    offset      size  field
    0           8     magic b"ADJSCCKP"
    8           4     format version, uint32 (currently 1)
    12          8     header length H, uint64
    20          H     header, UTF-8 JSON object:
                        "arch"         architecture description (ArchSpec.to_dict)
                        "arch_digest"  SHA-256 of the structural description
                        "metadata"     training metadata (epochs/batches seen,
                                       SNR distribution, seed, ...)
                        "tensors"      list of {"name", "shape", "offset", "count"}
    20+H        P     payload: float32 little-endian arrays back to back,
                      offsets in bytes from the start of the payload
    20+H+P      32    SHA-256 of every preceding byte

Files are written to a temporary sibling and renamed into place, so a reader
never sees a partial file under the final name.
"""
import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import structlog
import torch

from adjscc.codec import ArchSpec, JSCCModel
from adjscc.exceptions import ArchitectureError, CheckpointError

log = structlog.get_logger()

MAGIC = b"ADJSCCKP"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<8sIQ")
_DIGEST_SIZE = 32

PathLike = Union[str, "os.PathLike[str]"]


@dataclass
class CheckpointMetadata:
    epochs_seen: int = 0
    batches_seen: int = 0
    snr_dist: str = ""
    seed: int = 0
    extra: Dict[str, Any] = field(default_factory=dict)


@dataclass
class Checkpoint:
    arch: ArchSpec
    model: JSCCModel
    metadata: CheckpointMetadata


def save_checkpoint(
    path: PathLike, model: JSCCModel, metadata: Optional[CheckpointMetadata] = None
) -> Path:
    metadata = metadata or CheckpointMetadata()
    tensors: List[Dict[str, Any]] = []
    chunks: List[bytes] = []
    offset = 0
    for name, value in model.state_dict().items():
        array = value.detach().cpu().to(torch.float32).numpy().astype("<f4")
        data = array.tobytes(order="C")
        tensors.append(
            {
                "name": name,
                "shape": list(array.shape),
                "offset": offset,
                "count": int(array.size),
            }
        )
        chunks.append(data)
        offset += len(data)
    header = json.dumps(
        {
            "arch": model.arch.to_dict(),
            "arch_digest": model.arch.digest(),
            "metadata": asdict(metadata),
            "tensors": tensors,
        },
        sort_keys=True,
    ).encode("utf-8")
    body = b"".join(
        [_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header)), header, *chunks]
    )
    blob = body + hashlib.sha256(body).digest()

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = target.with_name(target.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, target)
    log.info("checkpoint saved", path=str(target), tensors=len(tensors))
    return target


def load_checkpoint(
    path: PathLike, expected_arch: Optional[ArchSpec] = None
) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    if len(blob) < _PREAMBLE.size + _DIGEST_SIZE:
        raise CheckpointError(f"truncated checkpoint {path}")
    body, digest = blob[:-_DIGEST_SIZE], blob[-_DIGEST_SIZE:]
    magic, version, header_len = _PREAMBLE.unpack_from(body)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {version} in {path}"
        )
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"checksum mismatch, truncated or corrupt: {path}")

    payload_start = _PREAMBLE.size + header_len
    try:
        header = json.loads(body[_PREAMBLE.size : payload_start].decode("utf-8"))
        arch = ArchSpec.from_dict(header["arch"])
        metadata = CheckpointMetadata(**header["metadata"])
        tensor_entries = header["tensors"]
    except (ValueError, KeyError, TypeError, ArchitectureError) as e:
        raise CheckpointError(f"malformed checkpoint header in {path}: {e}") from e

    if arch.digest() != header.get("arch_digest"):
        raise CheckpointError(f"architecture digest mismatch in {path}")
    if expected_arch is not None and expected_arch.digest() != arch.digest():
        raise CheckpointError(
            f"checkpoint {path} was saved for a different architecture"
        )

    payload = memoryview(body)[payload_start:]
    state: Dict[str, torch.Tensor] = {}
    for entry in tensor_entries:
        count = int(entry["count"])
        start = int(entry["offset"])
        if start + 4 * count > len(payload):
            raise CheckpointError(f"tensor {entry['name']} runs past end of {path}")
        array = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        state[entry["name"]] = torch.from_numpy(
            array.astype(np.float32).reshape(entry["shape"])
        )

    model = JSCCModel(arch)
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as e:
        raise CheckpointError(f"parameter mismatch in {path}: {e}") from e
    log.info("checkpoint loaded", path=str(path), epochs_seen=metadata.epochs_seen)
    return Checkpoint(arch=arch, model=model, metadata=metadata)
