# -*- coding: utf-8 -*-
"""
Named, seedable random streams. Every consumer (channel noise, SNR draws,
batch order, crop offsets, evaluation repeats) gets its own generator derived
from the experiment seed and a key path, so streams never interfere.
"""
import zlib
from typing import Union

import numpy as np
import torch

Key = Union[int, str]


def derive_seed(seed: int, *key: Key) -> int:
    """
    Derives an independent 63-bit seed from a base seed and a key path, e.g.
    ``derive_seed(7, "channel")`` or ``derive_seed(7, image_index, repeat)``.
    """
    spawn_key = tuple(
        zlib.crc32(k.encode("utf-8")) if isinstance(k, str) else int(k) for k in key
    )
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=spawn_key)
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def rng_stream(seed: int, *key: Key) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(derive_seed(seed, *key))
    return generator
