# -*- coding: utf-8 -*-
import struct
from pathlib import Path
from tempfile import TemporaryDirectory
from unittest import TestCase

import torch

from adjscc.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    CheckpointMetadata,
    load_checkpoint,
    save_checkpoint,
)
from adjscc.codec import ArchSpec
from adjscc.exceptions import CheckpointError
from adjscc.layers import Activation, Direction, LayerSpec
from adjscc.training import build_model


def small_arch(use_attention: bool = True, c: int = 2) -> ArchSpec:
    return ArchSpec(
        fl_layers=(
            LayerSpec(3, 6, 2, Direction.DOWN),
            LayerSpec(3, c, 1, Direction.DOWN, Activation.NONE),
            LayerSpec(3, 6, 1, Direction.UP),
            LayerSpec(3, 3, 2, Direction.UP, Activation.SIGMOID),
        ),
        use_attention=use_attention,
    )


class TestCheckpoint(TestCase):
    def setUp(self) -> None:
        self.tmp = TemporaryDirectory()
        self.path = Path(self.tmp.name) / "model.ckpt"
        self.model = build_model(small_arch(), seed=4)

    def tearDown(self) -> None:
        self.tmp.cleanup()

    def test_restores_parameters_and_metadata(self) -> None:
        metadata = CheckpointMetadata(
            epochs_seen=3, batches_seen=12, snr_dist="fixed(5)", seed=4
        )
        save_checkpoint(self.path, self.model, metadata)
        loaded = load_checkpoint(self.path, expected_arch=small_arch())

        self.assertEqual(loaded.arch, small_arch())
        self.assertEqual(loaded.metadata, metadata)
        state = self.model.state_dict()
        for name, value in loaded.model.state_dict().items():
            self.assertTrue(torch.equal(value, state[name]), name)

    def test_restored_model_computes_the_same(self) -> None:
        save_checkpoint(self.path, self.model)
        x = torch.rand(2, 3, 8, 8)
        restored = load_checkpoint(self.path).model
        expected = self.model.encode(x, 7.0)
        self.assertTrue(torch.equal(restored.encode(x, 7.0), expected))

    def test_layout_starts_with_magic_and_version(self) -> None:
        save_checkpoint(self.path, self.model)
        blob = self.path.read_bytes()
        magic, version, header_len = struct.unpack_from("<8sIQ", blob)
        self.assertEqual(magic, MAGIC)
        self.assertEqual(version, FORMAT_VERSION)
        self.assertTrue(blob[20 : 20 + header_len].startswith(b"{"))

    def test_no_temporary_file_left_behind(self) -> None:
        save_checkpoint(self.path, self.model)
        names = [p.name for p in Path(self.tmp.name).iterdir()]
        self.assertEqual(names, ["model.ckpt"])

    def test_truncated_file(self) -> None:
        save_checkpoint(self.path, self.model)
        self.path.write_bytes(self.path.read_bytes()[:-100])
        with self.assertRaisesRegex(CheckpointError, "truncated or corrupt"):
            load_checkpoint(self.path)

    def test_flipped_byte(self) -> None:
        save_checkpoint(self.path, self.model)
        blob = bytearray(self.path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        self.path.write_bytes(bytes(blob))
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_not_a_checkpoint(self) -> None:
        self.path.write_bytes(b"x" * 64)
        with self.assertRaisesRegex(CheckpointError, "not a checkpoint"):
            load_checkpoint(self.path)

    def test_tiny_file(self) -> None:
        self.path.write_bytes(b"ADJ")
        with self.assertRaisesRegex(CheckpointError, "truncated"):
            load_checkpoint(self.path)

    def test_different_architecture(self) -> None:
        save_checkpoint(self.path, self.model)
        with self.assertRaisesRegex(CheckpointError, "different architecture"):
            load_checkpoint(self.path, expected_arch=small_arch(c=4))

    def test_missing_file(self) -> None:
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)
