# -*- coding: utf-8 -*-
from fractions import Fraction
from typing import List
from unittest import TestCase

import torch

from adjscc.channel import average_power
from adjscc.codec import (
    PAPER_CIFAR,
    TINY,
    ArchSpec,
    JSCCModel,
    bandwidth_ratio,
    build_arch,
    channels_for_ratio,
    count_parameters,
    parse_ratio,
)
from adjscc.exceptions import ArchitectureError, ShapeError
from adjscc.layers import Activation, Direction, LayerSpec
from adjscc.training import build_model, per_image_mse

DOWN, UP = Direction.DOWN, Direction.UP


def small_arch(use_attention: bool = True) -> ArchSpec:
    """8x8 RGB images, two symbols per 2x2 block of pixels (c = 2)."""
    return ArchSpec(
        fl_layers=(
            LayerSpec(3, 6, 2, DOWN),
            LayerSpec(3, 2, 1, DOWN, Activation.NONE),
            LayerSpec(3, 6, 1, UP),
            LayerSpec(3, 3, 2, UP, Activation.SIGMOID),
        ),
        use_attention=use_attention,
    )


def noiseless(z: torch.Tensor, snr_db: object) -> torch.Tensor:
    return z


class TestArchSpec(TestCase):
    def test_full_size_preset_shapes(self) -> None:
        arch = build_arch(PAPER_CIFAR, output_channels=16)
        self.assertEqual(len(arch.encoder_layers), 5)
        self.assertEqual(len(arch.decoder_layers), 5)
        self.assertEqual(arch.total_stride, 4)
        self.assertEqual(arch.latent_shape(32, 32), (16, 8, 8))
        self.assertEqual(arch.channel_symbols(32, 32), 512)
        self.assertEqual(bandwidth_ratio(32 * 32 * 3, 512), Fraction(1, 6))

    def test_image_size_must_match_stride(self) -> None:
        with self.assertRaisesRegex(ShapeError, "must be a multiple of 4"):
            build_arch(TINY).latent_shape(30, 32)

    def test_stride_products_must_agree(self) -> None:
        with self.assertRaises(ArchitectureError):
            ArchSpec(
                fl_layers=(
                    LayerSpec(3, 2, 2, DOWN, Activation.NONE),
                    LayerSpec(3, 3, 1, UP, Activation.SIGMOID),
                )
            )

    def test_sigmoid_only_on_final_layer(self) -> None:
        with self.assertRaises(ArchitectureError):
            ArchSpec(
                fl_layers=(
                    LayerSpec(3, 2, 1, DOWN, Activation.SIGMOID),
                    LayerSpec(3, 3, 1, UP, Activation.SIGMOID),
                )
            )

    def test_encoder_layers_come_first(self) -> None:
        with self.assertRaises(ArchitectureError):
            ArchSpec(
                fl_layers=(
                    LayerSpec(3, 2, 1, UP),
                    LayerSpec(3, 3, 1, DOWN, Activation.SIGMOID),
                )
            )

    def test_unknown_preset(self) -> None:
        with self.assertRaisesRegex(ArchitectureError, "unknown architecture preset"):
            build_arch("huge")

    def test_digest_ignores_preset_label(self) -> None:
        arch = build_arch(TINY, output_channels=8)
        copy = ArchSpec.from_dict({**arch.to_dict(), "preset": None})
        self.assertEqual(copy, arch)
        self.assertEqual(copy.digest(), arch.digest())
        self.assertNotEqual(build_arch(TINY, 16).digest(), arch.digest())

    def test_malformed_description(self) -> None:
        with self.assertRaises(ArchitectureError):
            ArchSpec.from_dict({"fl_layers": [{"kernel_size": 3}]})


class TestBandwidthRatio(TestCase):
    def test_channels_for_ratio(self) -> None:
        self.assertEqual(channels_for_ratio("1/6", 32, 32, 3, 4), 16)
        self.assertEqual(channels_for_ratio(Fraction(1, 12), 32, 32, 3, 4), 8)
        self.assertEqual(channels_for_ratio(0.5, 32, 32, 3, 4), 48)

    def test_unreachable_ratio(self) -> None:
        with self.assertRaisesRegex(ArchitectureError, "ratio unreachable"):
            channels_for_ratio("1/7", 32, 32, 3, 4)

    def test_parse_ratio(self) -> None:
        self.assertEqual(parse_ratio("1/6"), Fraction(1, 6))
        self.assertEqual(parse_ratio(0.25), Fraction(1, 4))


class TestParameterCounts(TestCase):
    def test_paper_cifar_bdjscc(self) -> None:
        arch = build_arch(PAPER_CIFAR, output_channels=16, use_attention=False)
        self.assertEqual(count_parameters(JSCCModel(arch)), 10_690_351)

    def test_paper_cifar_adjscc(self) -> None:
        arch = build_arch(PAPER_CIFAR, output_channels=16, use_attention=True)
        self.assertEqual(count_parameters(JSCCModel(arch)), 10_758_191)

    def test_attention_overhead_is_small(self) -> None:
        base = count_parameters(JSCCModel(build_arch(TINY, 16, use_attention=False)))
        full = count_parameters(JSCCModel(build_arch(TINY, 16, use_attention=True)))
        self.assertGreater(full, base)
        self.assertLess((full - base) / base, 0.1)

    def test_attention_module_count(self) -> None:
        model = JSCCModel(build_arch(TINY, 16))
        self.assertEqual(len(model.attention_modules("encoder")), 4)
        self.assertEqual(len(model.attention_modules("decoder")), 4)
        bdjscc = JSCCModel(build_arch(TINY, 16, use_attention=False))
        self.assertEqual(bdjscc.attention_modules(), [])


class TestModel(TestCase):
    def setUp(self) -> None:
        self.x = torch.rand(3, 3, 8, 8, generator=torch.Generator().manual_seed(0))

    def test_symbols_have_unit_power_per_image(self) -> None:
        z = build_model(small_arch()).encode(self.x, 10.0)
        k = small_arch().channel_symbols(8, 8)
        self.assertEqual(k, 2 * 4 * 4 // 2)
        self.assertEqual(z.shape, (3, k))
        for power in average_power(z):
            self.assertAlmostEqual(float(power), 1.0, places=5)

    def test_round_trip_shape(self) -> None:
        model = build_model(small_arch())
        x_hat = model(self.x, 10.0, noiseless)
        self.assertEqual(x_hat.shape, self.x.shape)
        self.assertTrue(bool(((x_hat >= 0) & (x_hat <= 1)).all()))

    def test_bdjscc_ignores_snr(self) -> None:
        model = build_model(small_arch(use_attention=False))
        low, high = model.encode(self.x, 0.0), model.encode(self.x, 20.0)
        self.assertTrue(torch.equal(low, high))

    def test_adjscc_uses_snr(self) -> None:
        model = build_model(small_arch())
        low, high = model.encode(self.x, 0.0), model.encode(self.x, 20.0)
        self.assertFalse(torch.equal(low, high))

    def test_feedback_snr_reaches_attention(self) -> None:
        model = build_model(small_arch())
        matched = model(self.x, 20.0, noiseless)
        mismatched = model(self.x, 20.0, noiseless, snr_fb_db=0.0)
        self.assertFalse(torch.equal(matched, mismatched))

    def test_per_example_snr(self) -> None:
        model = build_model(small_arch())
        snr = torch.tensor([0.0, 10.0, 20.0])
        z = model.encode(self.x, snr)
        for i in range(3):
            single = model.encode(self.x[i : i + 1], float(snr[i]))
            self.assertTrue(torch.allclose(z[i], single[0], atol=1e-6))

    def test_inconsistent_symbol_count(self) -> None:
        model = build_model(small_arch())
        z = model.encode(self.x, 10.0)
        with self.assertRaisesRegex(ShapeError, "inconsistent k"):
            model.decode(z[:, :-2], 10.0, (8, 8))

    def test_unbatched_symbols_are_rejected(self) -> None:
        model = build_model(small_arch())
        z = model.encode(self.x, 10.0)
        with self.assertRaisesRegex(ShapeError, "expected a batch"):
            model.decode(z[0], 10.0, (8, 8))

    def test_features_after_every_attention_module(self) -> None:
        model = build_model(small_arch())
        features = model.encoder.features(self.x, 5.0)
        self.assertEqual(len(features), 1)
        self.assertEqual(features[0].shape, (3, 6, 4, 4))

    def test_same_seed_same_parameters(self) -> None:
        a = build_model(small_arch(), seed=3).state_dict()
        b = build_model(small_arch(), seed=3).state_dict()
        for name in a:
            self.assertTrue(torch.equal(a[name], b[name]), name)


class TestPowerConstraint(TestCase):
    def test_random_encoders_meet_unit_power(self) -> None:
        # 20 randomly initialized tiny models, 50 random images each.
        arch = build_arch(TINY, output_channels=16)
        powers: List[torch.Tensor] = []
        for seed in range(20):
            model = build_model(arch, seed=seed).double()
            generator = torch.Generator().manual_seed(seed)
            x = torch.rand(50, 3, 32, 32, dtype=torch.float64, generator=generator)
            with torch.no_grad():
                powers.append(average_power(model.encode(x, 20.0 * seed / 19)))
        power = torch.cat(powers)
        self.assertEqual(power.numel(), 1000)
        self.assertLess(float((power - 1.0).abs().max()), 1e-6)


class TestDifferentiability(TestCase):
    def test_gradcheck_on_input(self) -> None:
        model = build_model(small_arch()).double()
        generator = torch.Generator().manual_seed(2)
        target = torch.rand(2, 3, 8, 8, dtype=torch.float64, generator=generator)
        x = target.clone().requires_grad_(True)

        def loss(images: torch.Tensor) -> torch.Tensor:
            return per_image_mse(target, model(images, 10.0, noiseless)).mean()

        self.assertTrue(torch.autograd.gradcheck(loss, (x,), eps=1e-6, atol=1e-5))

    def test_every_parameter_matches_finite_differences(self) -> None:
        model = build_model(small_arch(), seed=1).double()
        generator = torch.Generator().manual_seed(1)
        x = torch.rand(2, 3, 8, 8, dtype=torch.float64, generator=generator)

        def loss() -> torch.Tensor:
            return per_image_mse(x, model(x, 10.0, noiseless)).mean()

        model.zero_grad()
        loss().backward()
        eps = 1e-6
        for name, parameter in model.named_parameters():
            assert parameter.grad is not None, name
            flat = parameter.data.view(-1)
            for index in {0, flat.numel() // 2, flat.numel() - 1}:
                original = float(flat[index])
                with torch.no_grad():
                    flat[index] = original + eps
                    up = float(loss())
                    flat[index] = original - eps
                    down = float(loss())
                    flat[index] = original
                numeric = (up - down) / (2 * eps)
                analytic = float(parameter.grad.view(-1)[index])
                tolerance = 1e-3 * max(abs(numeric), abs(analytic)) + 1e-8
                self.assertLessEqual(abs(numeric - analytic), tolerance, name)
