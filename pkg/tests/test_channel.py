# -*- coding: utf-8 -*-
import math
from unittest import TestCase

import torch

from adjscc.channel import (
    Channel,
    ChannelConfig,
    ChannelMode,
    average_power,
    awgn_transmit,
    empirical_snr_db,
    fading_transmit_equalized,
    noise_power_tensor,
    pack_complex,
    power_normalize,
    snr_to_noise_power,
    unpack_complex,
)
from adjscc.exceptions import ChannelError
from adjscc.rng import derive_seed, rng_stream


class TestPacking(TestCase):
    def test_pairs_consecutive_reals(self) -> None:
        z = pack_complex(torch.tensor([1.0, 2.0, 3.0, 4.0]))
        self.assertEqual(z.shape, (2,))
        self.assertEqual(complex(z[0]), 1 + 2j)
        self.assertEqual(complex(z[1]), 3 + 4j)

    def test_unpack_restores_reals(self) -> None:
        values = torch.randn(3, 10, generator=rng_stream(0, "pack"))
        self.assertTrue(torch.equal(unpack_complex(pack_complex(values)), values))

    def test_odd_dimension_is_rejected(self) -> None:
        with self.assertRaisesRegex(ChannelError, "odd real dimension"):
            pack_complex(torch.ones(5))


class TestPowerNormalize(TestCase):
    def test_unit_power_per_block(self) -> None:
        raw = pack_complex(torch.randn(4, 64, generator=rng_stream(1, "power")))
        z = power_normalize(raw)
        for power in average_power(z):
            self.assertAlmostEqual(float(power), 1.0, places=5)

    def test_already_normalized_is_unchanged(self) -> None:
        raw = torch.tensor([1 + 0j, 0 + 1j, -1 + 0j, 0 - 1j])
        self.assertTrue(torch.allclose(power_normalize(raw), raw))

    def test_scale_invariant(self) -> None:
        raw = pack_complex(torch.randn(32, generator=rng_stream(2, "power")))
        self.assertTrue(torch.allclose(power_normalize(raw), power_normalize(7 * raw)))

    def test_zero_block_is_rejected(self) -> None:
        with self.assertRaisesRegex(ChannelError, "zero-power block"):
            power_normalize(torch.zeros(2, 4, dtype=torch.complex64))


class TestAWGN(TestCase):
    def test_noise_power_from_snr(self) -> None:
        self.assertAlmostEqual(snr_to_noise_power(0.0), 1.0)
        self.assertAlmostEqual(snr_to_noise_power(10.0), 0.1)
        self.assertAlmostEqual(snr_to_noise_power(20.0), 0.01)

    def test_noise_power_broadcasts_per_block(self) -> None:
        z = torch.zeros(3, 5, dtype=torch.complex64)
        power = noise_power_tensor(torch.tensor([0.0, 10.0, 20.0]), z)
        self.assertEqual(power.shape, (3, 1))

    def test_same_config_is_bit_identical(self) -> None:
        z = power_normalize(pack_complex(torch.ones(2, 16)))
        cfg = ChannelConfig(snr_db=5.0, seed=11)
        self.assertTrue(torch.equal(awgn_transmit(z, cfg), awgn_transmit(z, cfg)))

    def test_different_seeds_differ(self) -> None:
        z = power_normalize(pack_complex(torch.ones(16)))
        a = awgn_transmit(z, ChannelConfig(snr_db=5.0, seed=1))
        b = awgn_transmit(z, ChannelConfig(snr_db=5.0, seed=2))
        self.assertFalse(torch.equal(a, b))

    def test_empirical_snr_matches_configured(self) -> None:
        raw = pack_complex(torch.randn(2 * 10**6, generator=rng_stream(3, "z")))
        z = power_normalize(raw.to(torch.complex128))
        for seed, snr_db in enumerate((0.0, 10.0, 20.0)):
            with self.subTest(snr_db=snr_db):
                z_hat = awgn_transmit(z, ChannelConfig(snr_db=snr_db, seed=seed))
                self.assertAlmostEqual(empirical_snr_db(z, z_hat), snr_db, delta=0.05)

    def test_infinite_snr_is_noiseless(self) -> None:
        z = power_normalize(pack_complex(torch.randn(16, generator=rng_stream(5))))
        z_hat = awgn_transmit(z, ChannelConfig(snr_db=math.inf))
        self.assertTrue(torch.equal(z_hat, z))


class TestEqualizedFading(TestCase):
    def test_unit_gain_matches_awgn(self) -> None:
        z = power_normalize(pack_complex(torch.randn(2, 32, generator=rng_stream(6))))
        cfg = ChannelConfig(snr_db=3.0, seed=9)
        faded = fading_transmit_equalized(z, 1.0, cfg)
        self.assertTrue(torch.allclose(faded, awgn_transmit(z, cfg)))

    def test_weak_gain_amplifies_noise(self) -> None:
        z = power_normalize(pack_complex(torch.randn(4000, generator=rng_stream(7))))
        z = z.to(torch.complex128)
        cfg = ChannelConfig(snr_db=10.0, seed=3)
        strong = empirical_snr_db(z, fading_transmit_equalized(z, 1.0, cfg))
        weak = empirical_snr_db(z, fading_transmit_equalized(z, 0.1, cfg))
        self.assertAlmostEqual(strong - weak, 20.0, delta=1e-6)

    def test_deep_fade_is_rejected(self) -> None:
        z = power_normalize(pack_complex(torch.ones(8)))
        with self.assertRaisesRegex(ChannelError, "channel in deep fade"):
            fading_transmit_equalized(z, 0.0, ChannelConfig(snr_db=10.0))


class TestChannelModule(TestCase):
    def test_reset_replays_noise(self) -> None:
        channel = Channel(seed=5)
        z = power_normalize(pack_complex(torch.ones(2, 8)))
        first = channel(z, 0.0)
        channel.reset()
        self.assertTrue(torch.equal(channel(z, 0.0), first))

    def test_stream_advances(self) -> None:
        channel = Channel(seed=5)
        z = power_normalize(pack_complex(torch.ones(2, 8)))
        self.assertFalse(torch.equal(channel(z, 0.0), channel(z, 0.0)))

    def test_fading_mode_keeps_shape(self) -> None:
        channel = Channel(ChannelMode.EQUALIZED_FADING, seed=1)
        z = power_normalize(pack_complex(torch.ones(3, 8)))
        self.assertEqual(channel(z, torch.tensor([0.0, 5.0, 10.0])).shape, z.shape)

    def test_gradients_flow_through_noise(self) -> None:
        raw = torch.randn(2, 8, dtype=torch.float64, requires_grad=True)
        z = power_normalize(pack_complex(raw))
        Channel(seed=0)(z, 10.0).abs().sum().backward()
        assert raw.grad is not None
        self.assertTrue(bool(torch.isfinite(raw.grad).all()))


class TestStreams(TestCase):
    def test_derived_seeds_are_stable_and_distinct(self) -> None:
        self.assertEqual(derive_seed(7, "channel"), derive_seed(7, "channel"))
        self.assertNotEqual(derive_seed(7, "channel"), derive_seed(7, "snr"))
        self.assertNotEqual(derive_seed(7, 0, 1), derive_seed(7, 1, 0))
        self.assertNotEqual(derive_seed(7, "eval"), derive_seed(8, "eval"))
