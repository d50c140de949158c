import math

import numpy as np
import pytest

from varisep.audio import AudioBuffer
from varisep.losses import (
    LossConfig,
    finite_difference_grad,
    loss_inactive,
    loss_inactive_grad,
    loss_snr,
    loss_snr_grad,
    mixture_consistency,
    pit_loss,
)


def _unit(n: int, seed: int) -> np.ndarray:
    x = np.random.default_rng(seed).standard_normal(n)
    return x / np.linalg.norm(x)


class TestLossConfig:
    def test_default_tau(self):
        assert LossConfig().tau == pytest.approx(1e-3, rel=1e-15)
        assert LossConfig(snr_max=20.0).tau == pytest.approx(1e-2, rel=1e-15)

    def test_inconsistent_tau_rejected(self):
        with pytest.raises(ValueError):
            LossConfig(snr_max=30.0, tau=0.5)

    def test_bad_fields_rejected(self):
        with pytest.raises(ValueError):
            LossConfig(snr_max=-10.0)
        with pytest.raises(ValueError):
            LossConfig(num_outputs=0)


class TestSnrLosses:
    def test_perfect_estimate_hits_floor(self):
        y = _unit(256, 0)
        assert loss_snr(y, y) == pytest.approx(-30.0, abs=1e-12)

    def test_silent_estimate_inactive_floor(self):
        x = _unit(256, 1)
        assert loss_inactive(x, np.zeros(256)) == pytest.approx(-30.0, abs=1e-12)

    def test_sign_flip_value(self):
        y = _unit(64, 2)
        # err = 2y so the argument is 4 + tau
        assert loss_snr(y, -y) == pytest.approx(10 * math.log10(4.001), abs=1e-12)

    def test_joint_scaling_shifts_by_20log10(self):
        y = _unit(64, 3)
        y_hat = y + 0.1 * _unit(64, 4)
        base = loss_snr(y, y_hat)
        assert loss_snr(10 * y, 10 * y_hat) == pytest.approx(base + 20.0, abs=1e-9)

    def test_accepts_audio_buffers(self):
        y = AudioBuffer(_unit(128, 5), 16000)
        assert loss_snr(y, y) == pytest.approx(-30.0, abs=1e-12)

    def test_zero_reference_rejected(self):
        with pytest.raises(ValueError):
            loss_snr(np.zeros(16), np.ones(16))
        with pytest.raises(ValueError):
            loss_inactive(np.zeros(16), np.ones(16))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            loss_snr(np.ones(16), np.ones(17))


class TestGradients:
    def test_snr_grad_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        y = rng.standard_normal(32)
        y_hat = y + 0.3 * rng.standard_normal(32)
        analytic = loss_snr_grad(y, y_hat)
        numeric = finite_difference_grad(lambda v: loss_snr(y, v), y_hat)
        assert np.linalg.norm(analytic - numeric) <= 1e-6 * np.linalg.norm(analytic)

    def test_inactive_grad_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal(32)
        y_hat = 0.05 * rng.standard_normal(32)
        analytic = loss_inactive_grad(x, y_hat)
        numeric = finite_difference_grad(lambda v: loss_inactive(x, v), y_hat)
        assert np.linalg.norm(analytic - numeric) <= 1e-6 * np.linalg.norm(analytic)


class TestMixtureConsistency:
    def test_projection_sums_to_mixture(self):
        rng = np.random.default_rng(8)
        sources = [rng.standard_normal(500) for _ in range(3)]
        x = rng.standard_normal(500)
        fixed = mixture_consistency(sources, x)
        np.testing.assert_allclose(np.sum(fixed, axis=0), x, atol=1e-12)

    def test_idempotent(self):
        rng = np.random.default_rng(9)
        sources = [rng.standard_normal(100) for _ in range(4)]
        x = rng.standard_normal(100)
        once = mixture_consistency(sources, x)
        twice = mixture_consistency(once, x)
        for a, b in zip(once, twice):
            np.testing.assert_allclose(a, b, atol=1e-15)

    def test_equal_residual_share(self):
        sources = [np.zeros(4), np.zeros(4)]
        x = np.array([2.0, -4.0, 0.0, 8.0])
        fixed = mixture_consistency(sources, x)
        np.testing.assert_allclose(fixed[0], x / 2)
        np.testing.assert_allclose(fixed[1], x / 2)

    def test_audio_buffer_round_trip(self):
        x = AudioBuffer(np.ones(10), 16000)
        s = AudioBuffer(np.zeros(10), 16000)
        out = mixture_consistency([s], x)
        assert isinstance(out[0], AudioBuffer)
        assert out[0].sample_rate == 16000
        np.testing.assert_allclose(out[0].samples, np.ones(10))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mixture_consistency([], np.ones(4))


class TestPitLoss:
    def test_swapped_estimates_recovered(self):
        y0, y1 = _unit(256, 10), _unit(256, 11)
        result = pit_loss([y0, y1], [y1, y0], y0 + y1)
        assert result.best_permutation == (1, 0)
        assert result.total_loss == pytest.approx(-60.0, abs=1e-9)
        assert [k for k, _ in result.per_pair_losses] == ["active", "active"]

    def test_inactive_slots_score_against_mixture(self):
        y = _unit(256, 12)
        result = pit_loss([y], [y, np.zeros(256), np.zeros(256)], y)
        assert result.best_permutation == (0, 1, 2)
        assert result.total_loss == pytest.approx(-90.0, abs=1e-9)
        kinds = [k for k, _ in result.per_pair_losses]
        assert kinds == ["active", "inactive", "inactive"]
        assert result.mean_loss == pytest.approx(result.total_loss / 3)

    def test_tie_break_is_lexicographic(self):
        y = _unit(64, 13)
        result = pit_loss([y], [np.zeros(64), np.zeros(64)], y)
        # both assignments tie; the identity order wins
        assert result.best_permutation == (0, 1)

    def test_validations(self):
        y = _unit(16, 14)
        with pytest.raises(ValueError):
            pit_loss([y, y], [y], y)
        with pytest.raises(ValueError):
            pit_loss([], [y], y)
        with pytest.raises(ValueError):
            pit_loss([y], [y] * 7, y)

    def test_matches_brute_force_small(self):
        rng = np.random.default_rng(15)
        import itertools

        refs = [rng.standard_normal(100) for _ in range(2)]
        ests = [rng.standard_normal(100) for _ in range(3)]
        mix = np.sum(refs, axis=0)
        result = pit_loss(refs, ests, mix)
        best = math.inf
        for order in itertools.permutations(range(3)):
            total = 0.0
            for slot, est in enumerate(order):
                if slot < 2:
                    total += loss_snr(refs[slot], ests[est])
                else:
                    total += loss_inactive(mix, ests[est])
            best = min(best, total)
        assert result.total_loss == best
