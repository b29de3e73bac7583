import math

import numpy as np
import pytest

from msloc.clutter import BackgroundDictionary, calibrate, lazy_dictionary, learn_entry, suppress
from msloc.detector import DetectorParams, build_map
from msloc.geometry import bistatic_delay
from msloc.scene import (
    ChannelMatrix,
    LinkChannelCache,
    NoiseSpec,
    clutter_channel,
    observe_link,
    target_channel,
)


def _cm(arr):
    return ChannelMatrix(np.asarray(arr, dtype=complex), "observed")


class TestLearnEntry:
    def test_identical_snapshots(self):
        snap = np.arange(12, dtype=float).reshape(4, 3) + 1j
        out = learn_entry([_cm(snap)] * 5)
        np.testing.assert_array_equal(out.entries, snap)
        assert out.kind == "background"

    def test_outlier_rejection_scalar_cell(self):
        snaps = [_cm([[1.0]]), _cm([[1.0]]), _cm([[100.0]])]
        assert learn_entry(snaps).entries[0, 0] == 1.0

    def test_even_count_midpoint(self):
        snaps = [_cm([[1.0 + 2j]]), _cm([[3.0 + 6j]])]
        assert learn_entry(snaps).entries[0, 0] == 2.0 + 4j

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            learn_entry([])

    def test_matches_sort_oracle_per_cell(self):
        rng = np.random.default_rng(0)
        stack = rng.standard_normal((9, 50, 4)) + 1j * rng.standard_normal((9, 50, 4))
        got = learn_entry([_cm(s) for s in stack]).entries
        re = np.sort(stack.real, axis=0)[4]
        im = np.sort(stack.imag, axis=0)[4]
        np.testing.assert_array_equal(got, re + 1j * im)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        snaps = [_cm(rng.standard_normal((6, 2))) for _ in range(7)]
        a = learn_entry(snaps).entries
        b = learn_entry(snaps[::-1]).entries
        np.testing.assert_array_equal(a, b)

    def test_commutes_with_constant_shift(self):
        rng = np.random.default_rng(2)
        snaps = [rng.standard_normal((5, 3)) + 1j * rng.standard_normal((5, 3)) for _ in range(8)]
        shift = (3.0 - 2.0j) * np.ones((5, 3))
        a = learn_entry([_cm(s + shift) for s in snaps]).entries
        b = learn_entry([_cm(s) for s in snaps]).entries + shift
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)

    def test_median_beats_mean_under_outlier(self):
        rng = np.random.default_rng(3)
        truth = rng.standard_normal((20, 4)) + 1j * rng.standard_normal((20, 4))
        snaps = [truth + 0.05 * (rng.standard_normal((20, 4)) + 1j * rng.standard_normal((20, 4)))
                 for _ in range(70)]
        snaps[13] = snaps[13] + 100.0 * np.abs(truth).max()
        med = learn_entry([_cm(s) for s in snaps]).entries
        mean = np.mean(np.stack(snaps), axis=0)
        assert np.abs(med - truth).max() < np.abs(mean - truth).max()

    def test_median_noise_variance(self):
        # median of N_BG complex-Gaussian snapshots attenuates the noise to
        # about (pi/2) * var / N_BG per real dimension
        rng = np.random.default_rng(4)
        n_bg, cells = 70, 10_000
        noise = rng.standard_normal((n_bg, cells))
        med = np.median(noise, axis=0)
        expected = (math.pi / 2) / n_bg
        assert np.var(med) == pytest.approx(expected, rel=0.2)


class TestCalibrate:
    def test_covers_all_ordered_pairs(self, small_scene, small_config):
        spec = small_config.noise_spec()
        d = calibrate(small_scene, spec, 5, (1,))
        n = len(small_scene.nodes)
        assert len(d) == n * (n - 1)
        assert (0, 1) in d and (1, 0) in d
        assert (2, 2) not in d

    def test_noiseless_limit_equals_background(self, small_scene):
        spec = NoiseSpec(290.0, 1.0, pilot_power_per_tone=1e30)
        d = calibrate(small_scene, spec, 5, (1,))
        truth = clutter_channel(small_scene, 0, 1).entries
        np.testing.assert_allclose(d.entry(0, 1).entries, truth, atol=1e-12 * np.abs(truth).max())

    def test_lazy_matches_eager(self, small_scene, small_config):
        spec = small_config.noise_spec()
        eager = calibrate(small_scene, spec, 6, (9,))
        lazy = lazy_dictionary(small_scene, spec, 6, (9,))
        for key in [(0, 1), (3, 2), (5, 0)]:
            np.testing.assert_array_equal(lazy.entry(*key).entries, eager.entry(*key).entries)

    def test_asymmetric_entries(self, small_scene, small_config):
        spec = small_config.noise_spec()
        d = calibrate(small_scene, spec, 4, (2,))
        assert not np.allclose(d.entry(0, 1).entries, d.entry(1, 0).entries)


class TestSuppress:
    def test_exact_match_gives_zero(self):
        d = BackgroundDictionary(1)
        bg = np.ones((4, 2), complex)
        d.entries[(0, 1)] = ChannelMatrix(bg, "background")
        res = suppress(ChannelMatrix(bg.copy(), "observed"), d, 0, 1)
        assert res.kind == "residual"
        assert not np.any(res.entries)

    def test_additive_identity(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
        b = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
        d = BackgroundDictionary(1)
        d.entries[(2, 4)] = ChannelMatrix(b, "background")
        res = suppress(ChannelMatrix(a + b, "observed"), d, 2, 4)
        np.testing.assert_allclose(res.entries, a, atol=1e-15)

    def test_missing_pair_raises(self):
        d = BackgroundDictionary(1)
        with pytest.raises(KeyError):
            suppress(ChannelMatrix(np.zeros((2, 2), complex), "observed"), d, 0, 1)

    def test_noiseless_calibration_recovers_target_exactly(self, small_scene):
        spec = NoiseSpec(290.0, 1.0, pilot_power_per_tone=1e30)
        d = calibrate(small_scene, spec, 3, (1,))
        truth_t = target_channel(small_scene, 0, 1).entries
        truth_c = clutter_channel(small_scene, 0, 1).entries
        obs = observe_link(
            ChannelMatrix(truth_t + truth_c, "true"), spec, small_scene.grid.delta_f,
            np.random.default_rng(0),
        )
        res = suppress(obs, d, 0, 1)
        np.testing.assert_allclose(res.entries, truth_t, atol=1e-10 * np.abs(truth_t).max())

    def test_target_outshines_residual_clutter_on_map(self, small_config):
        """After suppression the target bin dominates every clutter bin."""
        from msloc.harness import build_trial_scene

        spec = small_config.noise_spec()
        wins = 0
        trials = 40
        for t in range(trials):
            scene = build_trial_scene(small_config, t)
            cache = LinkChannelCache(scene)
            d = lazy_dictionary(scene, spec, small_config.num_background_snapshots,
                                (small_config.seed, t), cache)
            obs = observe_link(
                ChannelMatrix(
                    target_channel(scene, 0, 1).entries + cache.clutter(0, 1), "true"
                ),
                spec, scene.grid.delta_f, np.random.default_rng(t),
            )
            res = suppress(obs, d, 0, 1)
            ra = build_map(res, scene.grid, scene.ula,
                           DetectorParams().angle_grid(scene.ula), (0, 1))
            tx, rx = scene.nodes[0], scene.nodes[1]
            tau = float(bistatic_delay(tx.position, rx.position, scene.target.position))
            t_bin = int(round(tau / scene.grid.delay_bin))
            target_power = ra.power[:, max(t_bin - 1, 0) : t_bin + 2].max()
            clutter_bins = []
            for s in scene.clutter_for_link(0, 1):
                tc = float(bistatic_delay(tx.position, rx.position, s.position))
                clutter_bins.append(int(round(tc / scene.grid.delay_bin)))
            clutter_power = max(
                ra.power[:, max(b - 1, 0) : b + 2].max() for b in clutter_bins
            )
            if target_power > clutter_power:
                wins += 1
        assert wins >= 0.9 * trials


class TestSerialization:
    def test_round_trip(self, small_scene, small_config, tmp_path):
        spec = small_config.noise_spec()
        d = calibrate(small_scene, spec, 4, (3,))
        path = tmp_path / "background.npz"
        d.save(path)
        loaded = BackgroundDictionary.load(path)
        assert loaded.num_snapshots == d.num_snapshots
        assert len(loaded) == len(d)
        np.testing.assert_array_equal(loaded.entry(2, 3).entries, d.entry(2, 3).entries)
