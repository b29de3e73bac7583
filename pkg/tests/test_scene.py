import math

import numpy as np
import pytest

from msloc.geometry import NodePose, OfdmGrid, UlaConfig, aoa_boresight, bistatic_delay, steering_vector
from msloc.scene import (
    BOLTZMANN,
    ChannelMatrix,
    NoiseSpec,
    Rect,
    Scatterer,
    Scene,
    draw_rcs,
    los_channel,
    noise_power,
    observe_link,
    path_amplitude,
    random_scene,
    synth_component,
)


class TestDrawRcs:
    def test_mean_over_many_draws(self):
        rng = np.random.default_rng(0)
        draws = np.array([draw_rcs(1.0, rng) for _ in range(100_000)])
        assert 0.98 <= draws.mean() <= 1.02

    def test_nonnegative(self):
        rng = np.random.default_rng(1)
        assert all(draw_rcs(2.5, rng) >= 0 for _ in range(1000))

    def test_seed_reproducibility(self):
        a = [draw_rcs(1.0, np.random.default_rng(42)) for _ in range(1)]
        b = [draw_rcs(1.0, np.random.default_rng(42)) for _ in range(1)]
        assert a == b


class TestPathAmplitude:
    def test_constants_cancel(self):
        tx = NodePose((0, 0), 0.0)
        rx = NodePose((2, 0), 0.0)
        # unit gains, unit wavelength, rcs (4 pi)^3 and both legs length 1
        gamma = path_amplitude(tx, rx, (1, 0), (4 * math.pi) ** 3, 1.0)
        assert gamma == pytest.approx(1.0, rel=1e-12)

    def test_inverse_product_scaling(self):
        tx = NodePose((0, 0), 0.0)
        rx = NodePose((40, 0), 0.0)
        g1 = path_amplitude(tx, rx, (20, 10), 1.0, 0.03)
        tx2 = NodePose((-20, -10), 0.0)
        rx2 = NodePose((60, -10), 0.0)
        # both legs doubled
        g2 = path_amplitude(tx2, rx2, (20, 10), 1.0, 0.03)
        assert g2 == pytest.approx(g1 / 4, rel=1e-9)

    def test_reference_setup_value(self):
        lam = 299792458.0 / 10e9
        tx = NodePose((0, 0), 0.0)
        rx = NodePose((200, 0), 0.0)
        gamma = path_amplitude(tx, rx, (100, 0), 1.0, lam)
        expected = math.sqrt(lam**2 / (4 * math.pi) ** 3) / 1e4
        assert gamma == pytest.approx(expected, rel=1e-12)

    def test_coincidence_raises(self):
        tx = NodePose((0, 0), 0.0)
        rx = NodePose((1, 0), 0.0)
        with pytest.raises(ValueError):
            path_amplitude(tx, rx, (0, 0), 1.0, 0.03)


class TestNoisePower:
    def test_thermal_product(self):
        spec = NoiseSpec(noise_temperature=290.0, noise_figure=1.0)
        assert noise_power(15e3, spec) == pytest.approx(1.380649e-23 * 290 * 15e3, rel=1e-12)

    def test_linearity_in_bandwidth(self):
        spec = NoiseSpec(noise_temperature=290.0)
        assert noise_power(30e3, spec) == pytest.approx(2 * noise_power(15e3, spec))

    def test_minus_174_dbm_per_hz(self):
        # -174 dBm/Hz is thermal noise density near 290 K
        psd_dbm = 10 * math.log10(BOLTZMANN * 290 * 1.0) + 30
        assert psd_dbm == pytest.approx(-173.98, abs=0.01)


def _two_node_scene(grid, ula, target_pos=(80.0, 120.0)):
    tx = NodePose((20.0, 30.0), 0.5, location_id=0)
    rx = NodePose((150.0, 40.0), 2.2, location_id=1)
    target = Scatterer(np.array(target_pos), 1.0, 1.0)
    return Scene([tx, rx], ula, grid, target, [], Rect(0, 200, 0, 200))


class TestSynthComponent:
    def test_empty_list_is_zero(self, small_grid, small_ula):
        scene = _two_node_scene(small_grid, small_ula)
        cm = synth_component(scene.nodes[0], scene.nodes[1], [], small_grid, small_ula)
        assert not np.any(cm.entries)

    def test_single_element_modulus(self, small_grid):
        ula1 = UlaConfig(1, 0.001)
        tx = NodePose((0, 0), 0.0)
        rx = NodePose((50, 0), 0.0)
        s = Scatterer((25, 30), 1.0, 2.0)
        cm = synth_component(tx, rx, [s], small_grid, ula1)
        gamma = path_amplitude(tx, rx, s.position, s.drawn_rcs, small_grid.wavelength)
        np.testing.assert_allclose(np.abs(cm.entries[:, 0]), gamma, rtol=1e-12)

    def test_idft_peaks_at_delay_bin(self, small_grid):
        ula1 = UlaConfig(1, 0.001)
        tx = NodePose((0, 0), 0.0)
        rx = NodePose((60, 0), 0.0)
        s = Scatterer((30, 40), 1.0, 1.0)
        cm = synth_component(tx, rx, [s], small_grid, ula1)
        profile = np.abs(np.fft.ifft(cm.entries[:, 0]))
        tau = bistatic_delay(tx.position, rx.position, s.position)
        expected_bin = int(round(float(tau) / small_grid.delay_bin))
        assert int(np.argmax(profile)) == expected_bin

    def test_additive_in_scatterers(self, small_grid, small_ula):
        rng = np.random.default_rng(3)
        tx = NodePose((0, 0), 0.0)
        rx = NodePose((90, 10), 1.0)
        scats = [
            Scatterer(rng.uniform(10, 80, 2), 1.0, float(rng.exponential(1.0)))
            for _ in range(5)
        ]
        whole = synth_component(tx, rx, scats, small_grid, small_ula)
        parts = synth_component(tx, rx, scats[:2], small_grid, small_ula).entries + (
            synth_component(tx, rx, scats[2:], small_grid, small_ula).entries
        )
        # additive up to float summation order
        np.testing.assert_allclose(whole.entries, parts, rtol=1e-12, atol=1e-30)

    def test_snapshot_proportional_to_steering(self, small_grid, small_ula):
        tx = NodePose((0, 0), 0.0)
        rx = NodePose((90, 10), 1.0)
        s = Scatterer((40, 60), 1.0, 1.0)
        cm = synth_component(tx, rx, [s], small_grid, small_ula)
        theta = float(aoa_boresight(rx, s.position))
        for k in (0, 100, 255):
            a = steering_vector(small_grid, small_ula, k, theta)
            snap = cm.entries[k]
            inner = np.vdot(a, snap) / (np.linalg.norm(a) * np.linalg.norm(snap))
            assert abs(abs(inner) - 1.0) < 1e-12

    def test_scatterer_on_node_raises(self, small_grid, small_ula):
        tx = NodePose((0, 0), 0.0)
        rx = NodePose((90, 10), 1.0)
        s = Scatterer((90, 10), 1.0, 1.0)
        with pytest.raises(ValueError):
            synth_component(tx, rx, [s], small_grid, small_ula)


class TestObserveLink:
    def test_large_pilot_power_limit(self, small_grid, small_ula):
        scene = _two_node_scene(small_grid, small_ula)
        cm = synth_component(scene.nodes[0], scene.nodes[1], [scene.target], small_grid, small_ula)
        spec = NoiseSpec(290.0, 1.0, pilot_power_per_tone=1e30)
        obs = observe_link(cm, spec, small_grid.delta_f, np.random.default_rng(0))
        np.testing.assert_allclose(obs.entries, cm.entries, atol=1e-12 * np.abs(cm.entries).max())

    def test_error_variance_and_circularity(self):
        grid = OfdmGrid(1e9, 15e3, 32)
        ula = UlaConfig(4, grid.wavelength / 2)
        zero = ChannelMatrix(np.zeros((32, 4), complex), "true_target")
        spec = NoiseSpec(290.0, 2.0, pilot_power_per_tone=1e-3)
        var = spec.channel_error_variance(grid.delta_f)
        rng = np.random.default_rng(7)
        draws = np.stack(
            [observe_link(zero, spec, grid.delta_f, rng).entries for _ in range(100)]
        )
        # 100 x 32 x 4 = 12800 complex samples
        est = np.var(draws.real) + np.var(draws.imag)
        assert est == pytest.approx(var, rel=0.03)
        assert np.var(draws.real) == pytest.approx(var / 2, rel=0.05)
        assert np.var(draws.imag) == pytest.approx(var / 2, rel=0.05)

    def test_deterministic_given_seed(self, small_grid, small_ula):
        scene = _two_node_scene(small_grid, small_ula)
        cm = synth_component(scene.nodes[0], scene.nodes[1], [scene.target], small_grid, small_ula)
        spec = NoiseSpec(290.0, 1.0, 1e-3)
        a = observe_link(cm, spec, small_grid.delta_f, np.random.default_rng(5)).entries
        b = observe_link(cm, spec, small_grid.delta_f, np.random.default_rng(5)).entries
        np.testing.assert_array_equal(a, b)


class TestLosChannel:
    def test_amplitude_delay_and_angle(self, small_grid, small_ula):
        tx = NodePose((0, 0), 0.0, tx_gain=2.0)
        rx = NodePose((80, 0), 0.25, rx_gain=3.0)
        cm = los_channel(tx, rx, small_grid, small_ula)
        expected_amp = math.sqrt(6.0) * small_grid.wavelength / (4 * math.pi * 80.0)
        np.testing.assert_allclose(np.abs(cm.entries), expected_amp, rtol=1e-12)
        profile = np.abs(np.fft.ifft(cm.entries[:, 0]))
        assert int(np.argmax(profile)) == int(round(80.0 / 299792458.0 / small_grid.delay_bin))


class TestRandomScene:
    def test_contents_and_determinism(self, small_grid, small_ula):
        area = Rect(0, 200, 0, 200)
        s1 = random_scene(area, 10, 7, 1.0, small_grid, small_ula, np.random.default_rng(9))
        s2 = random_scene(area, 10, 7, 1.0, small_grid, small_ula, np.random.default_rng(9))
        assert len(s1.nodes) == 10
        assert len(s1.clutter) == 7
        assert len(s1.node_scatterers) == 10
        assert area.contains(s1.target.position)
        np.testing.assert_array_equal(s1.target.position, s2.target.position)
        np.testing.assert_array_equal(s1.nodes[3].position, s2.nodes[3].position)

    def test_link_clutter_excludes_active_nodes(self, small_grid, small_ula):
        area = Rect(0, 200, 0, 200)
        scene = random_scene(area, 6, 4, 1.0, small_grid, small_ula, np.random.default_rng(3))
        scats = scene.clutter_for_link(1, 4)
        positions = {tuple(s.position) for s in scats}
        assert tuple(scene.nodes[1].position) not in positions
        assert tuple(scene.nodes[4].position) not in positions
        assert tuple(scene.nodes[0].position) in positions
        assert len(scats) == 4 + 4  # dedicated clutter + other nodes

    def test_without_clutter(self, small_grid, small_ula):
        area = Rect(0, 200, 0, 200)
        scene = random_scene(area, 6, 4, 1.0, small_grid, small_ula, np.random.default_rng(3))
        bare = scene.without_clutter()
        assert bare.clutter == [] and bare.node_scatterers == []
        np.testing.assert_array_equal(bare.target.position, scene.target.position)
