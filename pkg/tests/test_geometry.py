import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msloc.geometry import (
    SPEED_OF_LIGHT,
    NodePose,
    OfdmGrid,
    UlaConfig,
    aoa_boresight,
    bistatic_delay,
    grad_aoa,
    grad_bistatic_delay,
    in_fov,
    steering_vector,
    wrap_pi,
)

C = SPEED_OF_LIGHT


class TestBistaticDelay:
    def test_three_four_five_triangles(self):
        assert bistatic_delay((0, 0), (6, 0), (3, 4)) == pytest.approx(10.0 / C)

    def test_degenerate_coincidence(self):
        assert bistatic_delay((0, 0), (0, 0), (0, 0)) == 0.0

    def test_scalar_closed_form(self):
        expected = (100.0 + math.hypot(100.0, 200.0)) / C
        assert bistatic_delay((0, 0), (200, 200), (100, 0)) == pytest.approx(expected, rel=1e-12)

    def test_symmetric_in_tx_rx(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a, b, p = rng.uniform(-50, 50, (3, 2))
            assert bistatic_delay(a, b, p) == pytest.approx(bistatic_delay(b, a, p), rel=1e-14)

    def test_triangle_inequality_vs_baseline(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a, b, p = rng.uniform(-50, 50, (3, 2))
            assert bistatic_delay(a, b, p) >= np.linalg.norm(a - b) / C - 1e-18


class TestAoaBoresight:
    def test_on_boresight(self):
        rx = NodePose((0, 0), 0.0)
        assert aoa_boresight(rx, (1, 0)) == pytest.approx(0.0)

    def test_quarter_turn(self):
        rx = NodePose((0, 0), math.pi / 2)
        assert aoa_boresight(rx, (1, 0)) == pytest.approx(-math.pi / 2)

    def test_wrapped_difference(self):
        rx = NodePose((0, 0), 3 * math.pi / 2)
        assert aoa_boresight(rx, (-1, 0)) == pytest.approx(-math.pi / 2)

    def test_coincident_raises(self):
        rx = NodePose((1, 2), 0.0)
        with pytest.raises(ValueError):
            aoa_boresight(rx, (1, 2))


class TestWrapPi:
    def test_identity(self):
        assert wrap_pi(0.0) == 0.0

    def test_single_wrap(self):
        assert wrap_pi(3 * math.pi / 2) == pytest.approx(-math.pi / 2)

    def test_boundary_maps_to_minus_pi(self):
        assert wrap_pi(-7 * math.pi) == pytest.approx(-math.pi)
        assert wrap_pi(math.pi) == pytest.approx(-math.pi)

    @given(st.floats(-100.0, 100.0), st.integers(-5, 5))
    @settings(max_examples=200, deadline=None)
    def test_periodic_and_idempotent(self, x, n):
        w = wrap_pi(x)
        assert -math.pi <= w < math.pi
        assert wrap_pi(x + 2 * math.pi * n) == pytest.approx(w, abs=1e-9)
        assert wrap_pi(w) == pytest.approx(w, abs=1e-12)


class TestSteeringVector:
    def test_broadside_all_ones(self):
        grid = OfdmGrid(1e9, 1e6, 16)
        ula = UlaConfig(8, grid.wavelength / 2)
        np.testing.assert_allclose(steering_vector(grid, ula, 3, 0.0), np.ones(8))

    def test_single_element(self):
        grid = OfdmGrid(1e9, 1e6, 16)
        ula = UlaConfig(1, 0.01)
        np.testing.assert_allclose(steering_vector(grid, ula, 0, 1.2), [1.0])

    def test_two_element_endfire_phases(self):
        grid = OfdmGrid(1e9, 1e6, 4)
        k = 2
        lam_k = SPEED_OF_LIGHT / grid.subcarrier_frequencies[k]
        ula = UlaConfig(2, lam_k / 2)
        v = steering_vector(grid, ula, k, math.pi / 2)
        np.testing.assert_allclose(v, [np.exp(1j * math.pi / 2), np.exp(-1j * math.pi / 2)], atol=1e-12)

    def test_unit_modulus_and_conjugate_symmetry(self):
        grid = OfdmGrid(9.9e9, 15e3, 64)
        ula = UlaConfig(7, grid.wavelength / 2)
        for theta in (-1.0, -0.2, 0.7):
            v = steering_vector(grid, ula, 10, theta)
            np.testing.assert_allclose(np.abs(v), 1.0, atol=1e-13)
            w = steering_vector(grid, ula, 10, -theta)
            np.testing.assert_allclose(w, np.conj(v), atol=1e-13)
            np.testing.assert_allclose(w, v[::-1], atol=1e-13)


class TestGradients:
    def test_bisector_direction(self):
        g = grad_bistatic_delay((-1, 0), (1, 0), (0, 1))
        np.testing.assert_allclose(g, [0.0, 2.0 / (C * math.sqrt(2))], atol=1e-18)

    def test_monostatic_doubling(self):
        g = grad_bistatic_delay((0, 0), (0, 0), (1, 0))
        np.testing.assert_allclose(g, [2.0 / C, 0.0])

    def test_grad_aoa_axis_cases(self):
        np.testing.assert_allclose(grad_aoa((0, 0), (1, 0)), [0.0, 1.0])
        np.testing.assert_allclose(grad_aoa((0, 0), (0, 2)), [-0.5, 0.0])

    def test_coincidence_raises(self):
        with pytest.raises(ValueError):
            grad_bistatic_delay((0, 0), (1, 1), (0, 0))
        with pytest.raises(ValueError):
            grad_aoa((2, 3), (2, 3))

    def test_norm_bounds_and_orthogonality(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            tx, rx, q = rng.uniform(-100, 100, (3, 2))
            gt = grad_bistatic_delay(tx, rx, q)
            assert np.linalg.norm(gt) <= 2.0 / C + 1e-24
            ga = grad_aoa(rx, q)
            # analytic orthogonality, up to one rounding of each component
            assert abs(ga @ (q - rx)) <= 1e-15 * np.linalg.norm(ga) * np.linalg.norm(q - rx)
            assert np.linalg.norm(ga) == pytest.approx(1.0 / np.linalg.norm(q - rx), rel=1e-12)

    def test_delay_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        h = 1e-4
        for _ in range(100):
            tx, rx, q = rng.uniform(-100, 100, (3, 2))
            g = grad_bistatic_delay(tx, rx, q)
            for axis in range(2):
                e = np.zeros(2)
                e[axis] = h
                fd = (bistatic_delay(tx, rx, q + e) - bistatic_delay(tx, rx, q - e)) / (2 * h)
                assert fd == pytest.approx(g[axis], rel=1e-5, abs=1e-16)

    def test_aoa_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        h = 1e-4
        for _ in range(100):
            rx_pos = rng.uniform(-100, 100, 2)
            q = rx_pos + rng.uniform(5, 50) * _unit(rng.uniform(-2.5, 2.5))
            rx = NodePose(rx_pos, 0.0)
            if abs(abs(aoa_boresight(rx, q)) - math.pi) < 0.1:
                continue  # stay away from the wrap boundary
            g = grad_aoa(rx_pos, q)
            for axis in range(2):
                e = np.zeros(2)
                e[axis] = h
                fd = (aoa_boresight(rx, q + e) - aoa_boresight(rx, q - e)) / (2 * h)
                assert fd == pytest.approx(g[axis], rel=1e-7, abs=1e-10)


def _unit(angle):
    return np.array([math.cos(angle), math.sin(angle)])


class TestFov:
    def test_ahead_inside(self):
        rx = NodePose((0, 0), 0.0)
        assert in_fov(rx, (5, 0), math.pi / 2)

    def test_behind_outside(self):
        rx = NodePose((0, 0), 0.0)
        assert not in_fov(rx, (-5, 0.001), math.pi / 2)

    def test_full_circle(self):
        rx = NodePose((0, 0), 1.0)
        rng = np.random.default_rng(5)
        pts = rng.uniform(-10, 10, (50, 2))
        assert np.all(in_fov(rx, pts, math.pi))


class TestOfdmGrid:
    def test_rms_bandwidth_two_tones(self):
        grid = OfdmGrid(1e9, 15e3, 2)
        assert grid.rms_bandwidth == pytest.approx(7.5e3)

    def test_rms_bandwidth_uniform_comb(self):
        grid = OfdmGrid(9.95e9, 15e3, 6667)
        assert grid.rms_bandwidth == pytest.approx(grid.bandwidth / (2 * math.sqrt(3)), rel=1e-3)

    def test_spacing_check(self):
        grid = OfdmGrid(10e9, 15e3, 8)
        UlaConfig(4, grid.wavelength / 2).check_spacing(grid.wavelength)
        with pytest.raises(ValueError):
            UlaConfig(4, grid.wavelength).check_spacing(grid.wavelength)
