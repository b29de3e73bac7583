"""Planar geometry and ULA array-response primitives.

Positions are 2-D points in meters, angles are radians. Arrays are uniform
linear arrays (ULA) described by element count and spacing; the OFDM grid
provides the subcarrier frequencies the wideband steering response depends
on. All functions broadcast over trailing point dimensions (..., 2) so the
planner and detector can evaluate them on whole grids at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299792458.0  # m/s

TWO_PI = 2.0 * math.pi


def as_point(p) -> np.ndarray:
    """Coerce a point-like (tuple, list, ndarray) to a float array (..., 2)."""
    a = np.asarray(p, dtype=float)
    if a.shape[-1] != 2:
        raise ValueError(f"expected trailing dimension 2, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class NodePose:
    """Pose and gains of one sensing node.

    boresight is the ULA normal direction in [0, 2pi); AoA measurements are
    relative to it. Gains are linear power ratios. location_id keys the
    background dictionary (distinct ids for distinct operating spots).
    """

    position: np.ndarray
    boresight: float
    tx_gain: float = 1.0
    rx_gain: float = 1.0
    location_id: int = 0

    def __post_init__(self):
        pos = as_point(self.position).astype(float).reshape(2)
        if not np.all(np.isfinite(pos)):
            raise ValueError("node position must be finite")
        object.__setattr__(self, "position", pos)
        if not (0.0 <= self.boresight < TWO_PI):
            raise ValueError(f"boresight {self.boresight} not in [0, 2pi)")
        if self.tx_gain <= 0 or self.rx_gain <= 0:
            raise ValueError("antenna gains must be positive")
        if self.location_id < 0:
            raise ValueError("location_id must be >= 0")


@dataclass(frozen=True)
class UlaConfig:
    """Uniform linear array: element count and inter-element spacing (m)."""

    num_elements: int
    spacing: float

    def __post_init__(self):
        if self.num_elements < 1:
            raise ValueError("num_elements must be >= 1")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")

    def centered_indices(self) -> np.ndarray:
        """Element indices centered on the array phase center (half-integer
        for even counts)."""
        m = self.num_elements
        return np.arange(m, dtype=float) - (m - 1) / 2.0

    def check_spacing(self, wavelength: float) -> None:
        """Spacing must not exceed half the operating wavelength."""
        if self.spacing > wavelength / 2 + 1e-12:
            raise ValueError(
                f"spacing {self.spacing} m exceeds half wavelength "
                f"{wavelength / 2} m"
            )


@dataclass
class OfdmGrid:
    """OFDM subcarrier grid: lowest tone f0, spacing delta_f, tone count."""

    f0: float
    delta_f: float
    num_subcarriers: int

    def __post_init__(self):
        if self.delta_f <= 0:
            raise ValueError("delta_f must be positive")
        if self.num_subcarriers < 2:
            raise ValueError("num_subcarriers must be >= 2")
        self._freqs = self.f0 + self.delta_f * np.arange(self.num_subcarriers)

    @property
    def subcarrier_frequencies(self) -> np.ndarray:
        return self._freqs

    @property
    def bandwidth(self) -> float:
        return self.num_subcarriers * self.delta_f

    @property
    def center_frequency(self) -> float:
        return self.f0 + (self.num_subcarriers - 1) * self.delta_f / 2.0

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.center_frequency

    @property
    def delay_bin(self) -> float:
        """Delay resolution of an inverse DFT across the grid."""
        return 1.0 / (self.num_subcarriers * self.delta_f)

    @property
    def rms_bandwidth(self) -> float:
        """RMS width of the mean-removed subcarrier frequency comb."""
        offsets = self._freqs - self._freqs.mean()
        return float(np.sqrt(np.mean(offsets**2)))


def wrap_pi(x):
    """Wrap angle(s) to [-pi, pi)."""
    return (np.asarray(x, dtype=float) + math.pi) % TWO_PI - math.pi


def bistatic_delay(tx, rx, p):
    """Two-leg propagation delay tx -> p -> rx in seconds.

    Coincident points are allowed (degenerate legs contribute zero).
    """
    tx = as_point(tx)
    rx = as_point(rx)
    p = as_point(p)
    d = np.linalg.norm(p - tx, axis=-1) + np.linalg.norm(p - rx, axis=-1)
    return d / SPEED_OF_LIGHT


def aoa_boresight(rx: NodePose, p):
    """Angle of arrival of point p at the receiver, relative to boresight.

    Raises ValueError if p coincides with the receiver position.
    """
    p = as_point(p)
    delta = p - rx.position
    if np.any(np.all(delta == 0.0, axis=-1)):
        raise ValueError("point coincides with receiver position")
    return wrap_pi(np.arctan2(delta[..., 1], delta[..., 0]) - rx.boresight)


def in_fov(rx: NodePose, p, half_angle: float):
    """True where p lies within +-half_angle of the receiver boresight."""
    if not (0.0 < half_angle <= math.pi):
        raise ValueError("half_angle must lie in (0, pi]")
    return np.abs(aoa_boresight(rx, p)) <= half_angle


def steering_vector(grid: OfdmGrid, ula: UlaConfig, k: int, theta: float) -> np.ndarray:
    """Wideband ULA steering vector on subcarrier k for impinging angle theta.

    Element m carries phase -2*pi*(f_k/c)*d*sin(theta)*m_c with m_c the
    centered element index. Entries are unit modulus.
    """
    if not (0 <= k < grid.num_subcarriers):
        raise ValueError(f"subcarrier index {k} out of range")
    fk = grid.subcarrier_frequencies[k]
    m_c = ula.centered_indices()
    phase = -TWO_PI * (fk / SPEED_OF_LIGHT) * ula.spacing * math.sin(theta) * m_c
    return np.exp(1j * phase)


def grad_bistatic_delay(tx, rx, q) -> np.ndarray:
    """Gradient of the bistatic delay with respect to the scatter point q.

    Equals (1/c) times the sum of unit vectors from tx to q and rx to q;
    its norm never exceeds 2/c. Raises ValueError when q coincides with
    either node.
    """
    tx = as_point(tx)
    rx = as_point(rx)
    q = as_point(q)
    dt = q - tx
    dr = q - rx
    nt = np.linalg.norm(dt, axis=-1, keepdims=True)
    nr = np.linalg.norm(dr, axis=-1, keepdims=True)
    if np.any(nt == 0.0) or np.any(nr == 0.0):
        raise ValueError("q coincides with a node position")
    return (dt / nt + dr / nr) / SPEED_OF_LIGHT


def grad_aoa(rx, q) -> np.ndarray:
    """Gradient of the arrival angle at rx with respect to q.

    Perpendicular to (q - rx) with norm 1/range; independent of boresight.
    Raises ValueError when q coincides with the receiver.
    """
    rx = as_point(rx)
    q = as_point(q)
    d = q - rx
    r2 = np.sum(d * d, axis=-1, keepdims=True)
    if np.any(r2 == 0.0):
        raise ValueError("q coincides with the receiver position")
    return np.stack([-d[..., 1], d[..., 0]], axis=-1) / r2
