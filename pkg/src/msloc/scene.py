"""Scene description and bistatic OFDM echo-channel synthesis.

A scene holds node poses, one target scatterer, and static clutter
scatterers (optionally including the nodes themselves as reflectors).
For an ordered node pair the true echo channel is the superposition of
single-bounce scatterer contributions plus the direct transmitter-receiver
path; least-squares channel observation adds i.i.d. circular complex
Gaussian error whose variance follows from thermal noise and per-tone
pilot power.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    SPEED_OF_LIGHT,
    TWO_PI,
    NodePose,
    OfdmGrid,
    UlaConfig,
    aoa_boresight,
    as_point,
)

BOLTZMANN = 1.380649e-23  # J/K

CHANNEL_KINDS = (
    "true",
    "true_target",
    "true_clutter",
    "observed",
    "background",
    "residual",
)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle bounds in meters."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("degenerate rectangle")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2])

    def contains(self, p) -> bool:
        p = as_point(p)
        return bool(
            np.all(
                (p[..., 0] >= self.x_min)
                & (p[..., 0] <= self.x_max)
                & (p[..., 1] >= self.y_min)
                & (p[..., 1] <= self.y_max)
            )
        )

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n uniform points, shape (n, 2)."""
        x = rng.uniform(self.x_min, self.x_max, n)
        y = rng.uniform(self.y_min, self.y_max, n)
        return np.column_stack([x, y])


@dataclass(frozen=True)
class Scatterer:
    """Point scatterer with a Swerling-type RCS draw frozen per trial."""

    position: np.ndarray
    mean_rcs: float
    drawn_rcs: float

    def __post_init__(self):
        object.__setattr__(self, "position", as_point(self.position).reshape(2))
        if self.mean_rcs <= 0:
            raise ValueError("mean_rcs must be positive")
        if self.drawn_rcs < 0:
            raise ValueError("drawn_rcs must be nonnegative")


@dataclass
class ChannelMatrix:
    """Complex frequency-space channel response, subcarriers x antennas."""

    entries: np.ndarray
    kind: str

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=complex)
        if self.entries.ndim != 2:
            raise ValueError("channel entries must be a 2-D matrix")
        if self.kind not in CHANNEL_KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("channel entries must be finite")

    @property
    def num_subcarriers(self) -> int:
        return self.entries.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class NoiseSpec:
    """Receiver noise model plus pilot power used by the LS channel estimate."""

    noise_temperature: float  # kelvin
    noise_figure: float = 1.0  # linear ratio
    pilot_power_per_tone: float = 1.0  # watts

    def __post_init__(self):
        if min(self.noise_temperature, self.noise_figure, self.pilot_power_per_tone) <= 0:
            raise ValueError("noise spec fields must be positive")

    def channel_error_variance(self, delta_f: float) -> float:
        """Per-entry variance of the LS channel-estimate error."""
        return noise_power(delta_f, self) / self.pilot_power_per_tone


@dataclass
class Scene:
    """Static deployment: nodes, target, clutter, and the search area.

    node_scatterers, when nonempty, is aligned with nodes and models each
    node body as an extra point reflector; the active transmitter and the
    receiving node of a link are excluded from that link's clutter.
    """

    nodes: list[NodePose]
    ula: UlaConfig
    grid: OfdmGrid
    target: Scatterer
    clutter: list[Scatterer]
    area: Rect
    node_scatterers: list[Scatterer] = field(default_factory=list)

    def __post_init__(self):
        if len(self.nodes) < 2:
            raise ValueError("a scene needs at least two nodes")
        if not self.area.contains(self.target.position):
            raise ValueError("target must lie inside the area")
        if self.node_scatterers and len(self.node_scatterers) != len(self.nodes):
            raise ValueError("node_scatterers must align with nodes")
        self.ula.check_spacing(self.grid.wavelength)

    @property
    def location_ids(self) -> list[int]:
        return [n.location_id for n in self.nodes]

    def without_clutter(self) -> "Scene":
        return Scene(
            nodes=self.nodes,
            ula=self.ula,
            grid=self.grid,
            target=self.target,
            clutter=[],
            area=self.area,
            node_scatterers=[],
        )

    def clutter_for_link(self, tx_id: int, rx_id: int) -> list[Scatterer]:
        """Clutter scatterers seen on link (tx_id, rx_id): dedicated clutter
        plus all node reflectors except the two active nodes."""
        extra = [
            s
            for n, s in enumerate(self.node_scatterers)
            if n != tx_id and n != rx_id
        ]
        return list(self.clutter) + extra


def draw_rcs(mean: float, rng: np.random.Generator) -> float:
    """One Swerling-I RCS draw: exponential with the given mean (m^2)."""
    if mean <= 0:
        raise ValueError("mean RCS must be positive")
    return float(rng.exponential(mean))


def noise_power(delta_f: float, spec: NoiseSpec) -> float:
    """Thermal noise power over one subcarrier bandwidth (watts)."""
    if delta_f <= 0:
        raise ValueError("delta_f must be positive")
    return BOLTZMANN * spec.noise_temperature * spec.noise_figure * delta_f


def path_amplitude(tx: NodePose, rx: NodePose, p, rcs: float, wavelength: float) -> float:
    """Bistatic radar-equation amplitude of a single-bounce path via p."""
    p = as_point(p).reshape(2)
    d_t = float(np.linalg.norm(p - tx.position))
    d_r = float(np.linalg.norm(p - rx.position))
    if d_t == 0.0 or d_r == 0.0:
        raise ValueError("scatterer coincides with a node position")
    num = math.sqrt(tx.tx_gain * rx.rx_gain * wavelength**2 * rcs / (4 * math.pi) ** 3)
    return num / (d_t * d_r)


def _synth_paths(
    gammas: np.ndarray,
    delays: np.ndarray,
    sin_aoas: np.ndarray,
    grid: OfdmGrid,
    ula: UlaConfig,
) -> np.ndarray:
    """Sum of path contributions gamma * exp(-j2pi f_k tau) * steering[m].

    One fused complex exponential per (path, tone, element); phases combine
    the delay ramp and the (frequency-dependent) ULA response.
    """
    k_freq = grid.subcarrier_frequencies
    m_c = ula.centered_indices()
    spatial = (TWO_PI * ula.spacing / SPEED_OF_LIGHT) * sin_aoas  # per path
    out = np.zeros((grid.num_subcarriers, ula.num_elements), dtype=complex)
    for g, tau, sp in zip(gammas, delays, spatial):
        phase = k_freq[:, None] * (-TWO_PI * tau - sp * m_c[None, :])
        out += g * np.exp(1j * phase)
    return out


def synth_component(
    tx: NodePose,
    rx: NodePose,
    scatterers: list[Scatterer],
    grid: OfdmGrid,
    ula: UlaConfig,
    kind: str = "true_clutter",
) -> ChannelMatrix:
    """Superpose single-bounce echo contributions of the given scatterers.

    Empty input yields the zero channel. Raises ValueError when a scatterer
    coincides with either node.
    """
    if not scatterers:
        return ChannelMatrix(
            np.zeros((grid.num_subcarriers, ula.num_elements), dtype=complex), kind
        )
    lam = grid.wavelength
    gammas = np.array(
        [path_amplitude(tx, rx, s.position, s.drawn_rcs, lam) for s in scatterers]
    )
    positions = np.array([s.position for s in scatterers])
    delays = (
        np.linalg.norm(positions - tx.position, axis=1)
        + np.linalg.norm(positions - rx.position, axis=1)
    ) / SPEED_OF_LIGHT
    sin_aoas = np.sin(aoa_boresight(rx, positions))
    return ChannelMatrix(_synth_paths(gammas, delays, sin_aoas, grid, ula), kind)


def los_channel(tx: NodePose, rx: NodePose, grid: OfdmGrid, ula: UlaConfig) -> ChannelMatrix:
    """Direct transmitter-to-receiver path (one-way spreading, no RCS)."""
    baseline = float(np.linalg.norm(tx.position - rx.position))
    if baseline == 0.0:
        raise ValueError("coincident transmitter and receiver")
    amp = math.sqrt(tx.tx_gain * rx.rx_gain) * grid.wavelength / (4 * math.pi * baseline)
    delay = baseline / SPEED_OF_LIGHT
    sin_aoa = math.sin(aoa_boresight(rx, tx.position))
    entries = _synth_paths(
        np.array([amp]), np.array([delay]), np.array([sin_aoa]), grid, ula
    )
    return ChannelMatrix(entries, "true_clutter")


def target_channel(scene: Scene, tx_id: int, rx_id: int) -> ChannelMatrix:
    """Echo contribution of the target alone on link (tx_id, rx_id)."""
    return synth_component(
        scene.nodes[tx_id],
        scene.nodes[rx_id],
        [scene.target],
        scene.grid,
        scene.ula,
        kind="true_target",
    )


def clutter_channel(scene: Scene, tx_id: int, rx_id: int) -> ChannelMatrix:
    """Static background of link (tx_id, rx_id): clutter echoes plus the
    direct path. This is what target-free calibration observes."""
    tx, rx = scene.nodes[tx_id], scene.nodes[rx_id]
    cm = synth_component(
        tx, rx, scene.clutter_for_link(tx_id, rx_id), scene.grid, scene.ula
    )
    cm.entries += los_channel(tx, rx, scene.grid, scene.ula).entries
    return cm


class LinkChannelCache:
    """Memoizes per-link static background channels within one trial.

    Clutter RCS draws are frozen for the trial, so the background of an
    ordered pair is deterministic and shared between calibration snapshots
    and sensing snapshots.
    """

    def __init__(self, scene: Scene):
        self.scene = scene
        self._clutter: dict[tuple[int, int], np.ndarray] = {}

    def clutter(self, tx_id: int, rx_id: int) -> np.ndarray:
        key = (tx_id, rx_id)
        if key not in self._clutter:
            self._clutter[key] = clutter_channel(self.scene, tx_id, rx_id).entries
        return self._clutter[key]


def observe_link(
    true_channel: ChannelMatrix,
    spec: NoiseSpec,
    delta_f: float,
    rng: np.random.Generator,
) -> ChannelMatrix:
    """LS channel observation: true channel plus i.i.d. CN(0, sigma_H^2)."""
    var = spec.channel_error_variance(delta_f)
    shape = true_channel.entries.shape
    scale = math.sqrt(var / 2.0)
    noise = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return ChannelMatrix(true_channel.entries + noise, "observed")


def random_scene(
    area: Rect,
    num_nodes: int,
    num_clutter: int,
    mean_rcs: float,
    grid: OfdmGrid,
    ula: UlaConfig,
    rng: np.random.Generator,
    tx_gain: float = 1.0,
    rx_gain: float = 1.0,
    nodes_as_clutter: bool = True,
) -> Scene:
    """Draw a uniform random deployment (used per Monte Carlo trial).

    Node positions, boresights, the target, clutter positions, and all RCS
    values are drawn from the one generator in a fixed order, so a seed
    pins the whole scene.
    """
    node_pos = area.sample(num_nodes, rng)
    boresights = rng.uniform(0.0, TWO_PI, num_nodes)
    nodes = [
        NodePose(node_pos[n], float(boresights[n]), tx_gain, rx_gain, location_id=n)
        for n in range(num_nodes)
    ]
    target = Scatterer(area.sample(1, rng)[0], mean_rcs, draw_rcs(mean_rcs, rng))
    clutter_pos = area.sample(num_clutter, rng)
    clutter = [
        Scatterer(clutter_pos[i], mean_rcs, draw_rcs(mean_rcs, rng))
        for i in range(num_clutter)
    ]
    node_scatterers = []
    if nodes_as_clutter:
        node_scatterers = [
            Scatterer(node_pos[n], mean_rcs, draw_rcs(mean_rcs, rng))
            for n in range(num_nodes)
        ]
    return Scene(
        nodes=nodes,
        ula=ula,
        grid=grid,
        target=target,
        clutter=clutter,
        area=area,
        node_scatterers=node_scatterers,
    )
