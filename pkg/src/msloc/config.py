"""Scenario configuration: physical constants of a run plus harness knobs.

Defaults reproduce the reference setup: a 200 x 200 m^2 area with 40 nodes
and 30 dedicated clutter scatterers, 10 GHz carrier, 15 kHz subcarrier
spacing with 6667 tones (about 100 MHz), 23 dBm transmit power, 0 dBsm
mean RCS, 0 dBi gains, -174 dBm/Hz noise density, and 70 background
learning snapshots. Configs load from a flat YAML mapping.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import yaml

from .detector import DetectorParams
from .geometry import OfdmGrid, UlaConfig
from .planner import PlannerParams, RadioParams
from .scene import BOLTZMANN, NoiseSpec, Rect


def dbm_to_watt(dbm: float) -> float:
    return 10 ** ((dbm - 30.0) / 10.0)


def db_to_linear(db: float) -> float:
    return 10 ** (db / 10.0)


@dataclass
class ScenarioConfig:
    # deployment
    area_width: float = 200.0
    area_height: float = 200.0
    num_nodes: int = 40
    num_clutter: int = 30
    nodes_as_clutter: bool = True
    mean_rcs_dbsm: float = 0.0
    # radio
    carrier_frequency: float = 10e9
    delta_f: float = 15e3
    num_subcarriers: int = 6667
    num_antennas: int = 32
    antenna_spacing: float | None = None  # None -> half wavelength
    tx_power_dbm: float = 23.0
    tx_gain_dbi: float = 0.0
    rx_gain_dbi: float = 0.0
    noise_psd_dbm_hz: float = -174.0
    noise_figure_db: float = 0.0
    # background learning
    num_background_snapshots: int = 70
    # planner
    num_rx: int = 1
    planner_samples: int = 500
    fov_half_angle: float = math.pi / 2
    mu_reg: float = 1e-6
    # iteration control
    j_max: int = 6
    l_max: int = 50
    epsilon: float = 1e-4
    # harness
    trials: int = 100
    seed: int = 0
    fixed_geometry: bool = False
    # frame bookkeeping (coherence time recorded but unused: static target)
    coherence_time: float = 10e-3
    frame_symbols: int = 140

    def __post_init__(self):
        if self.num_subcarriers < 2 or self.num_antennas < 1:
            raise ValueError("grid/array sizes out of range")
        if self.delta_f <= 0 or self.carrier_frequency <= 0:
            raise ValueError("frequencies must be positive")
        if self.j_max < 1 or self.l_max < 1 or self.trials < 1:
            raise ValueError("iteration/trial counts must be >= 1")
        if self.num_rx < 1 or self.num_rx >= self.num_nodes:
            raise ValueError("need 1 <= num_rx < num_nodes")

    # -- derived quantities -------------------------------------------------

    @property
    def bandwidth(self) -> float:
        return self.num_subcarriers * self.delta_f

    @property
    def wavelength(self) -> float:
        from .geometry import SPEED_OF_LIGHT

        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def mean_rcs(self) -> float:
        return db_to_linear(self.mean_rcs_dbsm)

    @property
    def tx_power(self) -> float:
        return dbm_to_watt(self.tx_power_dbm)

    @property
    def pilot_power_per_tone(self) -> float:
        return self.tx_power / self.num_subcarriers

    def area(self) -> Rect:
        return Rect(0.0, self.area_width, 0.0, self.area_height)

    def grid(self) -> OfdmGrid:
        f0 = self.carrier_frequency - (self.num_subcarriers - 1) * self.delta_f / 2.0
        return OfdmGrid(f0, self.delta_f, self.num_subcarriers)

    def ula(self) -> UlaConfig:
        spacing = self.antenna_spacing
        if spacing is None:
            spacing = self.grid().wavelength / 2.0
        return UlaConfig(self.num_antennas, spacing)

    def noise_spec(self) -> NoiseSpec:
        psd_watt = dbm_to_watt(self.noise_psd_dbm_hz)  # W/Hz
        return NoiseSpec(
            noise_temperature=psd_watt / BOLTZMANN,
            noise_figure=db_to_linear(self.noise_figure_db),
            pilot_power_per_tone=self.pilot_power_per_tone,
        )

    def detector_params(self) -> DetectorParams:
        return DetectorParams()

    def planner_params(self, seed: int) -> PlannerParams:
        return PlannerParams(
            num_rx=self.num_rx,
            num_samples=self.planner_samples,
            fov_half_angle=self.fov_half_angle,
            mu_reg=self.mu_reg,
            seed=seed,
        )

    def radio_params(self, noise: NoiseSpec | None = None) -> RadioParams:
        return RadioParams.from_link_budget(
            self.grid(),
            self.ula(),
            noise if noise is not None else self.noise_spec(),
            self.mean_rcs,
            aoa_variance_cap=self.detector_params().aoa_variance_cap,
            fov_half_angle=self.fov_half_angle,
        )

    # -- serialization ------------------------------------------------------

    @classmethod
    def from_mapping(cls, data: dict) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_yaml(cls, path) -> "ScenarioConfig":
        with open(path, "r", encoding="utf-8") as handle:
            data = yaml.safe_load(handle) or {}
        if not isinstance(data, dict):
            raise ValueError("scenario config must be a flat mapping")
        return cls.from_mapping(data)

    def to_yaml(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            yaml.safe_dump(asdict(self), handle, sort_keys=False)
