import math

import numpy as np
import pytest

from msloc.config import ScenarioConfig
from msloc.geometry import NodePose, OfdmGrid, UlaConfig
from msloc.scene import Rect, Scatterer, Scene


@pytest.fixture
def small_grid() -> OfdmGrid:
    """512 tones x 250 kHz: covers the area without delay aliasing, cheap."""
    return OfdmGrid(f0=9.9e9, delta_f=250e3, num_subcarriers=512)


@pytest.fixture
def small_ula(small_grid) -> UlaConfig:
    return UlaConfig(num_elements=8, spacing=small_grid.wavelength / 2)


@pytest.fixture
def small_scene(small_grid, small_ula) -> Scene:
    rng = np.random.default_rng(123)
    area = Rect(0.0, 200.0, 0.0, 200.0)
    positions = area.sample(6, rng)
    nodes = [
        NodePose(positions[i], float(rng.uniform(0, 2 * math.pi)), location_id=i)
        for i in range(6)
    ]
    target = Scatterer(area.sample(1, rng)[0], 1.0, 1.0)
    clutter = [Scatterer(p, 1.0, float(rng.exponential(1.0))) for p in area.sample(4, rng)]
    return Scene(nodes, small_ula, small_grid, target, clutter, area)


@pytest.fixture
def small_config() -> ScenarioConfig:
    """Desk-scale scenario: full pipeline in well under a second per trial."""
    return ScenarioConfig(
        num_nodes=8,
        num_clutter=5,
        num_subcarriers=512,
        num_antennas=8,
        delta_f=250e3,
        num_background_snapshots=20,
        planner_samples=100,
        j_max=4,
        trials=3,
        seed=7,
    )
