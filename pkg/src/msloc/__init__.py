"""Multi-static OFDM sensing and cooperative target localization simulator."""

from .clutter import BackgroundDictionary, calibrate, lazy_dictionary, learn_entry, suppress
from .config import ScenarioConfig
from .detector import (
    DetectionCandidate,
    DetectorParams,
    LinkMeasurement,
    PriorGate,
    RangeAngleMap,
    beamform,
    build_map,
    cfar_detect,
    measure_link,
    nms,
    refine_aoa_music,
    refine_toa_phase,
)
from .fusion import Estimate, FusionProblem, coarse_init, gauss_newton_step, solve_wls, wls_cost
from .geometry import NodePose, OfdmGrid, UlaConfig, bistatic_delay, steering_vector, wrap_pi
from .harness import MonteCarloSummary, TrialRecord, monte_carlo
from .orchestrator import RunTrace, SensingConfig, run_localization, run_variant, throughput_loss
from .planner import PlannerParams, RadioParams, link_fim, peb_score, select_config
from .scene import (
    ChannelMatrix,
    NoiseSpec,
    Rect,
    Scatterer,
    Scene,
    observe_link,
    random_scene,
    synth_component,
)

__version__ = "0.1.0"
