"""Sensing-configuration planning: initialization and score-based selection.

Before any estimate exists, the receiver subset is chosen to maximize
field-of-view coverage of random sample points over the search area, and
the transmitter to minimize the mean predicted position-error bound over
those samples. Once an estimate is available, every (transmitter,
receiver-subset) candidate is scored by the error bound predicted from
per-link Fisher information at the estimate, and the minimizer is selected
exhaustively (with a greedy fallback beyond a candidate-count limit).

Scores are evaluated through the rank-one structure of the information
matrix: the determinant of a sum of rank-one terms plus the regularizer is
a sum of nonnegative pairwise cross products, which stays exact where the
textbook closed form cancels catastrophically (near-singular information
from a sample point sitting next to a node).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import (
    SPEED_OF_LIGHT,
    NodePose,
    OfdmGrid,
    UlaConfig,
    as_point,
    in_fov,
    wrap_pi,
)
from .scene import NoiseSpec, Rect
from .seeding import rng_from_key

HALF_PI = math.pi / 2.0

EXHAUSTIVE_SUBSET_LIMIT = 100_000  # receiver subsets during initialization
EXHAUSTIVE_CONFIG_LIMIT = 1_000_000  # (tx, subset) candidates during selection

# Numerical guards on the prediction proxies: ranges below a node's own
# physical extent and variances below these floors are not meaningful and
# would only produce degenerate information matrices.
MIN_RANGE = 1.0  # m
TOA_VARIANCE_FLOOR = 1e-24  # s^2  (0.3 um ranging std)
AOA_VARIANCE_FLOOR = 1e-12  # rad^2 (1 urad std)


@dataclass(frozen=True)
class SensingConfig:
    """One transmitter plus a disjoint receiver subset."""

    tx: int
    rx_set: tuple[int, ...]

    def __post_init__(self):
        rx = tuple(sorted(int(r) for r in self.rx_set))
        object.__setattr__(self, "rx_set", rx)
        if len(set(rx)) != len(rx):
            raise ValueError("duplicate receivers")
        if self.tx in rx:
            raise ValueError("transmitter cannot also receive")


@dataclass(frozen=True)
class PlannerParams:
    num_rx: int
    num_samples: int = 500
    fov_half_angle: float = HALF_PI
    mu_reg: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.num_rx < 1 or self.num_samples < 1:
            raise ValueError("num_rx and num_samples must be >= 1")
        if self.mu_reg <= 0:
            raise ValueError("mu_reg must be positive")


@dataclass(frozen=True)
class RadioParams:
    """Link-budget context for predicted measurement variances.

    error_variance is the per-entry LS channel-error variance; the proxy
    SNR of a predicted link includes the coherent processing gain over
    subcarriers and antennas, mirroring the map-level SNR the detector
    reports.
    """

    grid: OfdmGrid
    ula: UlaConfig
    error_variance: float
    mean_rcs: float
    aoa_variance_cap: float = HALF_PI**2
    fov_half_angle: float = HALF_PI

    @property
    def integration_gain(self) -> float:
        return float(self.grid.num_subcarriers * self.ula.num_elements)

    @classmethod
    def from_link_budget(
        cls,
        grid: OfdmGrid,
        ula: UlaConfig,
        noise: NoiseSpec,
        mean_rcs: float,
        aoa_variance_cap: float = HALF_PI**2,
        fov_half_angle: float = HALF_PI,
    ) -> "RadioParams":
        return cls(
            grid,
            ula,
            noise.channel_error_variance(grid.delta_f),
            mean_rcs,
            aoa_variance_cap,
            fov_half_angle,
        )


@lru_cache(maxsize=64)
def _combinations(n: int, k: int) -> np.ndarray:
    """All k-subsets of range(n) in lexicographic order, shape (C, k)."""
    return np.array(list(itertools.combinations(range(n), k)), dtype=int).reshape(-1, k)


def area_samples(area: Rect, params: PlannerParams) -> np.ndarray:
    """The planner's seeded uniform sample points over the search area."""
    rng = rng_from_key(params.seed)
    return area.sample(params.num_samples, rng)


def _coverage_matrix(
    nodes: list[NodePose], samples: np.ndarray, half_angle: float
) -> np.ndarray:
    return np.stack([in_fov(n, samples, half_angle) for n in nodes])


def init_rx_by_coverage(
    nodes: list[NodePose], area: Rect, params: PlannerParams
) -> tuple[int, ...]:
    """Receiver subset maximizing sample coverage by at least one FoV.

    Exhaustive over subsets up to EXHAUSTIVE_SUBSET_LIMIT, greedy
    max-coverage beyond; ties resolve to the lexicographically smallest
    sorted id tuple.
    """
    n = len(nodes)
    if params.num_rx >= n:
        raise ValueError("need num_rx < number of nodes")
    samples = area_samples(area, params)
    cover = _coverage_matrix(nodes, samples, params.fov_half_angle)
    if math.comb(n, params.num_rx) <= EXHAUSTIVE_SUBSET_LIMIT:
        combos = _combinations(n, params.num_rx)
        counts = cover[combos].any(axis=1).sum(axis=1)
        return tuple(int(i) for i in combos[int(np.argmax(counts))])
    chosen: list[int] = []
    covered = np.zeros(samples.shape[0], dtype=bool)
    for _ in range(params.num_rx):
        gains = (cover | covered).sum(axis=1)
        gains[chosen] = -1
        best = int(np.argmax(gains))
        chosen.append(best)
        covered |= cover[best]
    return tuple(sorted(chosen))


def _proxy_link_terms(points: np.ndarray, tx: NodePose, rx: NodePose, radio: RadioParams):
    """Rank-one information terms of one candidate link at given points.

    Returns (w_tau, g_tau, w_aoa, g_aoa) where the information matrix of
    the link is w_tau * g_tau g_tau^T + w_aoa * g_aoa g_aoa^T. Broadcasts
    over leading point dimensions; ranges are clamped to MIN_RANGE and the
    variances to their floors/cap.
    """
    d_t = np.maximum(np.linalg.norm(points - tx.position, axis=-1), MIN_RANGE)
    d_r = np.maximum(np.linalg.norm(points - rx.position, axis=-1), MIN_RANGE)
    u_t = (points - tx.position) / d_t[..., None]
    u_r = (points - rx.position) / d_r[..., None]

    lam = radio.grid.wavelength
    alpha2 = (
        tx.tx_gain * rx.rx_gain * lam**2 * radio.mean_rcs / (4 * math.pi) ** 3
    ) / (d_t * d_r) ** 2
    gamma = radio.integration_gain * alpha2 / radio.error_variance

    var_toa = np.maximum(
        (2 * math.pi * radio.grid.rms_bandwidth) ** -2 / (2.0 * gamma),
        TOA_VARIANCE_FLOOR,
    )
    w_tau = 1.0 / var_toa
    g_tau = (u_t + u_r) / SPEED_OF_LIGHT

    delta = points - rx.position
    theta = wrap_pi(np.arctan2(delta[..., 1], delta[..., 0]) - rx.boresight)
    m = radio.ula.num_elements
    visible = (np.abs(theta) < min(radio.fov_half_angle, HALF_PI)) & (m >= 2)
    aoa_const = (
        radio.grid.num_subcarriers
        * (2 * math.pi * radio.ula.spacing / lam) ** 2
        * m
        * max(m**2 - 1, 0)
        / 6.0
    )
    inv_model = gamma * aoa_const * np.cos(theta) ** 2
    w_aoa = np.where(
        visible,
        np.clip(inv_model, 1.0 / radio.aoa_variance_cap, 1.0 / AOA_VARIANCE_FLOOR),
        1.0 / radio.aoa_variance_cap,
    )
    g_aoa = np.stack([-u_r[..., 1], u_r[..., 0]], axis=-1) / d_r[..., None]
    return w_tau, g_tau, w_aoa, g_aoa


def predicted_variances(
    q_hat,
    tx: NodePose,
    rx: NodePose,
    radio: RadioParams,
) -> tuple[float, float]:
    """Predicted (delay, angle) measurement variances of a candidate link.

    The amplitude proxy uses the mean RCS (a planner cannot observe the
    draw); the proxy SNR is the per-entry SNR times the coherent
    integration gain. A predicted arrival outside the receiver FoV
    contributes no usable angle: its variance sits at the cap.
    """
    q_hat = as_point(q_hat).reshape(2)
    if np.all(q_hat == tx.position) or np.all(q_hat == rx.position):
        raise ValueError("predicted position coincides with a node")
    w_tau, _, w_aoa, _ = _proxy_link_terms(q_hat, tx, rx, radio)
    return float(1.0 / w_tau), float(1.0 / w_aoa)


def link_fim(q_hat, tx: NodePose, rx: NodePose, variances: tuple[float, float]) -> np.ndarray:
    """Fisher-information contribution of one link at q_hat (2x2 PSD)."""
    var_toa, var_aoa = variances
    if var_toa <= 0 or var_aoa <= 0:
        raise ValueError("variances must be positive")
    from .geometry import grad_aoa, grad_bistatic_delay

    q_hat = as_point(q_hat).reshape(2)
    g_tau = grad_bistatic_delay(tx.position, rx.position, q_hat)
    g_theta = grad_aoa(rx.position, q_hat)
    return np.outer(g_tau, g_tau) / var_toa + np.outer(g_theta, g_theta) / var_aoa


def _gram_peb(terms, mu_reg: float) -> np.ndarray:
    """Error bound from rank-one information terms, broadcast over points.

    trace(inv(sum + mu I)) = (2 mu + sum_u w|g|^2) / det with
    det = mu^2 + mu sum_u w|g|^2 + sum_{u<v} w_u w_v (g_u x g_v)^2:
    every addend is nonnegative, so no catastrophic cancellation.
    """
    trace = None
    det_pairs = None
    for idx, (w_u, g_u) in enumerate(terms):
        contrib = w_u * (g_u[..., 0] ** 2 + g_u[..., 1] ** 2)
        trace = contrib if trace is None else trace + contrib
        for w_v, g_v in terms[idx + 1 :]:
            cross = g_u[..., 0] * g_v[..., 1] - g_u[..., 1] * g_v[..., 0]
            pair = w_u * w_v * cross**2
            det_pairs = pair if det_pairs is None else det_pairs + pair
    if trace is None:
        trace = 0.0
    if det_pairs is None:
        det_pairs = 0.0
    det = mu_reg**2 + mu_reg * trace + det_pairs
    return np.sqrt((2 * mu_reg + trace) / det)


def _peb_over_points(
    tx: NodePose,
    rx_nodes: list[NodePose],
    points: np.ndarray,
    mu_reg: float,
    radio: RadioParams,
) -> np.ndarray:
    terms = []
    for rx in rx_nodes:
        w_tau, g_tau, w_aoa, g_aoa = _proxy_link_terms(points, tx, rx, radio)
        terms.append((w_tau, g_tau))
        terms.append((w_aoa, g_aoa))
    return _gram_peb(terms, mu_reg)


def peb_score(
    tx: NodePose,
    rx_set: list[NodePose],
    q_hat,
    mu_reg: float,
    radio: RadioParams,
) -> float:
    """Predicted position error bound of a configuration at q_hat.

    Square root of the trace of the inverse regularized information sum;
    the regularizer keeps it finite for empty or rank-deficient
    information.
    """
    if mu_reg <= 0:
        raise ValueError("mu_reg must be positive")
    q = as_point(q_hat).reshape(2)
    return float(_peb_over_points(tx, list(rx_set), q, mu_reg, radio))


def init_tx_by_score(
    nodes: list[NodePose],
    rx_set: tuple[int, ...],
    samples: np.ndarray,
    params: PlannerParams,
    radio: RadioParams,
) -> int:
    """Transmitter minimizing the mean predicted error bound over samples.

    Candidates are the nodes outside rx_set; ties resolve to the smallest id.
    """
    candidates = [i for i in range(len(nodes)) if i not in rx_set]
    if not candidates:
        raise ValueError("no transmitter candidates outside the receiver set")
    rx_nodes = [nodes[r] for r in rx_set]
    best_id, best_score = candidates[0], math.inf
    for i in candidates:
        score = float(np.mean(_peb_over_points(nodes[i], rx_nodes, samples, params.mu_reg, radio)))
        if score < best_score:
            best_id, best_score = i, score
    return best_id


def config_candidate_count(num_nodes: int, num_rx: int) -> int:
    """Number of (tx, rx-subset) candidates the selection sweeps."""
    return num_nodes * math.comb(num_nodes - 1, num_rx)


def _pairwise_link_arrays(q: np.ndarray, nodes: list[NodePose], radio: RadioParams):
    """Per-ordered-pair term quantities at one point, for fast selection.

    Mirrors _proxy_link_terms over all (tx, rx) pairs at once. Shapes:
    w_tau, w_aoa, tr, self_cross are (N, N) over (tx, rx); g_tau is
    (N, N, 2); g_aoa is (N, 2). Diagonals are meaningless and masked by
    callers.
    """
    pos = np.array([n.position for n in nodes])
    bore = np.array([n.boresight for n in nodes])
    gains_tx = np.array([n.tx_gain for n in nodes])
    gains_rx = np.array([n.rx_gain for n in nodes])
    delta = q[None, :] - pos
    dist = np.maximum(np.linalg.norm(delta, axis=1), MIN_RANGE)
    unit = delta / dist[:, None]

    lam = radio.grid.wavelength
    amp_num = lam**2 * radio.mean_rcs / (4 * math.pi) ** 3
    alpha2 = (gains_tx[:, None] * gains_rx[None, :] * amp_num) / (
        dist[:, None] * dist[None, :]
    ) ** 2
    gamma = radio.integration_gain * alpha2 / radio.error_variance
    var_toa = np.maximum(
        (2 * math.pi * radio.grid.rms_bandwidth) ** -2 / (2.0 * gamma),
        TOA_VARIANCE_FLOOR,
    )
    w_tau = 1.0 / var_toa
    g_tau = (unit[:, None, :] + unit[None, :, :]) / SPEED_OF_LIGHT

    theta = wrap_pi(np.arctan2(delta[:, 1], delta[:, 0]) - bore)
    m = radio.ula.num_elements
    visible = (np.abs(theta) < min(radio.fov_half_angle, HALF_PI)) & (m >= 2)
    aoa_const = (
        radio.grid.num_subcarriers
        * (2 * math.pi * radio.ula.spacing / lam) ** 2
        * m
        * max(m**2 - 1, 0)
        / 6.0
    )
    inv_model = gamma * aoa_const * (np.cos(theta) ** 2)[None, :]
    w_aoa = np.where(
        visible[None, :],
        np.clip(inv_model, 1.0 / radio.aoa_variance_cap, 1.0 / AOA_VARIANCE_FLOOR),
        1.0 / radio.aoa_variance_cap,
    )
    g_aoa = np.stack([-unit[:, 1], unit[:, 0]], axis=-1) / dist[:, None]

    tr = w_tau * np.einsum("ijk,ijk->ij", g_tau, g_tau) + w_aoa * (
        np.einsum("jk,jk->j", g_aoa, g_aoa)[None, :]
    )
    cross_self = g_tau[..., 0] * g_aoa[None, :, 1] - g_tau[..., 1] * g_aoa[None, :, 0]
    self_cross = w_tau * w_aoa * cross_self**2
    return w_tau, g_tau, w_aoa, g_aoa, tr, self_cross


def _pair_det_tensor(w_tau, g_tau, w_aoa, g_aoa):
    """Cross-link determinant contributions D[i, j, j'] for links sharing
    transmitter i (sum over the four rank-one pair combinations)."""

    def cross2(a, b):
        return (a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]) ** 2

    c_tt = cross2(g_tau[:, :, None, :], g_tau[:, None, :, :])  # (N, N, N)
    c_ta = cross2(g_tau[:, :, None, :], g_aoa[None, None, :, :])  # (N, N, N)
    c_aa = cross2(g_aoa[:, None, :], g_aoa[None, :, :])  # (N, N)
    d = (
        w_tau[:, :, None] * w_tau[:, None, :] * c_tt
        + w_tau[:, :, None] * w_aoa[:, None, :] * c_ta
        + w_aoa[:, :, None] * w_tau[:, None, :] * np.swapaxes(c_ta, 1, 2)
        + w_aoa[:, :, None] * w_aoa[:, None, :] * c_aa[None, :, :]
    )
    return d


def select_config(
    q_hat,
    nodes: list[NodePose],
    params: PlannerParams,
    radio: RadioParams,
) -> SensingConfig:
    """Minimize the predicted error bound over all (tx, rx-subset) pairs.

    Exhaustive when the candidate count is at most
    EXHAUSTIVE_CONFIG_LIMIT, otherwise per-transmitter greedy subset
    growth. Deterministic tie-break: lowest tx id, then lexicographic
    receiver tuple.
    """
    q = as_point(q_hat).reshape(2)
    n = len(nodes)
    n_r = params.num_rx
    if n_r >= n:
        raise ValueError("need num_rx < number of nodes")
    mu = params.mu_reg
    w_tau, g_tau, w_aoa, g_aoa, tr, self_cross = _pairwise_link_arrays(q, nodes, radio)

    best: tuple[float, int, tuple[int, ...]] | None = None
    if config_candidate_count(n, n_r) <= EXHAUSTIVE_CONFIG_LIMIT:
        d_tensor = _pair_det_tensor(w_tau, g_tau, w_aoa, g_aoa)
        combos = _combinations(n - 1, n_r)
        pair_idx = list(itertools.combinations(range(n_r), 2))
        for i in range(n):
            others = np.array([j for j in range(n) if j != i])
            idx = others[combos]  # (C, n_r)
            trace = tr[i][idx].sum(axis=1) + 2 * mu
            det = mu**2 + mu * tr[i][idx].sum(axis=1) + self_cross[i][idx].sum(axis=1)
            for a, b in pair_idx:
                det = det + d_tensor[i, idx[:, a], idx[:, b]]
            scores = trace / det
            c = int(np.argmin(scores))  # first minimum: lexicographic subsets
            key = (float(scores[c]), i, tuple(int(v) for v in idx[c]))
            if best is None or key < best:
                best = key
    else:
        for i in range(n):
            chosen: list[int] = []
            for _ in range(n_r):
                cands = [j for j in range(n) if j != i and j not in chosen]
                scores = [
                    peb_score(nodes[i], [nodes[r] for r in chosen + [j]], q, mu, radio) ** 2
                    for j in cands
                ]
                chosen.append(cands[int(np.argmin(scores))])
            score = peb_score(nodes[i], [nodes[r] for r in chosen], q, mu, radio) ** 2
            key = (float(score), i, tuple(sorted(chosen)))
            if best is None or key < best:
                best = key
    assert best is not None
    _, tx, rx = best
    return SensingConfig(tx, rx)
