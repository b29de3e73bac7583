"""Reliability-weighted nonlinear least-squares position fusion.

Admitted delay and angle measurements from one sensing iteration are fused
by minimizing the variance-weighted squared residuals over the target
position. The solver is damped Gauss-Newton with monotone step acceptance;
the first iteration bootstraps from a coarse grid search over the area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .detector import LinkMeasurement
from .geometry import (
    SPEED_OF_LIGHT,
    NodePose,
    as_point,
    grad_aoa,
    grad_bistatic_delay,
    wrap_pi,
)
from .scene import Rect


@dataclass
class FusionProblem:
    """One iteration's measurements plus the admission sets.

    toa_ids / aoa_ids hold the receiver ids whose delay / angle residuals
    enter the cost; every admitted id must have a measurement.
    """

    measurements: list[LinkMeasurement]
    nodes: dict[int, NodePose]
    toa_ids: frozenset[int]
    aoa_ids: frozenset[int]
    initial_guess: np.ndarray | None = None

    def __post_init__(self):
        by_rx = {m.rx: m for m in self.measurements}
        for rx in self.toa_ids | self.aoa_ids:
            if rx not in by_rx:
                raise ValueError(f"admitted receiver {rx} has no measurement")
        self._by_rx = by_rx

    @property
    def num_residuals(self) -> int:
        return len(self.toa_ids) + len(self.aoa_ids)

    def _toa_terms(self):
        for rx in sorted(self.toa_ids):
            m = self._by_rx[rx]
            yield m, self.nodes[m.tx], self.nodes[m.rx]

    def _aoa_terms(self):
        for rx in sorted(self.aoa_ids):
            m = self._by_rx[rx]
            yield m, self.nodes[m.rx]


@dataclass(frozen=True)
class DampingSchedule:
    """Levenberg-style safeguard around plain Gauss-Newton steps."""

    initial: float = 1e-6
    factor: float = 10.0
    floor: float = 1e-12
    ceiling: float = 1e15


@dataclass
class Estimate:
    position: np.ndarray
    objective: float
    iterations_used: int
    converged: bool


def _cost_terms(q: np.ndarray, prob: FusionProblem, on_coincident: str):
    """Yield squared weighted residual arrays for a broadcastable q."""
    for m, tx, rx in prob._toa_terms():
        d_t = np.linalg.norm(q - tx.position, axis=-1)
        d_r = np.linalg.norm(q - rx.position, axis=-1)
        bad = (d_t == 0.0) | (d_r == 0.0)
        if np.any(bad):
            if on_coincident == "raise":
                raise ValueError("position coincides with a node")
            d_t = np.where(bad, np.nan, d_t)
        tau = (d_t + d_r) / SPEED_OF_LIGHT
        yield (m.toa - tau) ** 2 / m.toa_variance, bad
    for m, rx in prob._aoa_terms():
        delta = q - rx.position
        bad = (delta[..., 0] == 0.0) & (delta[..., 1] == 0.0)
        if np.any(bad):
            if on_coincident == "raise":
                raise ValueError("position coincides with a node")
        theta = wrap_pi(np.arctan2(delta[..., 1], delta[..., 0]) - rx.boresight)
        yield wrap_pi(m.aoa - theta) ** 2 / m.aoa_variance, bad


def wls_cost(q, prob: FusionProblem) -> float | np.ndarray:
    """Weighted squared-residual objective; broadcasts over q (..., 2)."""
    q = as_point(q)
    total = np.zeros(q.shape[:-1])
    for term, _ in _cost_terms(q, prob, on_coincident="raise"):
        total = total + term
    if total.ndim == 0:
        return float(total)
    return total


def _residuals_and_jacobian(q: np.ndarray, prob: FusionProblem):
    """Stacked weighted residual vector and its Jacobian at a single point."""
    rows_r: list[float] = []
    rows_j: list[np.ndarray] = []
    for m, tx, rx in prob._toa_terms():
        d_t = np.linalg.norm(q - tx.position)
        d_r = np.linalg.norm(q - rx.position)
        if d_t == 0.0 or d_r == 0.0:
            raise ValueError("position coincides with a node")
        sigma = math.sqrt(m.toa_variance)
        tau = (d_t + d_r) / SPEED_OF_LIGHT
        rows_r.append((m.toa - tau) / sigma)
        rows_j.append(-grad_bistatic_delay(tx.position, rx.position, q) / sigma)
    for m, rx in prob._aoa_terms():
        delta = q - rx.position
        if delta[0] == 0.0 and delta[1] == 0.0:
            raise ValueError("position coincides with a node")
        sigma = math.sqrt(m.aoa_variance)
        theta = wrap_pi(math.atan2(delta[1], delta[0]) - rx.boresight)
        rows_r.append(float(wrap_pi(m.aoa - theta)) / sigma)
        rows_j.append(-grad_aoa(rx.position, q) / sigma)
    return np.array(rows_r), np.array(rows_j)


def gauss_newton_step(q, prob: FusionProblem, damping: float) -> np.ndarray:
    """One damped Gauss-Newton update of the position estimate."""
    q = as_point(q).reshape(2)
    r, jac = _residuals_and_jacobian(q, prob)
    normal = jac.T @ jac + damping * np.eye(2)
    delta = np.linalg.solve(normal, jac.T @ r)
    return q - delta


def solve_wls(
    prob: FusionProblem,
    l_max: int = 50,
    eps: float = 1e-4,
    damping: DampingSchedule = DampingSchedule(),
    bounds: Rect | None = None,
) -> Estimate:
    """Iterate damped Gauss-Newton steps from the problem's initial guess.

    Steps that would increase the cost are rejected and the damping is
    raised tenfold; accepted steps lower it. Stops when an accepted step
    moved less than eps or after l_max iterations. Fewer than two scalar
    residuals is unobservable and reported as non-convergence. With
    bounds, iterates are projected into the rectangle (the target is known
    to lie in the search area, and an unconstrained step off a
    near-degenerate two-residual geometry can run away arbitrarily far).
    """
    if prob.initial_guess is None:
        raise ValueError("fusion problem has no initial guess")
    q = as_point(prob.initial_guess).reshape(2).copy()
    if bounds is not None:
        q = _clip_to(q, bounds)
    if prob.num_residuals < 2:
        cost = wls_cost(q, prob) if prob.num_residuals else 0.0
        return Estimate(q, float(cost), 0, converged=False)
    cost = float(wls_cost(q, prob))
    mu = damping.initial
    converged = False
    iterations = 0
    for iterations in range(1, l_max + 1):
        r, jac = _residuals_and_jacobian(q, prob)
        normal = jac.T @ jac + mu * np.eye(2)
        try:
            delta = np.linalg.solve(normal, jac.T @ r)
        except np.linalg.LinAlgError:
            mu = min(mu * damping.factor, damping.ceiling)
            continue
        q_try = q - delta
        if bounds is not None:
            q_try = _clip_to(q_try, bounds)
        try:
            cost_try = float(wls_cost(q_try, prob))
        except ValueError:  # stepped exactly onto a node
            cost_try = math.inf
        if cost_try <= cost:
            moved = float(np.linalg.norm(q_try - q))
            q = q_try
            cost = cost_try
            mu = max(mu / damping.factor, damping.floor)
            if moved <= eps:
                converged = True
                break
        else:
            mu = min(mu * damping.factor, damping.ceiling)
            if mu >= damping.ceiling:
                break
    return Estimate(q, cost, iterations, converged)


def _clip_to(q: np.ndarray, bounds: Rect) -> np.ndarray:
    return np.array(
        [
            min(max(q[0], bounds.x_min), bounds.x_max),
            min(max(q[1], bounds.y_min), bounds.y_max),
        ]
    )


def coarse_init(prob: FusionProblem, area: Rect, grid_step: float | None = None) -> np.ndarray:
    """Argmin of the cost over a uniform grid; the cold-start initializer.

    Grid rows sweep y ascending and columns x ascending; ties resolve to the
    smallest (row, column) index. Grid points sitting exactly on a node are
    skipped.
    """
    step = grid_step if grid_step is not None else area.width / 50.0
    if step <= 0:
        raise ValueError("grid_step must be positive")
    xs = np.arange(area.x_min, area.x_max + step / 2, step)
    ys = np.arange(area.y_min, area.y_max + step / 2, step)
    gx, gy = np.meshgrid(xs, ys)  # shape (n_rows, n_cols)
    pts = np.stack([gx, gy], axis=-1)
    total = np.zeros(pts.shape[:-1])
    bad_any = np.zeros(pts.shape[:-1], dtype=bool)
    for term, bad in _cost_terms(pts, prob, on_coincident="mask"):
        total = total + np.where(bad, 0.0, np.nan_to_num(term, nan=0.0))
        bad_any |= bad
    total[bad_any] = np.inf
    idx = int(np.argmin(total))  # row-major: smallest row, then column
    r, c = divmod(idx, total.shape[1])
    return np.array([xs[c], ys[r]])
