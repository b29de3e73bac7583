"""Monte Carlo benchmark harness: per-trial scenes, worker pool, summaries.

Each trial regenerates the deployment (node/target/clutter placement, RCS
draws, boresights) from a trial-keyed stream of the master seed, learns
the background dictionary lazily for the link pairs a run actually visits,
runs the requested variant, and records per-iteration position errors.
Aggregation sorts by trial id, so results are byte-identical regardless of
worker scheduling.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .clutter import lazy_dictionary
from .config import ScenarioConfig
from .orchestrator import VARIANTS, run_variant, throughput_loss
from .scene import LinkChannelCache, random_scene
from .seeding import STREAM_SCENE, rng_from_key

PERCENTILES = (25, 50, 75, 90, 95)

_NEEDS_DICTIONARY = {"PS", "PS-NSFI", "RSA", "FIS", "OBS"}
_ITERATIVE = {"PS", "PS-NCS", "PS-CF", "PS-NSFI"}


@dataclass
class TrialRecord:
    trial: int
    variant: str
    final_error: float
    errors_by_budget: list[float]  # index m-1: error with budget m; NaN if undefined
    iterations_used: int
    symbols_used: int
    stop_reason: str
    wls_cost: float


@dataclass
class MonteCarloSummary:
    variant: str
    num_antennas: int
    num_rx: int
    trials: int
    final_errors: np.ndarray
    rmse: float
    percentiles: dict[int, float]
    mean_iterations: float
    throughput_loss_percent: float
    records: list[TrialRecord]


def build_trial_scene(cfg: ScenarioConfig, trial: int):
    """Draw the trial's deployment (or the fixed debug deployment)."""
    scene_trial = 0 if cfg.fixed_geometry else trial
    rng = rng_from_key(cfg.seed, scene_trial, STREAM_SCENE)
    return random_scene(
        cfg.area(),
        cfg.num_nodes,
        cfg.num_clutter,
        cfg.mean_rcs,
        cfg.grid(),
        cfg.ula(),
        rng,
        tx_gain=10 ** (cfg.tx_gain_dbi / 10.0),
        rx_gain=10 ** (cfg.rx_gain_dbi / 10.0),
        nodes_as_clutter=cfg.nodes_as_clutter,
    )


def run_trial(cfg: ScenarioConfig, variant: str, trial: int) -> TrialRecord:
    scene = build_trial_scene(cfg, trial)
    if variant == "PS-CF":
        scene = scene.without_clutter()
    cache = LinkChannelCache(scene)
    background = None
    if variant in _NEEDS_DICTIONARY:
        background = lazy_dictionary(
            scene,
            cfg.noise_spec(),
            cfg.num_background_snapshots,
            (cfg.seed, trial),
            cache,
        )
    trace = run_variant(scene, background, variant, cfg, (cfg.seed, trial), cache)

    target = scene.target.position
    center = scene.area.center
    final_error = float(np.linalg.norm(trace.final_position - target))

    errors = [math.nan] * cfg.j_max
    if variant in _ITERATIVE:
        for m in range(1, cfg.j_max + 1):
            est = trace.estimate_after(m)
            errors[m - 1] = float(np.linalg.norm((est if est is not None else center) - target))
    elif variant == "RSA":
        running: list[np.ndarray] = []
        for m, rec in enumerate(trace.records, start=1):
            if rec.q_hat is not None:
                running.append(rec.q_hat)
            est = np.mean(running, axis=0) if running else center
            errors[m - 1] = float(np.linalg.norm(est - target))
    else:  # single-shot variants: only the full budget is defined
        errors[cfg.j_max - 1] = final_error

    costs = [r.wls_cost for r in trace.records if r.wls_cost is not None]
    return TrialRecord(
        trial=trial,
        variant=variant,
        final_error=final_error,
        errors_by_budget=errors,
        iterations_used=trace.iterations_used,
        symbols_used=trace.symbols_used,
        stop_reason=trace.stop_reason,
        wls_cost=costs[-1] if costs else math.nan,
    )


def _summarize(cfg: ScenarioConfig, variant: str, records: list[TrialRecord]) -> MonteCarloSummary:
    records = sorted(records, key=lambda r: r.trial)
    errors = np.array([r.final_error for r in records])
    mean_iter = float(np.mean([r.iterations_used for r in records]))
    return MonteCarloSummary(
        variant=variant,
        num_antennas=cfg.num_antennas,
        num_rx=cfg.num_rx,
        trials=len(records),
        final_errors=errors,
        rmse=float(np.sqrt(np.mean(errors**2))),
        percentiles={p: float(np.percentile(errors, p)) for p in PERCENTILES},
        mean_iterations=mean_iter,
        throughput_loss_percent=throughput_loss(mean_iter),
        records=records,
    )


def monte_carlo(
    cfg: ScenarioConfig, variant: str, workers: int | None = None
) -> MonteCarloSummary:
    """Run cfg.trials independent trials of a variant and summarize.

    Trials are deterministic functions of (master seed, trial index), so
    the summary is byte-identical across reruns and worker counts.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    trials = range(cfg.trials)
    if workers is None:
        workers = min(os.cpu_count() or 1, cfg.trials)
    if workers <= 1:
        records = [run_trial(cfg, variant, t) for t in trials]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_trial, *zip(*[(cfg, variant, t) for t in trials])))
    return _summarize(cfg, variant, records)


def rmse_at_budget(summary: MonteCarloSummary, budget: int) -> float:
    """RMSE of the errors the variant would report with the given budget."""
    errs = np.array([r.errors_by_budget[budget - 1] for r in summary.records])
    if np.any(np.isnan(errs)):
        raise ValueError(f"budget {budget} undefined for variant {summary.variant}")
    return float(np.sqrt(np.mean(errs**2)))


TRIAL_CSV_COLUMNS = [
    "trial",
    "variant",
    "ma",
    "nr",
    "j_used",
    "final_error_m",
    "wls_cost",
    "stop_reason",
]

SUMMARY_CSV_COLUMNS = [
    "variant",
    "ma",
    "nr",
    "trials",
    "rmse_m",
    "p25_m",
    "p50_m",
    "p75_m",
    "p90_m",
    "p95_m",
    "mean_iterations",
    "throughput_loss_pct",
]


def write_trials_csv(path, summary: MonteCarloSummary) -> None:
    """One row per trial; columns are stable (see TRIAL_CSV_COLUMNS)."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(TRIAL_CSV_COLUMNS)
        for r in summary.records:
            writer.writerow(
                [
                    r.trial,
                    r.variant,
                    summary.num_antennas,
                    summary.num_rx,
                    r.iterations_used,
                    f"{r.final_error:.6g}",
                    f"{r.wls_cost:.6g}",
                    r.stop_reason,
                ]
            )


def write_summary_csv(path, summaries: list[MonteCarloSummary]) -> None:
    """One row per (variant, array, receiver-count) configuration."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(SUMMARY_CSV_COLUMNS)
        for s in summaries:
            writer.writerow(
                [
                    s.variant,
                    s.num_antennas,
                    s.num_rx,
                    s.trials,
                    f"{s.rmse:.6g}",
                    *[f"{s.percentiles[p]:.6g}" for p in PERCENTILES],
                    f"{s.mean_iterations:.4f}",
                    f"{s.throughput_loss_percent:.4f}",
                ]
            )
