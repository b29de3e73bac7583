"""Command-line interface: calibrate, run, bench.

calibrate  learn the full background dictionary of a seeded scenario and
           save it as an .npz artifact
run        one localization episode with a full per-iteration printout,
           optionally dumping every range-angle map
bench      Monte Carlo benchmark of a variant; writes a per-trial CSV and
           a companion summary CSV
"""

from __future__ import annotations

import argparse
import pathlib
import sys

import numpy as np

from .clutter import calibrate, lazy_dictionary
from .config import ScenarioConfig
from .harness import build_trial_scene, monte_carlo, write_summary_csv, write_trials_csv
from .orchestrator import VARIANTS, run_variant
from .scene import LinkChannelCache


def _load_config(args) -> ScenarioConfig:
    cfg = ScenarioConfig.from_yaml(args.config) if args.config else ScenarioConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "jmax", None) is not None:
        overrides["j_max"] = args.jmax
    if getattr(args, "ma", None) is not None:
        overrides["num_antennas"] = args.ma
    if getattr(args, "nr", None) is not None:
        overrides["num_rx"] = args.nr
    if getattr(args, "trials", None) is not None:
        overrides["trials"] = args.trials
    if overrides:
        data = {**cfg.__dict__, **overrides}
        data = {k: v for k, v in data.items() if k in ScenarioConfig.__dataclass_fields__}
        cfg = ScenarioConfig.from_mapping(data)
    return cfg


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="scenario YAML")
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument("--jmax", type=int, default=None, help="iteration budget override")
    parser.add_argument("--ma", type=int, default=None, help="antenna count override")
    parser.add_argument("--nr", type=int, default=None, help="receiver count override")


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    scene = build_trial_scene(cfg, trial=0)
    dictionary = calibrate(
        scene, cfg.noise_spec(), cfg.num_background_snapshots, (cfg.seed, 0)
    )
    dictionary.save(args.out)
    print(f"calibrated {len(dictionary)} location pairs -> {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    scene = build_trial_scene(cfg, trial=0)
    if args.variant == "PS-CF":
        scene = scene.without_clutter()
    cache = LinkChannelCache(scene)
    background = None
    if args.variant not in ("PS-NCS", "PS-CF"):
        background = lazy_dictionary(
            scene, cfg.noise_spec(), cfg.num_background_snapshots, (cfg.seed, 0), cache
        )
    dump_dir = None
    if args.dump_maps:
        dump_dir = pathlib.Path(args.dump_maps)
        dump_dir.mkdir(parents=True, exist_ok=True)
    trace = run_variant(
        scene, background, args.variant, cfg, (cfg.seed, 0), cache, map_dump_dir=dump_dir
    )
    target = scene.target.position
    print(f"variant={args.variant} target=({target[0]:.2f}, {target[1]:.2f})")
    for j, rec in enumerate(trace.records, start=1):
        q = rec.q_hat
        q_txt = "-" if q is None else f"({q[0]:.2f}, {q[1]:.2f})"
        err = "-" if q is None else f"{np.linalg.norm(q - target):.3f}"
        print(
            f"  iter {j}: tx={rec.config.tx} rx={rec.config.rx_set} "
            f"meas={len(rec.measurements)} q={q_txt} err={err} m "
            f"peb={rec.peb:.3f} m{' [starved]' if rec.starved else ''}"
        )
    err = np.linalg.norm(trace.final_position - target)
    print(
        f"final error {err:.3f} m after {trace.iterations_used} iterations "
        f"({trace.symbols_used} symbols, stop: {trace.stop_reason})"
    )
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    summary = monte_carlo(cfg, args.variant, workers=args.workers)
    out = pathlib.Path(args.out)
    write_trials_csv(out, summary)
    write_summary_csv(out.with_name(out.stem + "_summary" + out.suffix), [summary])
    print(
        f"{args.variant}: trials={summary.trials} RMSE={summary.rmse:.4g} m "
        f"median={summary.percentiles[50]:.4g} m mean_iters={summary.mean_iterations:.2f} "
        f"eta={summary.throughput_loss_percent:.3f}%"
    )
    print(f"wrote {out} and companion summary")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="msloc",
        description="Multi-static OFDM sensing and cooperative localization simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_cal = sub.add_parser("calibrate", help="learn and save the background dictionary")
    _add_common(p_cal)
    p_cal.add_argument("--out", type=str, required=True, help="output .npz path")
    p_cal.set_defaults(func=cmd_calibrate)

    p_run = sub.add_parser("run", help="run one localization episode")
    _add_common(p_run)
    p_run.add_argument("--variant", choices=VARIANTS, default="PS")
    p_run.add_argument("--dump-maps", type=str, default=None, help="directory for map dumps")
    p_run.set_defaults(func=cmd_run)

    p_bench = sub.add_parser("bench", help="Monte Carlo benchmark")
    _add_common(p_bench)
    p_bench.add_argument("--variant", choices=VARIANTS, default="PS")
    p_bench.add_argument("--trials", type=int, default=None, help="trial count override")
    p_bench.add_argument("--out", type=str, required=True, help="per-trial CSV path")
    p_bench.add_argument("--workers", type=int, default=None, help="process pool size")
    p_bench.set_defaults(func=cmd_bench)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
