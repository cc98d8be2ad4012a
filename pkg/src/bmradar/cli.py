"""Command line front end.

Subcommands:
  run    one CPI, estimate targets, write estimates.csv (+ optional cube)
  mc     Monte Carlo RMSE over an SNR sweep, write rmse.csv
  grids  one CPI, write the stage-1 and stage-2 cost surfaces as CSV

The bundled default scenario is used when --scenario is omitted.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .estimation import GridSpec
from .harness import emit_outputs, monte_carlo_rmse, run_scenario
from .scenario import default_scenario_path, load_scenario


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", default=None,
                   help="scenario JSON (default: bundled paper.json)")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--method", choices=("vst", "baseline", "both"), default="both")
    p.add_argument("--code-kind", choices=("mseq", "gold"), default="mseq",
                   help="spreading code family")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--known-k", type=int, default=None,
                       help="target count to estimate (default: scenario truth)")
    group.add_argument("--estimate-k", action="store_true",
                       help="estimate the target count from the eigen spectrum")
    p.add_argument("--angle-step", type=float, default=0.5,
                   help="coarse direction grid step, degrees")
    p.add_argument("--angle-refine-step", type=float, default=0.01,
                   help="local refinement grid step, degrees")
    p.add_argument("--doppler-step", type=float, default=None,
                   help="stage-1 Doppler grid step, Hz (default: one Doppler bin)")
    p.add_argument("--gate-music", action="store_true",
                   help="baseline DOA from per-gate MUSIC instead of the "
                        "whole-cube spectrum")


def _grid_from_args(args, scenario) -> GridSpec:
    doppler = None
    if args.doppler_step is not None:
        from .scenario import derive_params

        prf = derive_params(scenario).prf_hz
        doppler = np.arange(-prf / 2.0, prf / 2.0 + 1e-9, args.doppler_step)
    return GridSpec(
        doppler_hz=doppler,
        angle_step_deg=args.angle_step,
        angle_refine_step_deg=args.angle_refine_step,
    )


def _load(args):
    path = args.scenario if args.scenario is not None else default_scenario_path()
    return load_scenario(path)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="radar", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="single-CPI estimation")
    _add_common(p_run)
    p_run.add_argument("--dump-cube", default=None,
                       help="also write the raw cube (binary + JSON sidecar)")
    p_run.add_argument("--no-refine-doppler", action="store_true",
                       help="keep the unrefined slow-time Doppler peak")

    p_mc = sub.add_parser("mc", help="Monte Carlo RMSE sweep")
    _add_common(p_mc)
    p_mc.add_argument("--snr", default="0,5,10,15,20",
                      help="comma-separated SNR points in dB")
    p_mc.add_argument("--trials", type=int, default=100)
    p_mc.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p_mc.add_argument("--drop-failures", action="store_true",
                      help="exclude failed detections from the RMSE mean")
    p_mc.add_argument("--keep-clutter", action="store_true",
                      help="keep the scenario clutter level at every SNR point")

    p_grids = sub.add_parser("grids", help="emit cost surfaces as CSV")
    _add_common(p_grids)

    args = parser.parse_args(argv)
    scenario = _load(args)
    grid = _grid_from_args(args, scenario)
    common = dict(
        grid=grid,
        code_kind=args.code_kind,
        k=args.known_k,
        estimate_k=args.estimate_k,
        baseline_gate_music=args.gate_music,
    )

    if args.command == "run":
        result = run_scenario(
            scenario, method=args.method, seed=args.seed,
            refine_doppler=not args.no_refine_doppler,
            dump_cube_path=args.dump_cube, **common,
        )
        written = emit_outputs(args.out, run=result)
    elif args.command == "mc":
        snr_list = [float(s) for s in args.snr.split(",") if s.strip()]
        report = monte_carlo_rmse(
            scenario, snr_list, args.trials, method=args.method,
            seed=args.seed, jobs=args.jobs, grid=grid,
            code_kind=args.code_kind, drop_failures=args.drop_failures,
            clutter_mode="scenario" if args.keep_clutter else "off",
            baseline_gate_music=args.gate_music,
        )
        written = emit_outputs(args.out, rmse=report, extra_config={
            "snr_db": snr_list, "trials": args.trials, "jobs": args.jobs,
        })
    else:  # grids
        result = run_scenario(
            scenario, method="vst", seed=args.seed, store_surfaces=True, **common
        )
        written = emit_outputs(args.out, run=result)

    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
