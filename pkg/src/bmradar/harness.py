"""End-to-end pipelines, Monte Carlo RMSE evaluation and file outputs.

A run is fully determined by (scenario, seed): the seed feeds a root
sequence whose children drive code selection, symbol generation and every
random draw in synthesis.  Monte Carlo trials derive their seeds from
(master seed, SNR index, trial index), so results are identical whatever
the worker count or execution order.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from dataclasses import replace as dc_replace
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import baseline as baseline_mod
from .channel import TargetTruth, dump_cube, synthesize_cube
from .estimation import (
    GridSpec,
    default_grid,
    doa_dod_search,
    doppler_refine,
    estimate_signal_dim,
    prepare_xi2_context,
    range_doppler_search,
    subspace_split,
    temporal_covariance,
    xi1_surface,
    xi2_surface,
)
from .extender import apply_virtual_extension, build_blockers
from .scenario import Scenario, scenario_to_dict
from .waveform import extend_codes, generate_pn_codes, generate_symbols

__all__ = [
    "TargetEstimate",
    "EstimateReport",
    "RunResult",
    "TrialRecord",
    "RmsePoint",
    "RmseReport",
    "run_scenario",
    "monte_carlo_rmse",
    "emit_outputs",
    "align_to_truth",
]

_RUN_DOMAIN = 0x52414441  # namespaces the root seed sequence per purpose
_MC_DOMAIN = 0x4D432D52

METHOD_VST = "vst"
METHOD_BASELINE = "baseline"
_ALL_METHODS = (METHOD_VST, METHOD_BASELINE)


@dataclass(frozen=True)
class TargetEstimate:
    """One estimated target; angle fields are None when that part failed."""

    delay_bins: int
    doppler_hz: float
    doa_deg: float | None
    dod_deg: float | None
    peak: float = 0.0
    error: str | None = None


@dataclass(frozen=True)
class EstimateReport:
    method: str
    entries: tuple[TargetEstimate, ...]
    k: int
    elapsed_s: float
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RunResult:
    scenario: Scenario
    seed: int
    truth: tuple[TargetTruth, ...]
    reports: dict[str, EstimateReport]
    code_kind: str
    xi1_grid: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
    xi2_grid: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None


def _resolve_methods(method: str) -> tuple[str, ...]:
    if method == "both":
        return _ALL_METHODS
    if method in _ALL_METHODS:
        return (method,)
    raise ValueError(f"unknown method {method!r} (use 'vst', 'baseline' or 'both')")


def run_scenario(
    scenario: Scenario,
    method: str = METHOD_VST,
    seed: int = 0,
    *,
    grid: GridSpec | None = None,
    code_kind: str = "mseq",
    k: int | None = None,
    estimate_k: bool = False,
    refine_doppler: bool = True,
    doppler_nms_hz: float | None = None,
    store_surfaces: bool = False,
    dump_cube_path: str | Path | None = None,
    baseline_gate_music: bool = False,
) -> RunResult:
    """Synthesize one CPI and run the requested estimator chain(s).

    k defaults to the scenario's target count; estimate_k=True instead
    takes the largest ratio gap of the fast-time covariance spectrum.
    """
    methods = _resolve_methods(method)
    grid = default_grid(scenario, grid)
    system = scenario.system

    root = np.random.SeedSequence([_RUN_DOMAIN, scenario.rng_seed & 0xFFFFFFFF, int(seed)])
    code_seq, symbol_seq, synth_seq = root.spawn(3)
    codes = extend_codes(
        generate_pn_codes(system.tx_count, system.code_length, code_kind, seed=code_seq),
        system.fast_time_bins,
    )
    symbols = generate_symbols(system.pris_per_cpi, seed=symbol_seq)
    cube = synthesize_cube(scenario, codes, symbols, np.random.default_rng(synth_seq))
    cube = dc_replace(cube, seed_trail=(
        f"scenario_seed={scenario.rng_seed}", f"run_seed={int(seed)}",
        "children=codes,symbols,synthesis",
    ))
    if dump_cube_path is not None:
        dump_cube(cube, dump_cube_path)

    reports: dict[str, EstimateReport] = {}
    xi1_grid = xi2_grid = None
    if scenario.target_count == 0 and k is None and not estimate_k:
        for m in methods:
            reports[m] = EstimateReport(m, (), 0, 0.0)
        return RunResult(scenario, int(seed), cube.truth, reports, code_kind)

    t0 = time.perf_counter()
    cov = temporal_covariance(cube)
    if estimate_k:
        spectrum = np.sort(np.linalg.eigvalsh(cov))[::-1]
        k_eff = estimate_signal_dim(spectrum, max_dim=min(12, cov.shape[0] - 1))
    else:
        k_eff = k if k is not None else scenario.target_count
    basis = subspace_split(cov, k_eff)

    stage1 = range_doppler_search(
        cube, codes, k_eff, grid, system, doppler_nms_hz=doppler_nms_hz, basis=basis
    )
    # co-range peaks (possible only with a Doppler-limited suppression
    # radius) share a despread gate; keep one periodogram tone per peak
    refined: list[tuple[int, float]] = []
    for d, f_coarse, _ in stage1:
        shared = sum(1 for dd, _, _ in stage1 if abs(dd - d) <= codes.code_length)
        f_hat = doppler_refine(
            cube, codes, d, f_coarse, symbols, system,
            pad_factor=grid.doppler_pad_factor, refine=refine_doppler,
            n_tones=shared,
        )
        refined.append((d, f_hat))
    stage1_elapsed = time.perf_counter() - t0

    if store_surfaces:
        surf1 = xi1_surface(codes, basis, system, grid.range_bins, grid.doppler_hz)
        xi1_grid = (grid.range_bins, grid.doppler_hz, surf1)

    if METHOD_VST in methods:
        t1 = time.perf_counter()
        blockers = build_blockers(codes, refined, system)
        virtual = apply_virtual_extension(cube, blockers)
        context = prepare_xi2_context(
            virtual, blockers, refined, codes, scenario, signal_dim=k_eff
        )
        angles = doa_dod_search(context, k_eff, grid)
        entries = []
        by_context = {ctx: (th, tb, val) for th, tb, val, ctx in angles}
        for idx, (d, f_hat) in enumerate(refined):
            if idx in by_context:
                th, tb, val = by_context[idx]
                entries.append(TargetEstimate(d, f_hat, th, tb, val))
            else:
                entries.append(TargetEstimate(d, f_hat, None, None,
                                              error="no direction peak assigned"))
        reports[METHOD_VST] = EstimateReport(
            METHOD_VST, tuple(entries), k_eff,
            stage1_elapsed + time.perf_counter() - t1,
            {"angle_step_deg": grid.angle_step_deg,
             "angle_refine_step_deg": grid.angle_refine_step_deg},
        )
        if store_surfaces:
            surf2 = xi2_surface(context, grid.theta_deg, grid.theta_bar_deg)
            xi2_grid = (grid.theta_deg, grid.theta_bar_deg, surf2)

    if METHOD_BASELINE in methods:
        t1 = time.perf_counter()
        raw = baseline_mod.baseline_estimate(cube, scenario, codes, refined, grid,
                                             gate_music=baseline_gate_music)
        entries = tuple(
            TargetEstimate(
                e["delay_bins"], e["doppler_hz"], e.get("doa_deg"),
                e.get("dod_deg"), 0.0, e.get("error"),
            )
            for e in raw
        )
        reports[METHOD_BASELINE] = EstimateReport(
            METHOD_BASELINE, entries, k_eff,
            stage1_elapsed + time.perf_counter() - t1,
        )

    return RunResult(scenario, int(seed), cube.truth, reports, code_kind,
                     xi1_grid, xi2_grid)


def align_to_truth(
    truth: tuple[TargetTruth, ...], entries: tuple[TargetEstimate, ...]
) -> list[TargetEstimate | None]:
    """Match estimates to truth targets, minimising total angular distance.

    Returns a list parallel to truth; None marks truth targets without an
    assigned estimate.  Estimates lacking angles fall back to delay/Doppler
    distance so a range-only failure still pairs sensibly.
    """
    if not truth:
        return []
    if not entries:
        return [None] * len(truth)
    cost = np.zeros((len(truth), len(entries)))
    for i, t in enumerate(truth):
        for j, e in enumerate(entries):
            if e.doa_deg is not None and e.dod_deg is not None:
                cost[i, j] = abs(e.doa_deg - t.doa_deg) + abs(e.dod_deg - t.dod_deg)
            else:
                cost[i, j] = (
                    360.0
                    + abs(e.delay_bins - t.delay_bins)
                    + abs(e.doppler_hz - t.doppler_hz)
                )
    rows, cols = linear_sum_assignment(cost)
    out: list[TargetEstimate | None] = [None] * len(truth)
    for r, c in zip(rows, cols):
        out[r] = entries[c]
    return out


@dataclass(frozen=True)
class TrialRecord:
    """Per-trial estimates aligned to the truth target order."""

    snr_db: float
    snr_idx: int
    trial_idx: int
    seed: int
    aligned: dict[str, tuple[TargetEstimate | None, ...]]
    failed: dict[str, str]  # method -> message for whole-trial failures


@dataclass(frozen=True)
class RmsePoint:
    snr_db: float
    rmse: dict[str, float]           # e.g. "doa_vst" -> degrees
    bootstrap_std: dict[str, float]
    failures: dict[str, int]         # per method: failed target-trials


@dataclass(frozen=True)
class RmseReport:
    points: tuple[RmsePoint, ...]
    trials: int
    seed: int
    methods: tuple[str, ...]
    drop_failures: bool
    clutter_mode: str
    records: tuple[TrialRecord, ...]


def _trial_seed(master_seed: int, snr_idx: int, trial_idx: int) -> int:
    seq = np.random.SeedSequence([_MC_DOMAIN, int(master_seed), snr_idx, trial_idx])
    return int(seq.generate_state(1, np.uint64)[0])


def _mc_trial(args) -> tuple[int, int, TrialRecord]:
    (scenario, snr_db, snr_idx, trial_idx, seed, method, grid, code_kind,
     gate_music) = args
    aligned: dict[str, tuple] = {}
    failed: dict[str, str] = {}
    try:
        result = run_scenario(scenario, method=method, seed=seed, grid=grid,
                              code_kind=code_kind,
                              baseline_gate_music=gate_music)
        for m, report in result.reports.items():
            aligned[m] = tuple(align_to_truth(result.truth, report.entries))
    except Exception as exc:  # noqa: BLE001 - failures are data here
        for m in _resolve_methods(method):
            aligned[m] = tuple([None] * scenario.target_count)
            failed[m] = f"{type(exc).__name__}: {exc}"
    return snr_idx, trial_idx, TrialRecord(
        snr_db=snr_db, snr_idx=snr_idx, trial_idx=trial_idx, seed=seed,
        aligned=aligned, failed=failed,
    )


def _worst_case_angle_error(truth_deg: float) -> float:
    return max(truth_deg - 0.0, 180.0 - truth_deg)


def monte_carlo_rmse(
    scenario: Scenario,
    snr_db_list: list[float],
    trials: int,
    method: str = "both",
    seed: int = 0,
    jobs: int = 1,
    grid: GridSpec | None = None,
    code_kind: str = "mseq",
    drop_failures: bool = False,
    clutter_mode: str = "off",
    baseline_gate_music: bool = False,
) -> RmseReport:
    """Angle RMSE versus SNR over repeated randomised trials.

    Every trial redraws noise, clutter, fluctuation and path phases under
    a seed derived from (seed, snr index, trial index).  clutter_mode
    controls the swept points: "off" (default) disables the clutter
    channel so the x-axis is the total white interference level
    (post-whitening clutter is indistinguishable from receiver noise);
    "scenario" keeps the scenario's clutter level at every point.

    A failed target contributes its worst-case grid-extent error unless
    drop_failures is set, in which case it is excluded from the mean (and
    still counted in the failure tally).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if clutter_mode not in ("off", "scenario"):
        raise ValueError("clutter_mode must be 'off' or 'scenario'")
    methods = _resolve_methods(method)
    grid = default_grid(scenario, grid)

    tasks = []
    for snr_idx, snr in enumerate(snr_db_list):
        changes = {"snr_db": float(snr)}
        if clutter_mode == "off":
            changes["scr_db"] = math.inf
        point_scenario = scenario.with_system(**changes)
        for trial_idx in range(trials):
            tasks.append((
                point_scenario, float(snr), snr_idx, trial_idx,
                _trial_seed(seed, snr_idx, trial_idx), method, grid, code_kind,
                baseline_gate_music,
            ))

    results: dict[tuple[int, int], TrialRecord] = {}
    if jobs <= 1:
        for task in tasks:
            s, t, rec = _mc_trial(task)
            results[(s, t)] = rec
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for s, t, rec in pool.map(_mc_trial, tasks, chunksize=1):
                results[(s, t)] = rec

    records = tuple(results[key] for key in sorted(results))
    boot_rng = np.random.default_rng(np.random.SeedSequence([_MC_DOMAIN, seed, 0xB007]))

    points = []
    for snr_idx, snr in enumerate(snr_db_list):
        point_records = [r for r in records if r.snr_idx == snr_idx]
        rmse: dict[str, float] = {}
        boot: dict[str, float] = {}
        failures: dict[str, int] = {}
        for m in methods:
            fail_count = 0
            # per-target squared errors across trials
            sq_errors: dict[str, list[list[float]]] = {
                "doa": [[] for _ in scenario.targets],
                "dod": [[] for _ in scenario.targets],
            }
            for rec in point_records:
                aligned = rec.aligned.get(m, ())
                for k_idx, target in enumerate(scenario.targets):
                    est = aligned[k_idx] if k_idx < len(aligned) else None
                    for param, truth_val, est_val in (
                        ("doa", target.doa_deg, getattr(est, "doa_deg", None)),
                        ("dod", target.dod_deg, getattr(est, "dod_deg", None)),
                    ):
                        if est is None or est_val is None:
                            fail_count += 1
                            if drop_failures:
                                continue
                            err = _worst_case_angle_error(truth_val)
                        else:
                            err = est_val - truth_val
                        sq_errors[param][k_idx].append(err * err)
            failures[m] = fail_count
            for param in ("doa", "dod"):
                per_target = [np.asarray(v) for v in sq_errors[param]]
                if any(v.size == 0 for v in per_target):
                    rmse[f"{param}_{m}"] = math.nan
                    boot[f"{param}_{m}"] = math.nan
                    continue
                rmse[f"{param}_{m}"] = float(
                    np.mean([math.sqrt(v.mean()) for v in per_target])
                )
                # bootstrap over trials, 200 resamples
                samples = []
                n_tr = per_target[0].size
                idx = boot_rng.integers(0, n_tr, size=(200, n_tr))
                for b in range(200):
                    samples.append(
                        np.mean([math.sqrt(v[idx[b]].mean()) for v in per_target])
                    )
                boot[f"{param}_{m}"] = float(np.std(samples))
        points.append(RmsePoint(float(snr), rmse, boot, failures))

    return RmseReport(
        points=tuple(points), trials=trials, seed=int(seed), methods=methods,
        drop_failures=drop_failures, clutter_mode=clutter_mode, records=records,
    )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return format(value, ".12g")
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def emit_outputs(
    out_dir: str | Path,
    run: RunResult | None = None,
    rmse: RmseReport | None = None,
    extra_config: dict | None = None,
) -> list[Path]:
    """Write estimates.csv / rmse.csv / surface grids / run.json.

    All CSV content is a pure function of the inputs; the timestamp lives
    only in run.json.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if run is not None:
        rows = []
        for m, report in sorted(run.reports.items()):
            aligned = align_to_truth(run.truth, report.entries)
            for k_idx, t in enumerate(run.truth):
                est = aligned[k_idx]
                rows.append([
                    m, k_idx,
                    t.delay_bins, getattr(est, "delay_bins", None),
                    t.doppler_hz, getattr(est, "doppler_hz", None),
                    t.doa_deg, getattr(est, "doa_deg", None),
                    t.dod_deg, getattr(est, "dod_deg", None),
                    getattr(est, "peak", None),
                    getattr(est, "error", None) or "",
                ])
        path = out / "estimates.csv"
        _write_csv(path, [
            "method", "target",
            "delay_true_bins", "delay_est_bins",
            "doppler_true_hz", "doppler_est_hz",
            "doa_true_deg", "doa_est_deg",
            "dod_true_deg", "dod_est_deg",
            "peak", "error",
        ], rows)
        written.append(path)

        if run.xi1_grid is not None:
            d_grid, f_grid, surf = run.xi1_grid
            rows = [
                [int(d_grid[i]), f_grid[j], surf[i, j]]
                for i in range(len(d_grid)) for j in range(len(f_grid))
            ]
            path = out / "xi1_grid.csv"
            _write_csv(path, ["delay_bins", "doppler_hz", "cost"], rows)
            written.append(path)
        if run.xi2_grid is not None:
            th, tb, surf = run.xi2_grid
            rows = [
                [th[i], tb[j], surf[i, j]]
                for i in range(len(th)) for j in range(len(tb))
            ]
            path = out / "xi2_grid.csv"
            _write_csv(path, ["doa_deg", "dod_deg", "cost"], rows)
            written.append(path)

    if rmse is not None:
        header = ["snr_db", "trials", "seed"]
        params = []
        for m in rmse.methods:
            for p in ("doa", "dod"):
                params.append(f"{p}_{m}")
        header += [f"rmse_{p}_deg" for p in params]
        header += [f"bootstrap_std_{p}_deg" for p in params]
        header += [f"failures_{m}" for m in rmse.methods]
        rows = []
        for point in rmse.points:
            row = [point.snr_db, rmse.trials, rmse.seed]
            row += [point.rmse.get(p) for p in params]
            row += [point.bootstrap_std.get(p) for p in params]
            row += [point.failures.get(m, 0) for m in rmse.methods]
            rows.append(row)
        path = out / "rmse.csv"
        _write_csv(path, header, rows)
        written.append(path)

    doc = {
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "versions": _versions(),
    }
    if run is not None:
        doc["run"] = {
            "seed": run.seed,
            "code_kind": run.code_kind,
            "scenario": scenario_to_dict(run.scenario),
            "methods": sorted(run.reports),
            "elapsed_s": {m: r.elapsed_s for m, r in run.reports.items()},
        }
    if rmse is not None:
        doc["monte_carlo"] = {
            "seed": rmse.seed,
            "trials": rmse.trials,
            "methods": list(rmse.methods),
            "snr_db": [p.snr_db for p in rmse.points],
            "drop_failures": rmse.drop_failures,
            "clutter_mode": rmse.clutter_mode,
        }
    if extra_config:
        doc["config"] = extra_config
    path = out / "run.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    written.append(path)
    return written


def _versions() -> dict:
    import scipy

    from . import __version__

    return {"bmradar": __version__, "numpy": np.__version__, "scipy": scipy.__version__}
