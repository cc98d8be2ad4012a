"""Received data-cube synthesis for one CPI.

The cube holds complex baseband snapshots indexed (PRI n, fast-time bin l,
Rx antenna i).  Each target contributes a rank-one outer product per PRI:
its Rx steering vector times the Tx-weighted delayed-Doppler code row,
scaled by the symbol, the path gain and the slow-time Doppler phase
exp(j*2*pi*F*(n-1)*PRI).  The slow-time phase keeps the echo coherent
across the CPI, which is what makes sub-bin Doppler estimation possible.

Noise is referenced to the strongest target's per-element echo power over
its occupied bins; clutter uses the same reference.  Both accept +inf as a
"disabled" level.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .manifold import spatial_manifold, transformation_matrix
from .scenario import DerivedParams, Scenario, TargetSpec, derive_params, truth_from_geometry
from .waveform import CodeMatrix, SymbolSequence

__all__ = [
    "PathGain",
    "TargetTruth",
    "TargetState",
    "DataCube",
    "path_gain",
    "swerling_amplitude",
    "draw_target_states",
    "synthesize_targets",
    "synthesize_cube",
    "add_clutter",
    "add_noise",
    "dump_cube",
    "load_cube",
]


@dataclass(frozen=True)
class PathGain:
    """Two-way propagation gain: magnitude from the radar equation, phase
    from the carrier delay plus a random per-CPI term."""

    magnitude: float
    phase_rad: float

    @property
    def value(self) -> complex:
        return self.magnitude * np.exp(1j * self.phase_rad)


@dataclass(frozen=True)
class TargetTruth:
    """Parameters actually used to synthesize one target."""

    delay_bins: int
    doppler_hz: float
    doa_deg: float
    dod_deg: float


@dataclass(frozen=True)
class TargetState:
    """Frozen random draws for one target over one CPI."""

    truth: TargetTruth
    gain: PathGain
    rcs_draws: np.ndarray  # per-PRI RCS sample(s), length n_s


@dataclass(frozen=True)
class DataCube:
    """One CPI of Rx snapshots, shape (pris, fast_time_bins, rx_count).

    echo_power is the strongest target's per-element echo sample power over
    its occupied bins (the SNR reference); echo_energy_per_sample is the
    total echo energy divided by the total sample count (the SCR
    reference).
    """

    samples: np.ndarray
    truth: tuple[TargetTruth, ...]
    echo_power: float
    echo_energy_per_sample: float = 0.0
    seed_trail: tuple[str, ...] = ()

    @property
    def pri_count(self) -> int:
        return self.samples.shape[0]

    @property
    def fast_time_bins(self) -> int:
        return self.samples.shape[1]

    @property
    def rx_count(self) -> int:
        return self.samples.shape[2]

    def pri_matrix(self, n: int) -> np.ndarray:
        """PRI n as an (rx_count, fast_time_bins) matrix."""
        return self.samples[n].T


def path_gain(target: TargetSpec, derived: DerivedParams, rng: np.random.Generator) -> PathGain:
    """Two-way gain for unit antenna gains.

    Magnitude: sqrt(1/(4*pi)**3) * wavelength / (R_tx * R_rx) * sqrt(rcs),
    ranges in metres.  Phase: carrier round-trip delay plus a uniform
    random term drawn once per CPI.
    """
    r_tx_m = target.tx_range_bins * derived.range_bin_m
    r_rx_m = target.rx_range_bins * derived.range_bin_m
    if r_tx_m <= 0 or r_rx_m <= 0:
        raise ValueError("target ranges must be positive")
    magnitude = (
        math.sqrt(1.0 / (4.0 * math.pi) ** 3)
        * (derived.wavelength_m / (r_tx_m * r_rx_m))
        * math.sqrt(target.rcs_mean_m2)
    )
    carrier_phase = -2.0 * math.pi * (r_tx_m + r_rx_m) / derived.wavelength_m
    psi = rng.uniform(0.0, 2.0 * math.pi)
    return PathGain(magnitude=magnitude, phase_rad=carrier_phase + psi)


def swerling_amplitude(
    model: int, mean_rcs: float, n_s: int, rng: np.random.Generator
) -> np.ndarray:
    """Per-PRI RCS draws for the three classic fluctuation models.

    1: one exponential draw held for the CPI (scan-to-scan).
    2: independent exponential draws per PRI (pulse-to-pulse).
    3: one chi-square-with-4-dof draw (gamma shape 2) held for the CPI.
    """
    if mean_rcs <= 0:
        raise ValueError("mean_rcs must be > 0")
    if model == 1:
        return np.full(n_s, rng.exponential(mean_rcs))
    if model == 2:
        return rng.exponential(mean_rcs, size=n_s)
    if model == 3:
        return np.full(n_s, rng.gamma(2.0, mean_rcs / 2.0))
    raise ValueError(f"unknown Swerling model {model}")


def draw_target_states(
    scenario: Scenario, rng: np.random.Generator
) -> list[TargetState]:
    """Draw all per-CPI randomness (path phase, RCS fluctuation) up front.

    Synthesis is a pure function of these states, which keeps parallel and
    sequential runs bit-identical.
    """
    derived = derive_params(scenario)
    states = []
    for target in scenario.targets:
        d_true, f_true = truth_from_geometry(target, scenario.system)
        gain = path_gain(target, derived, rng)
        draws = swerling_amplitude(
            target.swerling_model, target.rcs_mean_m2, scenario.system.pris_per_cpi, rng
        )
        states.append(
            TargetState(
                truth=TargetTruth(d_true, f_true, target.doa_deg, target.dod_deg),
                gain=gain,
                rcs_draws=draws,
            )
        )
    return states


def _target_components(
    scenario: Scenario,
    codes: CodeMatrix,
    symbols: SymbolSequence,
    states: list[TargetState],
):
    """Per-target (slow-time coefficients, Rx vector, fast-time row).

    Coefficient for PRI n: sqrt(P_tx) * beta(n) * a[n] *
    exp(j*2*pi*F*(n-1)*PRI); the fast-time row already carries the
    intra-PRI Doppler ramp.
    """
    system = scenario.system
    derived = derive_params(scenario)
    n_s = system.pris_per_cpi
    pri = system.pri_s
    a = np.asarray(symbols.symbols, dtype=float)
    out = []
    for target, state in zip(scenario.targets, states):
        d, f = state.truth.delay_bins, state.truth.doppler_hz
        s_rx = spatial_manifold(scenario.rx_array, target.doa_deg, 0.0,
                                derived.wavelength_m, "rx")
        s_tx = spatial_manifold(scenario.tx_array, target.dod_deg, 0.0,
                                derived.wavelength_m, "tx")
        # Tx-weighted fast-time signature: sum over antennas of the delayed
        # per-antenna code, weighted by conj(tx steering).
        t_mat = transformation_matrix(codes, d, f, system)
        w = t_mat @ np.conj(s_tx)
        # fluctuation scales the amplitude by sqrt(drawn rcs / mean rcs)
        amp = np.sqrt(state.rcs_draws / target.rcs_mean_m2)
        slow_phase = np.exp(2j * np.pi * f * np.arange(n_s) * pri)
        coef = math.sqrt(system.tx_power_w) * state.gain.value * amp * a * slow_phase
        out.append((coef, s_rx, w))
    return out


def synthesize_targets(
    scenario: Scenario,
    codes: CodeMatrix,
    symbols: SymbolSequence,
    states: list[TargetState],
) -> DataCube:
    """Noise- and clutter-free echo cube for the given target states."""
    system = scenario.system
    n_s, L, n_rx = system.pris_per_cpi, system.fast_time_bins, system.rx_count
    samples = np.zeros((n_s, L, n_rx), dtype=complex)
    powers = []
    energy = 0.0
    for coef, s_rx, w in _target_components(scenario, codes, symbols, states):
        # outer product per PRI: samples[n, l, i] += coef[n] * w[l] * s_rx[i]
        samples += coef[:, None, None] * w[None, :, None] * s_rx[None, None, :]
        powers.append(state_mean_power(coef, w))
        energy += float(np.sum(np.abs(coef) ** 2) * np.sum(np.abs(w) ** 2) * n_rx)
    echo_power = max(powers) if powers else 0.0
    truth = tuple(s.truth for s in states)
    return DataCube(
        samples=samples,
        truth=truth,
        echo_power=echo_power,
        echo_energy_per_sample=energy / samples.size if powers else 0.0,
    )


def state_mean_power(coef: np.ndarray, w: np.ndarray) -> float:
    """Mean per-element echo sample power over the occupied bins."""
    support = np.abs(w) ** 2
    support = support[support > 1e-30]
    if support.size == 0:
        return 0.0
    return float(np.mean(np.abs(coef) ** 2) * np.mean(support))


def add_clutter(cube: DataCube, scr_db: float, rng: np.random.Generator) -> DataCube:
    """Add white complex Gaussian clutter across all bins.

    Models clutter after a whitening transform: zero mean, isotropic,
    occupying every range bin, with total power set so the ratio of total
    target echo energy to total clutter energy over the CPI equals scr_db.
    scr_db=+inf leaves the cube unchanged.
    """
    if math.isinf(scr_db) and scr_db > 0:
        return cube
    if cube.echo_energy_per_sample <= 0:
        raise ValueError("clutter level needs a target echo power reference")
    var = cube.echo_energy_per_sample / 10.0 ** (scr_db / 10.0)
    sigma = math.sqrt(var / 2.0)
    shape = cube.samples.shape
    clutter = rng.normal(0.0, sigma, shape) + 1j * rng.normal(0.0, sigma, shape)
    return replace(cube, samples=cube.samples + clutter)


def add_noise(cube: DataCube, snr_db: float, rng: np.random.Generator) -> DataCube:
    """Add receiver AWGN, power referenced like add_clutter.

    With no targets present the reference power defaults to 1, giving noise
    variance 10**(-snr/10).
    """
    if math.isinf(snr_db) and snr_db > 0:
        return cube
    reference = cube.echo_power if cube.echo_power > 0 else 1.0
    var = reference / 10.0 ** (snr_db / 10.0)
    sigma = math.sqrt(var / 2.0)
    shape = cube.samples.shape
    noise = rng.normal(0.0, sigma, shape) + 1j * rng.normal(0.0, sigma, shape)
    return replace(cube, samples=cube.samples + noise)


def synthesize_cube(
    scenario: Scenario,
    codes: CodeMatrix,
    symbols: SymbolSequence,
    rng: np.random.Generator,
) -> DataCube:
    """Full received cube: target echoes plus clutter plus noise at the
    scenario's configured levels."""
    states = draw_target_states(scenario, rng)
    cube = synthesize_targets(scenario, codes, symbols, states)
    if scenario.targets:
        cube = add_clutter(cube, scenario.system.scr_db, rng)
    cube = add_noise(cube, scenario.system.snr_db, rng)
    return cube


def dump_cube(cube: DataCube, path: str | Path) -> None:
    """Write samples as little-endian complex64 with a JSON sidecar."""
    path = Path(path)
    cube.samples.astype("<c8").tofile(path)
    sidecar = {
        "shape": list(cube.samples.shape),
        "dtype": "<c8",
        "order": "C",
        "axes": ["pri", "fast_time", "rx_antenna"],
        "echo_power": cube.echo_power,
        "echo_energy_per_sample": cube.echo_energy_per_sample,
        "seed_trail": list(cube.seed_trail),
        "truth": [
            {
                "delay_bins": t.delay_bins,
                "doppler_hz": t.doppler_hz,
                "doa_deg": t.doa_deg,
                "dod_deg": t.dod_deg,
            }
            for t in cube.truth
        ],
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_cube(path: str | Path) -> DataCube:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    samples = np.fromfile(path, dtype="<c8").reshape(sidecar["shape"]).astype(complex)
    truth = tuple(
        TargetTruth(t["delay_bins"], t["doppler_hz"], t["doa_deg"], t["dod_deg"])
        for t in sidecar["truth"]
    )
    return DataCube(
        samples=samples,
        truth=truth,
        echo_power=float(sidecar["echo_power"]),
        echo_energy_per_sample=float(sidecar.get("echo_energy_per_sample", 0.0)),
        seed_trail=tuple(sidecar.get("seed_trail", ())),
    )
