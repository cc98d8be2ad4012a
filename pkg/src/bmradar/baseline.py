"""Geometric comparison method: spatial MUSIC plus bistatic ellipse.

The chain estimates bistatic range with the stage-1 search, places each
target on the ellipse whose foci are the two sites, splits the bistatic
range at the MUSIC direction of arrival using the focal polar form
r = a (1 - e^2) / (1 + e cos(theta)), and reads the direction of departure
off the triangle.  DOA is measured at the Rx site from the baseline
direction towards Tx (so a target at 150 degrees subtends a 30 degree
interior angle); DOD is the interior angle at the Tx site.

The departure angle inherits the integer-bin quantisation of the range
estimate, which is what produces this method's error floor at high SNR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import DataCube
from .estimation import GridSpec, subspace_split
from .manifold import spatial_manifold
from .scenario import ArrayGeometry, Scenario, derive_params
from .waveform import CodeMatrix

__all__ = [
    "EllipseParams",
    "GeometryError",
    "ellipse_params",
    "split_bistatic_range",
    "dod_from_geometry",
    "music_doa_spectrum",
    "associate_doa_to_range",
    "baseline_estimate",
]


class GeometryError(ValueError):
    """Raised for degenerate bistatic geometry."""


@dataclass(frozen=True)
class EllipseParams:
    """Bistatic ellipse in compressed-bin units (sites at the foci)."""

    semi_major: float
    semi_minor: float
    eccentricity: float


def ellipse_params(r_bi: float, l_bi: float) -> EllipseParams:
    """Ellipse for a bistatic range r_bi and site separation l_bi (bins)."""
    if l_bi < 0:
        raise GeometryError("baseline must be non-negative")
    if r_bi <= l_bi:
        raise GeometryError(
            f"bistatic range {r_bi} does not exceed baseline {l_bi}: degenerate ellipse"
        )
    a = r_bi / 2.0
    c = l_bi / 2.0
    return EllipseParams(
        semi_major=a,
        semi_minor=math.sqrt(a * a - c * c),
        eccentricity=c / a,
    )


def split_bistatic_range(
    ellipse: EllipseParams, theta_deg: float, r_bi: float
) -> tuple[float, float]:
    """Split a bistatic range into (rx range, tx range) at a given DOA.

    Focal polar form about the Rx focus with the angle measured from the
    baseline direction towards Tx.
    """
    e = ellipse.eccentricity
    denom = 1.0 + e * math.cos(math.radians(theta_deg))
    if abs(denom) < 1e-9:
        raise GeometryError("direction lies along the ellipse asymptote")
    r_rx = ellipse.semi_major * (1.0 - e * e) / denom
    return r_rx, r_bi - r_rx


def dod_from_geometry(ellipse: EllipseParams, r_tx: float) -> float:
    """Departure angle (degrees) at the Tx focus for a split range.

    Inverts the focal polar form about the Tx focus; equals the
    law-of-cosines interior angle of the site/target triangle.
    """
    e = ellipse.eccentricity
    if e <= 0:
        # circle: every direction sees the same radius
        return 90.0
    if r_tx <= 0:
        raise GeometryError(f"tx range {r_tx} must be positive")
    arg = (1.0 - ellipse.semi_major * (1.0 - e * e) / r_tx) / e
    if abs(arg) > 1.0 + 1e-6:
        raise GeometryError(f"inconsistent split: arccos argument {arg:.6f}")
    return math.degrees(math.acos(min(1.0, max(-1.0, arg))))


def spatial_covariance(cube: DataCube) -> np.ndarray:
    """Rx-antenna covariance averaged over all snapshots of the CPI."""
    n_s, L, n_rx = cube.samples.shape
    flat = cube.samples.reshape(n_s * L, n_rx)
    return flat.T @ flat.conj() / (n_s * L)


def music_doa_spectrum(
    cube: DataCube,
    rx_geometry: ArrayGeometry,
    wavelength_m: float,
    k: int,
    theta_grid: np.ndarray,
    refine_step_deg: float | None = 0.01,
) -> tuple[np.ndarray, list[float]]:
    """MUSIC pseudo-spectrum over DOA and its k largest peaks.

    Peaks are suppressed within 2 degrees of an accepted peak and then
    polished on a local grid at refine_step_deg (None skips refinement).
    Only rx_count - 1 sources are spatially resolvable.
    """
    n_rx = cube.rx_count
    if k >= n_rx:
        raise ValueError(f"cannot resolve {k} sources with {n_rx} antennas")
    cov = spatial_covariance(cube)
    basis = subspace_split(cov, k)
    theta_grid = np.asarray(theta_grid, dtype=float)

    def pseudo(grid: np.ndarray) -> np.ndarray:
        steer = spatial_manifold(rx_geometry, grid, 0.0, wavelength_m, "rx")
        proj = basis.basis.conj().T @ steer
        den = np.sum(np.abs(steer) ** 2, axis=0) - np.sum(np.abs(proj) ** 2, axis=0)
        with np.errstate(divide="ignore"):
            return np.where(den > 0.0, 1.0 / np.maximum(den, 1e-300), np.inf)

    spectrum = pseudo(theta_grid)
    order = np.argsort(-spectrum, kind="stable")
    peaks: list[float] = []
    for idx in order:
        if math.isnan(spectrum[idx]):
            continue
        if any(abs(theta_grid[idx] - p) <= 2.0 for p in peaks):
            continue
        peaks.append(float(theta_grid[idx]))
        if len(peaks) == k:
            break
    if len(peaks) < k:
        raise GeometryError(f"found only {len(peaks)} of {k} DOA peaks")

    if refine_step_deg is not None:
        refined = []
        for p in peaks:
            local = np.arange(max(0.0, p - 1.0), min(180.0, p + 1.0) + 1e-9,
                              refine_step_deg)
            vals = pseudo(local)
            refined.append(float(local[int(np.argmax(vals))]))
        peaks = refined
    return spectrum, peaks


def gate_music_doa(
    cube: DataCube,
    codes: CodeMatrix,
    rx_geometry: ArrayGeometry,
    wavelength_m: float,
    delay: int,
    theta_grid: np.ndarray,
    refine_step_deg: float | None = 0.01,
) -> float:
    """Single-source MUSIC DOA from one despread range gate.

    Despreading with the composite code concentrates the gate's target
    energy into one spatial snapshot per PRI, recovering the pulse
    compression gain before the covariance is formed.  Far more robust to
    per-CPI fluctuation fades than the whole-cube spectrum, at the price
    of resolving only the dominant source in the gate.
    """
    nc = codes.code_length
    cs = codes.composite[:nc].astype(complex)
    y = np.einsum("q,nqi->ni", np.conj(cs), cube.samples[:, delay:delay + nc, :])
    cov = y.T @ y.conj() / y.shape[0]
    basis = subspace_split(cov, 1)

    def pseudo(grid: np.ndarray) -> np.ndarray:
        steer = spatial_manifold(rx_geometry, grid, 0.0, wavelength_m, "rx")
        proj = basis.basis.conj().T @ steer
        den = np.sum(np.abs(steer) ** 2, axis=0) - np.sum(np.abs(proj) ** 2, axis=0)
        with np.errstate(divide="ignore"):
            return np.where(den > 0.0, 1.0 / np.maximum(den, 1e-300), np.inf)

    theta_grid = np.asarray(theta_grid, dtype=float)
    peak = float(theta_grid[int(np.argmax(pseudo(theta_grid)))])
    if refine_step_deg is not None:
        local = np.arange(max(0.0, peak - 1.0), min(180.0, peak + 1.0) + 1e-9,
                          refine_step_deg)
        peak = float(local[int(np.argmax(pseudo(local)))])
    return peak


def associate_doa_to_range(
    cube: DataCube,
    codes: CodeMatrix,
    rx_geometry: ArrayGeometry,
    wavelength_m: float,
    delays: list[int],
    doas: list[float],
) -> list[int]:
    """Pair each range gate with a DOA peak by despread beam power.

    Returns, for each delay index, the index of the DOA peak whose steered
    beam collects the most power from that despread range gate; the pairing
    is one-to-one (assignment maximising total power).
    """
    from scipy.optimize import linear_sum_assignment

    nc = codes.code_length
    power = np.zeros((len(delays), len(doas)))
    for di, d in enumerate(delays):
        cs = codes.composite[:nc].astype(complex)
        gate = np.einsum("q,nqi->ni", np.conj(cs), cube.samples[:, d:d + nc, :])
        for ai, theta in enumerate(doas):
            steer = spatial_manifold(rx_geometry, theta, 0.0, wavelength_m, "rx")
            power[di, ai] = float(np.sum(np.abs(gate @ np.conj(steer)) ** 2))
    rows, cols = linear_sum_assignment(-power)
    pairing = dict(zip(rows.tolist(), cols.tolist()))
    return [pairing[i] for i in range(len(delays))]


def baseline_estimate(
    cube: DataCube,
    scenario: Scenario,
    codes: CodeMatrix,
    stage1: list[tuple[int, float]],
    grid: GridSpec,
    gate_music: bool = False,
) -> list[dict]:
    """Geometric estimates for each stage-1 (delay, Doppler) target.

    The default takes the whole-cube MUSIC spectrum's peaks and pairs them
    with the range gates by despread beam power.  gate_music=True instead
    runs single-source MUSIC on each despread gate, which trades
    multi-source resolution within a gate for robustness to fluctuation
    fades (and makes the gate/direction pairing intrinsic).

    Returns one dict per target with keys delay_bins, doppler_hz, doa_deg,
    dod_deg, rx_range_bins, tx_range_bins; entries whose geometry is
    degenerate carry an 'error' key instead of angles.
    """
    derived = derive_params(scenario)
    delays = [d for d, _ in stage1]
    if gate_music:
        doas = [
            gate_music_doa(cube, codes, scenario.rx_array, derived.wavelength_m,
                           d, grid.theta_deg, grid.angle_refine_step_deg)
            for d in delays
        ]
        pairing = list(range(len(delays)))
    else:
        _, doas = music_doa_spectrum(
            cube, scenario.rx_array, derived.wavelength_m, len(delays),
            grid.theta_deg, grid.angle_refine_step_deg,
        )
        pairing = associate_doa_to_range(
            cube, codes, scenario.rx_array, derived.wavelength_m, delays, doas
        )
    out = []
    for (d, f), doa_idx in zip(stage1, pairing):
        theta = doas[doa_idx]
        entry = {
            "delay_bins": d,
            "doppler_hz": f,
            "doa_deg": theta,
        }
        try:
            ellipse = ellipse_params(float(d), scenario.system.baseline_bins)
            r_rx, r_tx = split_bistatic_range(ellipse, theta, float(d))
            entry["rx_range_bins"] = r_rx
            entry["tx_range_bins"] = r_tx
            entry["dod_deg"] = dod_from_geometry(ellipse, r_tx)
        except GeometryError as exc:
            entry["error"] = str(exc)
        out.append(entry)
    return out
