"""Subspace estimators: joint range/Doppler, then joint DOA/DOD.

Stage 1 scans a delay/Doppler grid with a determinant-ratio cost built
from the fast-time covariance of the cube.  The numerator gram of the
candidate code matrix is delay- and Doppler-invariant, so the whole
surface reduces (via the matrix determinant lemma) to

    cost(d, f) = 1 / det(I_P - G @ gram_inv @ G^H),    G = U_s^H T(d, f)

with G computed for every delay at once by sliding-window correlation.
Noise projectors are therefore never materialised.

Stage 1's Doppler axis has little leverage (the intra-PRI phase ramp over
one code support is tiny), so the per-target Doppler is refined from the
slow-time sequence obtained by despreading at the estimated delay:
demodulate the known symbols, take a zero-padded periodogram across PRIs,
and interpolate the peak.

Stage 2 scans (DOA, DOD) with a MUSIC-style ratio over the virtual
spatiotemporal snapshots.  Because every entry of a steering vector has
unit modulus, the numerator is angle-independent and the denominator is an
O(rx * tx * signal_dim) contraction of precomputed per-antenna terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .channel import DataCube
from .extender import BlockerSet, VirtualSnapshots
from .manifold import spatial_manifold, temporal_signature, transformation_matrix
from .scenario import Scenario, SystemConfig, derive_params
from .waveform import CodeMatrix, SymbolSequence

__all__ = [
    "SubspaceBasis",
    "GridSpec",
    "default_grid",
    "temporal_covariance",
    "subspace_split",
    "estimate_signal_dim",
    "xi1_cost",
    "xi1_surface",
    "range_doppler_search",
    "doppler_refine",
    "Xi2Context",
    "prepare_xi2_context",
    "xi2_cost",
    "xi2_surface",
    "doa_dod_search",
    "PeakError",
]


class PeakError(RuntimeError):
    """Raised when a search cannot find the requested number of peaks."""


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal signal-subspace basis plus the covariance spectrum."""

    basis: np.ndarray        # ambient x signal_dim, orthonormal columns
    eigenvalues: np.ndarray  # descending, real
    signal_dim: int

    def noise_projection_power(self, v: np.ndarray) -> float:
        """Squared norm of v after removing its signal-subspace part."""
        coeff = self.basis.conj().T @ v
        return float(np.linalg.norm(v) ** 2 - np.linalg.norm(coeff) ** 2)


@dataclass(frozen=True)
class GridSpec:
    """Search grids; None fields are filled from the scenario defaults."""

    range_bins: np.ndarray | None = None
    doppler_hz: np.ndarray | None = None
    theta_deg: np.ndarray | None = None
    theta_bar_deg: np.ndarray | None = None
    angle_step_deg: float = 0.5
    angle_refine_step_deg: float = 0.01
    angle_refine_halfwidth_deg: float = 0.75
    doppler_pad_factor: int = 16


def default_grid(scenario: Scenario, spec: GridSpec | None = None) -> GridSpec:
    """Fill the unset grid axes for a scenario.

    Delays cover every bin a full code fits into; Doppler covers the
    unambiguous interval at one Doppler-bin spacing; both angle axes cover
    0..180 degrees at the coarse step.
    """
    spec = spec or GridSpec()
    system = scenario.system
    derived = derive_params(scenario)
    range_bins = spec.range_bins
    if range_bins is None:
        range_bins = np.arange(0, system.fast_time_bins - system.code_length + 1)
    doppler = spec.doppler_hz
    if doppler is None:
        doppler = np.linspace(
            -derived.prf_hz / 2.0, derived.prf_hz / 2.0, system.pris_per_cpi + 1
        )
    theta = spec.theta_deg
    if theta is None:
        theta = np.arange(0.0, 180.0 + 1e-9, spec.angle_step_deg)
    theta_bar = spec.theta_bar_deg
    if theta_bar is None:
        theta_bar = np.arange(0.0, 180.0 + 1e-9, spec.angle_step_deg)
    return GridSpec(
        range_bins=np.asarray(range_bins, dtype=int),
        doppler_hz=np.asarray(doppler, dtype=float),
        theta_deg=np.asarray(theta, dtype=float),
        theta_bar_deg=np.asarray(theta_bar, dtype=float),
        angle_step_deg=spec.angle_step_deg,
        angle_refine_step_deg=spec.angle_refine_step_deg,
        angle_refine_halfwidth_deg=spec.angle_refine_halfwidth_deg,
        doppler_pad_factor=spec.doppler_pad_factor,
    )


def temporal_covariance(cube: DataCube) -> np.ndarray:
    """Fast-time covariance, averaged over PRIs and Rx antennas.

    Each antenna's fast-time vector within a PRI is one snapshot; the
    result is an L x L Hermitian PSD matrix whose signal subspace is
    spanned by the targets' delayed-Doppler code signatures.
    """
    n_s, L, n_rx = cube.samples.shape
    rows = cube.samples.transpose(0, 2, 1).reshape(n_s * n_rx, L)
    return rows.T @ rows.conj() / (n_rx * n_s)


def subspace_split(matrix: np.ndarray, signal_dim: int, kind: str | None = None) -> SubspaceBasis:
    """Top eigen/singular subspace of a covariance or snapshot matrix.

    kind="covariance": Hermitian eigendecomposition of the matrix itself.
    kind="snapshots":  left singular subspace of an (ambient x count)
    snapshot matrix, computed through the smaller gram; reported
    eigenvalues are those of (1/count) * X X^H.
    Unset, square input is treated as a covariance.
    """
    matrix = np.asarray(matrix)
    if kind is None:
        kind = "covariance" if matrix.shape[0] == matrix.shape[1] else "snapshots"
    if kind == "covariance":
        ambient = matrix.shape[0]
        if not 0 < signal_dim < ambient:
            raise ValueError(f"signal_dim must be in (0, {ambient})")
        vals, vecs = np.linalg.eigh(matrix)
        order = np.argsort(vals)[::-1]
        vals = np.maximum(vals[order].real, 0.0)
        return SubspaceBasis(vecs[:, order[:signal_dim]], vals, signal_dim)
    if kind != "snapshots":
        raise ValueError("kind must be 'covariance' or 'snapshots'")
    ambient, count = matrix.shape
    if not 0 < signal_dim < ambient:
        raise ValueError(f"signal_dim must be in (0, {ambient})")
    if signal_dim > count:
        raise ValueError("signal_dim exceeds the number of snapshots")
    if ambient > count:
        gram = matrix.conj().T @ matrix
        vals, vecs = np.linalg.eigh(gram)
        order = np.argsort(vals)[::-1]
        vals = np.maximum(vals[order].real, 0.0)
        top = vals[:signal_dim]
        if np.any(top <= 0):
            raise ValueError("snapshot matrix rank is below signal_dim")
        basis = matrix @ (vecs[:, order[:signal_dim]] / np.sqrt(top))
        return SubspaceBasis(basis, vals / count, signal_dim)
    cov = matrix @ matrix.conj().T / count
    return subspace_split(cov, signal_dim, kind="covariance")


def estimate_signal_dim(eigenvalues: np.ndarray, max_dim: int | None = None) -> int:
    """Signal order from the largest ratio gap of the sorted spectrum."""
    vals = np.asarray(eigenvalues, dtype=float)
    vals = np.sort(vals)[::-1]
    limit = max_dim if max_dim is not None else len(vals) - 1
    limit = min(limit, len(vals) - 1)
    if limit < 1:
        raise ValueError("need at least two eigenvalues")
    if vals[0] <= 0:
        raise ValueError("spectrum must contain a positive eigenvalue")
    floor = vals[0] * 1e-15
    ratios = vals[:limit] / np.maximum(vals[1:limit + 1], floor)
    return int(np.argmax(ratios)) + 1


def _code_gram_inverse(codes: CodeMatrix) -> tuple[np.ndarray, float]:
    gram = codes.chips.T @ codes.chips
    return np.linalg.inv(gram), float(np.linalg.det(gram))


def xi1_cost(
    d: int, f_hz: float, codes: CodeMatrix, basis: SubspaceBasis, system: SystemConfig
) -> float:
    """Determinant-ratio cost at a single (delay, Doppler) point.

    Ratio of det(T^H T) to det(T^H P_n T) with the noise projector applied
    implicitly.  A singular denominator returns +inf (exact subspace hit).
    """
    t_mat = transformation_matrix(codes, d, f_hz, system)
    gram = t_mat.conj().T @ t_mat
    g = basis.basis.conj().T @ t_mat
    den_mat = gram - g.conj().T @ g
    num = np.linalg.det(gram).real
    den = np.linalg.det(den_mat).real
    if den <= 0.0 or not math.isfinite(den):
        return math.inf
    return num / den


def xi1_surface(
    codes: CodeMatrix,
    basis: SubspaceBasis,
    system: SystemConfig,
    range_bins: np.ndarray,
    doppler_hz: np.ndarray,
) -> np.ndarray:
    """Cost surface over (delay, Doppler), shape (len(range_bins), len(doppler)).

    Uses det(A - G^H G) = det(A) * det(I - G A^-1 G^H) to reduce each grid
    point to a signal_dim x signal_dim determinant, and computes
    U_s^H T(d, f) for all delays simultaneously as windowed correlations.
    """
    L = system.fast_time_bins
    nc = codes.code_length
    range_bins = np.asarray(range_bins, dtype=int)
    if np.any(range_bins < 0) or np.any(range_bins > L - nc):
        raise ValueError("range grid contains range-ambiguous delays")
    gram_inv, _ = _code_gram_inverse(codes)
    u = basis.basis  # (L, P)
    p_dim = u.shape[1]
    t_axis = np.arange(1, L + 1) * system.chip_period_s
    n_d = L - nc + 1
    surface = np.empty((len(range_bins), len(doppler_hz)), dtype=float)
    eye = np.eye(p_dim)
    for j, f in enumerate(doppler_hz):
        a = u.conj() * np.exp(2j * np.pi * f * t_axis)[:, None]  # (L, P)
        windows = sliding_window_view(a, nc, axis=0)  # (n_d, P, nc)
        g_all = windows.reshape(n_d * p_dim, nc) @ codes.chips
        g_all = g_all.reshape(n_d, p_dim, codes.tx_count)[range_bins]
        w = g_all @ gram_inv
        small = eye - np.einsum("dpm,dqm->dpq", w, g_all.conj())
        det = np.linalg.det(small).real
        with np.errstate(divide="ignore"):
            surface[:, j] = np.where(det > 0.0, 1.0 / np.maximum(det, 1e-300), np.inf)
    return surface


def _greedy_peaks_2d(
    surface: np.ndarray,
    k: int,
    axis0_vals: np.ndarray,
    axis1_vals: np.ndarray,
    radius0: float,
    radius1: float | None,
) -> list[tuple[int, int]]:
    """Greedy non-maximum suppression peak picking on a 2-D surface.

    A candidate is suppressed by an accepted peak when its axis-0 distance
    is within radius0 (inclusive) and (if radius1 is set) its axis-1
    distance is strictly inside radius1; radius1=None suppresses the whole
    axis-0 band.  Separations of exactly radius1 therefore survive, so two
    co-range peaks spaced by the suppression radius both come back.  Ties
    break on the lowest flat index.
    """
    flat_order = np.argsort(-surface, axis=None, kind="stable")
    peaks: list[tuple[int, int]] = []
    for flat in flat_order:
        i, j = np.unravel_index(flat, surface.shape)
        val = surface[i, j]
        if math.isnan(val):
            continue
        suppressed = False
        for pi, pj in peaks:
            within0 = abs(axis0_vals[i] - axis0_vals[pi]) <= radius0
            within1 = (
                True if radius1 is None
                else abs(axis1_vals[j] - axis1_vals[pj]) < radius1 * (1 - 1e-12)
            )
            if within0 and within1:
                suppressed = True
                break
        if not suppressed:
            peaks.append((int(i), int(j)))
            if len(peaks) == k:
                break
    return peaks


def range_doppler_search(
    cube: DataCube,
    codes: CodeMatrix,
    k: int,
    grid: GridSpec,
    system: SystemConfig,
    signal_dim: int | None = None,
    doppler_nms_hz: float | None = None,
    basis: SubspaceBasis | None = None,
) -> list[tuple[int, float, float]]:
    """Stage-1 search: k best (delay, coarse Doppler, peak value) triples.

    Peaks are suppressed within one code length in delay; by default the
    suppression spans all Dopplers at that delay, which guarantees k
    distinct ranges.  Pass doppler_nms_hz to restrict suppression to a
    Doppler band instead (resolves co-range targets at well-separated
    Dopplers, at the cost of possible duplicate ranges in noise).  A
    precomputed subspace basis skips the covariance step.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if basis is None:
        cov = temporal_covariance(cube)
        basis = subspace_split(cov, signal_dim or k)
    surface = xi1_surface(codes, basis, system, grid.range_bins, grid.doppler_hz)
    peaks = _greedy_peaks_2d(
        surface, k, grid.range_bins.astype(float), grid.doppler_hz,
        radius0=float(codes.code_length), radius1=doppler_nms_hz,
    )
    if len(peaks) < k:
        found = [
            (int(grid.range_bins[i]), float(grid.doppler_hz[j]), float(surface[i, j]))
            for i, j in peaks
        ]
        raise PeakError(f"found only {len(peaks)} of {k} requested peaks: {found}")
    return [
        (int(grid.range_bins[i]), float(grid.doppler_hz[j]), float(surface[i, j]))
        for i, j in peaks
    ]


def doppler_refine(
    cube: DataCube,
    codes: CodeMatrix,
    d_hat: int,
    f_coarse: float,
    symbols: SymbolSequence,
    system: SystemConfig,
    pad_factor: int = 16,
    refine: bool = True,
    n_tones: int = 1,
) -> float:
    """Slow-time Doppler estimate for the target despread at delay d_hat.

    Despread each antenna with the composite code over the target's
    support, demodulate the known symbols, and locate the tone of the
    antenna-summed periodogram across PRIs.  With refine=True the
    periodogram is zero-padded by pad_factor and the peak is polished with
    a three-point parabolic fit; refine=False returns the raw peak of the
    unpadded periodogram (error bounded by half a Doppler bin).

    n_tones: number of candidate tones to extract before choosing the one
    closest to f_coarse; with the default 1 the global peak wins and
    f_coarse is not used.  The result is wrapped into (-PRF/2, PRF/2].
    """
    nc = codes.code_length
    n_s = cube.pri_count
    prf = 1.0 / system.pri_s
    if d_hat < 0 or d_hat + nc > system.fast_time_bins:
        raise ValueError(f"delay {d_hat} outside the valid range")
    cs = codes.composite[:nc]
    block = cube.samples[:, d_hat:d_hat + nc, :]  # (n_s, nc, n_rx)
    z = np.einsum("q,nqi->ni", np.conj(cs.astype(complex)), block)
    z = z * np.asarray(symbols.symbols, dtype=float)[:, None]

    nfft = n_s * pad_factor if refine else n_s
    spec = np.fft.fft(z, n=nfft, axis=0)
    power = np.sum(np.abs(spec) ** 2, axis=1)
    freqs = np.fft.fftfreq(nfft, d=system.pri_s)

    if n_tones <= 1:
        peak = int(np.argmax(power))
    else:
        # candidate tones must clear each other's main lobe and near
        # sidelobes (three Doppler bins for the rectangular CPI window)
        min_sep = max(1, int(round(3 * nfft / n_s)))
        order = np.argsort(power)[::-1]
        chosen: list[int] = []
        for idx in order:
            gap = min(
                (min(abs(idx - c), nfft - abs(idx - c)) for c in chosen), default=nfft
            )
            if gap >= min_sep:
                chosen.append(int(idx))
            if len(chosen) == n_tones:
                break
        def wrapped_dist(i: int) -> float:
            df = freqs[i] - f_coarse
            return abs((df + prf / 2.0) % prf - prf / 2.0)
        peak = min(chosen, key=wrapped_dist)

    f_hat = freqs[peak]
    if refine:
        p_prev = power[(peak - 1) % nfft]
        p_peak = power[peak]
        p_next = power[(peak + 1) % nfft]
        denom = p_prev - 2.0 * p_peak + p_next
        if denom < 0.0:
            delta = 0.5 * (p_prev - p_next) / denom
            f_hat = f_hat + delta * prf / nfft
    # wrap into (-PRF/2, PRF/2]
    f_hat = -((-f_hat + prf / 2.0) % prf - prf / 2.0)
    return float(f_hat)


@dataclass(frozen=True)
class Xi2Context:
    """Precomputed quantities for the DOA/DOD cost.

    For each stage-1 target context the projected temporal signature per Tx
    antenna and its contraction against the virtual signal basis are cached;
    evaluating a candidate direction pair then costs O(rx * tx * signal_dim)
    per context.
    """

    scenario: Scenario
    blockers: BlockerSet
    estimates: tuple[tuple[int, float], ...]
    basis: SubspaceBasis
    numerators: np.ndarray          # (K,) angle-independent ||P h||^2
    basis_phi: np.ndarray           # (K, P, n_bar, n_rx) contractions
    wavelength_m: float = field(default=0.0)


def prepare_xi2_context(
    virtual: VirtualSnapshots,
    blockers: BlockerSet,
    estimates: list[tuple[int, float]],
    codes: CodeMatrix,
    scenario: Scenario,
    signal_dim: int | None = None,
) -> Xi2Context:
    """Signal basis of the virtual snapshots plus per-context caches."""
    system = scenario.system
    derived = derive_params(scenario)
    k = len(estimates)
    dim = signal_dim or k
    basis = subspace_split(virtual.matrix, dim, kind="snapshots")
    n_bar, n_rx, L = virtual.tx_count, virtual.rx_count, virtual.fast_time_bins

    phi = np.empty((k, n_bar, L), dtype=complex)
    for ki, (d, f) in enumerate(estimates):
        temporal = temporal_signature(codes, d, f, system)
        for m in range(n_bar):
            phi[ki, m] = blockers.project(m, temporal)
    # ||P h||^2 = n_rx * sum_m ||phi_m||^2 (steering entries are unit modulus)
    numerators = n_rx * np.sum(np.abs(phi) ** 2, axis=(1, 2))

    u4 = basis.basis.reshape(n_bar, n_rx, L, basis.signal_dim)
    basis_phi = np.einsum("milp,kml->kpmi", u4.conj(), phi, optimize=True)
    return Xi2Context(
        scenario=scenario,
        blockers=blockers,
        estimates=tuple((int(d), float(f)) for d, f in estimates),
        basis=basis,
        numerators=numerators,
        basis_phi=basis_phi,
        wavelength_m=derived.wavelength_m,
    )


def xi2_surface(
    context: Xi2Context,
    theta_deg: np.ndarray,
    theta_bar_deg: np.ndarray,
    per_context: bool = False,
) -> np.ndarray:
    """DOA/DOD cost over a grid, shape (len(theta), len(theta_bar)).

    Summed over the per-target contexts; per_context=True returns the
    (K, len(theta), len(theta_bar)) stack instead.
    """
    theta_deg = np.atleast_1d(np.asarray(theta_deg, dtype=float))
    theta_bar_deg = np.atleast_1d(np.asarray(theta_bar_deg, dtype=float))
    scen = context.scenario
    s_rx = spatial_manifold(scen.rx_array, theta_deg, 0.0, context.wavelength_m, "rx")
    s_tx = spatial_manifold(scen.tx_array, theta_bar_deg, 0.0, context.wavelength_m, "tx")
    k = len(context.estimates)
    out = np.empty((k, len(theta_deg), len(theta_bar_deg)), dtype=float)
    for ki in range(k):
        half = np.einsum("pmi,ia->pma", context.basis_phi[ki], s_rx, optimize=True)
        coeff = np.einsum("pma,mb->pab", half, s_tx.conj(), optimize=True)
        sig_power = np.sum(np.abs(coeff) ** 2, axis=0)
        num = context.numerators[ki]
        den = num - sig_power
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.where(den > 0.0, num / np.maximum(den, 1e-300), np.inf)
        out[ki] = vals if num > 0 else 0.0
    return out if per_context else out.sum(axis=0)


def xi2_cost(theta_deg: float, theta_bar_deg: float, context: Xi2Context) -> float:
    """Cost at a single (DOA, DOD) candidate (sum over target contexts)."""
    return float(xi2_surface(context, [theta_deg], [theta_bar_deg])[0, 0])


def doa_dod_search(
    context: Xi2Context,
    k: int,
    grid: GridSpec,
) -> list[tuple[float, float, float, int]]:
    """Stage-2 search: k (DOA, DOD, peak value, context index) tuples.

    Each stage-1 target context carries its own delayed-Doppler signature,
    so its cost term peaks at that target's direction pair; the search
    takes the coarse-grid argmax of every context's term and refines it on
    a local fine grid.  (The summed surface is unreliable here: secondary
    maxima of a strong target can outgrow a weak target's main peak.)
    Peak-to-target association is therefore intrinsic.  If k differs from
    the context count, the k largest context peaks are returned.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    theta = grid.theta_deg
    theta_bar = grid.theta_bar_deg
    stack = xi2_surface(context, theta, theta_bar, per_context=True)
    step = grid.angle_refine_step_deg
    half = grid.angle_refine_halfwidth_deg

    results: list[tuple[float, float, float, int]] = []
    for ki in range(stack.shape[0]):
        surf = stack[ki]
        flat = int(np.argmax(surf))
        i, j = np.unravel_index(flat, surf.shape)
        th0, tb0 = theta[i], theta_bar[j]
        local_th = np.arange(max(0.0, th0 - half), min(180.0, th0 + half) + 1e-9, step)
        local_tb = np.arange(max(0.0, tb0 - half), min(180.0, tb0 + half) + 1e-9, step)
        local = xi2_surface(context, local_th, local_tb, per_context=True)[ki]
        flat = int(np.argmax(local))
        ii, jj = np.unravel_index(flat, local.shape)
        results.append(
            (float(local_th[ii]), float(local_tb[jj]), float(local[ii, jj]), ki)
        )

    if len(results) < k:
        raise PeakError(f"found only {len(results)} of {k} direction peaks")
    if k != len(results):
        results = sorted(results, key=lambda r: -r[2])[:k]
        results.sort(key=lambda r: r[3])
    return results
