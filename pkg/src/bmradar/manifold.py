"""Array response vectors and delay/Doppler/code signatures.

Conventions used throughout the package:

* Tx steering uses exp(+j r.k), Rx uses exp(-j r.k), with the wavenumber
  k = (2*pi/lambda) * unit(azimuth, elevation).
* Fast-time sample index runs 1..L inside a PRI when it appears in a
  Doppler phase.
* The combined Tx/Rx/fast-time vector is ordered (tx antenna m, rx
  antenna i, fast time t), t fastest: h = conj(tx_vec) kron rx_vec kron
  temporal.  This matches the stacked per-Tx-antenna projector layout used
  by the virtual-snapshot builder, so the projected data and the projected
  manifold line up block for block.
"""

from __future__ import annotations

import numpy as np

from .scenario import ArrayGeometry, Scenario, SystemConfig, derive_params

__all__ = [
    "direction_unit_vector",
    "spatial_manifold",
    "doppler_phase_vector",
    "apply_shift",
    "temporal_signature",
    "extended_manifold",
    "transformation_matrix",
]


def direction_unit_vector(theta_deg, phi_deg=0.0) -> np.ndarray:
    """Unit vector for azimuth theta and elevation phi (degrees).

    Scalar angles give shape (3,); array angles broadcast to (3, ...).
    """
    th = np.radians(theta_deg)
    ph = np.radians(phi_deg)
    th, ph = np.broadcast_arrays(th, ph)
    return np.stack(
        [np.cos(th) * np.cos(ph), np.sin(th) * np.cos(ph), np.sin(ph)]
    )


def spatial_manifold(
    geometry: ArrayGeometry | np.ndarray,
    theta_deg,
    phi_deg: float = 0.0,
    wavelength_m: float = 1.0,
    side: str = "rx",
) -> np.ndarray:
    """Array response for a plane wave from (theta, phi).

    side="tx" uses the +j exponent, side="rx" the -j exponent.  Every entry
    has unit modulus.  theta_deg may be an array, in which case the result
    is (elements, angles).
    """
    if wavelength_m <= 0:
        raise ValueError("wavelength_m must be > 0")
    if side not in ("tx", "rx"):
        raise ValueError("side must be 'tx' or 'rx'")
    coords = geometry.matrix if isinstance(geometry, ArrayGeometry) else np.asarray(geometry, float)
    k = (2.0 * np.pi / wavelength_m) * direction_unit_vector(theta_deg, phi_deg)
    sign = 1.0 if side == "tx" else -1.0
    return np.exp(1j * sign * np.tensordot(coords.T, k, axes=(1, 0)))


def doppler_phase_vector(f_hz: float, system: SystemConfig) -> np.ndarray:
    """Fast-time Doppler progression exp(j*2*pi*f*l*Tc), l = 1..L."""
    t = np.arange(1, system.fast_time_bins + 1) * system.chip_period_s
    return np.exp(2j * np.pi * f_hz * t)


def apply_shift(v: np.ndarray, d: int) -> np.ndarray:
    """Delay a fast-time vector by d bins, zero-filling (no wrap-around)."""
    n = v.shape[0]
    if not 0 <= d < n:
        raise ValueError(f"shift {d} outside [0, {n})")
    out = np.zeros_like(v)
    if d == 0:
        return v.copy()
    out[d:] = v[:-d]
    return out


def temporal_signature(
    codes, d: int, f_hz: float, system: SystemConfig
) -> np.ndarray:
    """Delayed composite code with the fast-time Doppler phase applied.

    Requires the delayed code to fit inside the PRI (d + nc <= L); an echo
    arriving later is range-ambiguous and rejected.
    """
    nc = codes.code_length
    L = system.fast_time_bins
    if codes.fast_time_bins != L:
        raise ValueError(
            f"codes extended to {codes.fast_time_bins} bins but the PRI has {L}"
        )
    if d < 0 or d + nc > L:
        raise ValueError(
            f"delay {d} bins is range-ambiguous: code support would leave the "
            f"PRI (need 0 <= d <= {L - nc})"
        )
    return apply_shift(codes.composite.astype(complex), d) * doppler_phase_vector(f_hz, system)


def extended_manifold(
    theta_deg: float,
    theta_bar_deg: float,
    d: int,
    f_hz: float,
    scenario: Scenario,
    codes=None,
) -> np.ndarray:
    """Combined Tx/Rx/fast-time response vector of length n_bar * n * L.

    Ordering is (tx antenna, rx antenna, fast time), i.e.
    conj(tx_manifold) kron rx_manifold kron temporal_signature.
    """
    if codes is None:
        raise ValueError("codes must be supplied")
    derived = derive_params(scenario)
    s_rx = spatial_manifold(scenario.rx_array, theta_deg, 0.0, derived.wavelength_m, "rx")
    s_tx = spatial_manifold(scenario.tx_array, theta_bar_deg, 0.0, derived.wavelength_m, "tx")
    temporal = temporal_signature(codes, d, f_hz, scenario.system)
    return np.kron(np.conj(s_tx), np.kron(s_rx, temporal))


def transformation_matrix(
    codes, d: int, f_hz: float, system: SystemConfig
) -> np.ndarray:
    """L x n_bar matrix whose column m is the delayed code of Tx antenna m
    with the Doppler phase applied.

    Tall-skinny orientation so the n_bar x n_bar gram T^H T is small and
    nonsingular; the gram is independent of both d and f because the
    unit-modulus Doppler phases cancel.
    """
    nc = codes.code_length
    L = system.fast_time_bins
    if d < 0 or d + nc > L:
        raise ValueError(
            f"delay {d} bins is range-ambiguous (need 0 <= d <= {L - nc})"
        )
    shifted = np.zeros((L, codes.tx_count), dtype=complex)
    shifted[d:d + nc, :] = codes.chips
    return shifted * doppler_phase_vector(f_hz, system)[:, None]
