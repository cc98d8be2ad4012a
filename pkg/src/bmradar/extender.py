"""Virtual spatiotemporal snapshot construction.

For each Tx antenna m, a blocking matrix collects every *other* antenna's
delayed-Doppler code at the estimated target parameters; projecting a
fast-time vector onto the orthogonal complement of that column space
isolates antenna m's contribution.  Stacking the projected per-antenna
copies of every Rx channel turns an (n_rx x L) PRI into a virtual snapshot
of length n_bar * n_rx * L, ordered (tx antenna m, rx antenna i, fast
time t).

Projectors are never materialised: with Q an orthonormal basis of the
blocker columns, P v = v - Q (Q^H v).  This keeps the per-vector cost at
O(L * rank) and sidesteps the ill-conditioned normal-equations inverse
when two targets nearly coincide in delay and Doppler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import DataCube
from .manifold import doppler_phase_vector
from .scenario import SystemConfig
from .waveform import CodeMatrix

__all__ = [
    "BlockerSet",
    "VirtualSnapshots",
    "vectorize_pri",
    "devectorize_pri",
    "build_blockers",
    "apply_virtual_extension",
]

# Columns with singular value below this fraction of the largest are
# treated as rank-deficient and dropped (deterministically).
RANK_TOLERANCE = 1e-8


@dataclass(frozen=True)
class BlockerSet:
    """Per-Tx-antenna blocking matrices and orthonormal bases.

    blockers[m]: L x (K * (n_bar - 1)) matrix of interfering signatures.
    bases[m]:    orthonormal basis of its column space (rank-truncated).
    estimates:   the (delay, Doppler) pairs the blockers were built from.
    """

    blockers: tuple[np.ndarray, ...]
    bases: tuple[np.ndarray, ...]
    estimates: tuple[tuple[int, float], ...]

    @property
    def tx_count(self) -> int:
        return len(self.blockers)

    def project(self, m: int, vectors: np.ndarray) -> np.ndarray:
        """Apply the complement projector of antenna m.

        vectors: (..., L) array of row vectors; returns the same shape.
        """
        q = self.bases[m]
        if q.shape[1] == 0:
            return np.array(vectors, copy=True)
        return vectors - (vectors @ np.conj(q)) @ q.T


@dataclass(frozen=True)
class VirtualSnapshots:
    """Matrix of virtual snapshots, one column per PRI.

    matrix: (n_bar * n_rx * L, n_s), rows ordered (m, i, t), t fastest.
    """

    matrix: np.ndarray
    rx_count: int
    tx_count: int
    fast_time_bins: int

    @property
    def snapshot_count(self) -> int:
        return self.matrix.shape[1]


def vectorize_pri(x_n: np.ndarray) -> np.ndarray:
    """Stack an (n_rx, L) PRI matrix into a vector, antenna-major.

    Equivalent to vec of the transposed matrix: antenna i's fast-time
    vector occupies rows i*L .. (i+1)*L - 1.
    """
    if x_n.ndim != 2:
        raise ValueError("expected a 2-D PRI matrix")
    return x_n.reshape(-1)


def devectorize_pri(x_st: np.ndarray, rx_count: int, fast_time_bins: int) -> np.ndarray:
    return x_st.reshape(rx_count, fast_time_bins)


def _orthonormal_basis(matrix: np.ndarray) -> np.ndarray:
    """Rank-revealing orthonormal basis of the column space via SVD."""
    if matrix.shape[1] == 0:
        return np.zeros((matrix.shape[0], 0), dtype=complex)
    u, s, _ = np.linalg.svd(matrix, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise ValueError("blocking matrix is all zero; estimates are degenerate")
    keep = s > RANK_TOLERANCE * s[0]
    return u[:, keep]


def build_blockers(
    codes: CodeMatrix,
    estimates: list[tuple[int, float]],
    system: SystemConfig,
) -> BlockerSet:
    """Blocking matrices from stage-1 (delay, Doppler) estimates.

    For antenna m the blocker stacks, for every estimated target, the
    delayed codes of all other antennas with that target's Doppler phase.
    """
    if not estimates:
        raise ValueError("estimates must be non-empty")
    nc = codes.code_length
    L = system.fast_time_bins
    n_bar = codes.tx_count
    for d, _ in estimates:
        if d < 0 or d + nc > L:
            raise ValueError(f"estimated delay {d} outside the valid range")

    phases = {f: doppler_phase_vector(f, system) for _, f in estimates}
    blockers = []
    bases = []
    for m in range(n_bar):
        others = [mm for mm in range(n_bar) if mm != m]
        blocks = []
        for d, f in estimates:
            shifted = np.zeros((L, len(others)), dtype=complex)
            shifted[d:d + nc, :] = codes.chips[:, others]
            blocks.append(shifted * phases[f][:, None])
        b_m = np.concatenate(blocks, axis=1) if blocks else np.zeros((L, 0), complex)
        blockers.append(b_m)
        if b_m.shape[1] == 0:
            bases.append(np.zeros((L, 0), dtype=complex))
        else:
            bases.append(_orthonormal_basis(b_m))
    return BlockerSet(
        blockers=tuple(blockers),
        bases=tuple(bases),
        estimates=tuple((int(d), float(f)) for d, f in estimates),
    )


def apply_virtual_extension(cube: DataCube, blockers: BlockerSet) -> VirtualSnapshots:
    """Project every PRI through each antenna's complement projector.

    Output column n holds, block by block over (m, i), the projected
    fast-time vector of Rx antenna i in PRI n.
    """
    n_s, L, n_rx = cube.samples.shape
    n_bar = blockers.tx_count
    # rows are (n, i) fast-time vectors
    rows = cube.samples.transpose(0, 2, 1).reshape(n_s * n_rx, L)
    out = np.empty((n_bar * n_rx * L, n_s), dtype=complex)
    for m in range(n_bar):
        proj = blockers.project(m, rows).reshape(n_s, n_rx, L)
        out[m * n_rx * L:(m + 1) * n_rx * L, :] = (
            proj.transpose(1, 2, 0).reshape(n_rx * L, n_s)
        )
    return VirtualSnapshots(
        matrix=out, rx_count=n_rx, tx_count=n_bar, fast_time_bins=L
    )
