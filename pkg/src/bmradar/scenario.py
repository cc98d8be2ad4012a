"""Experiment configuration: system constants, array geometries, targets.

All ranges at this interface are in compressed range bins (one bin =
c * chip_period metres); all angles are degrees.  Everything is immutable
after construction, so a Scenario can be shared freely across workers.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s

__all__ = [
    "SPEED_OF_LIGHT",
    "ScenarioError",
    "SystemConfig",
    "ArrayGeometry",
    "TargetSpec",
    "Scenario",
    "DerivedParams",
    "default_scenario",
    "load_scenario",
    "save_scenario",
    "scenario_to_dict",
    "derive_params",
    "truth_from_geometry",
]


class ScenarioError(ValueError):
    """Raised when a scenario file fails parsing or validation."""


def _require(cond: bool, field_name: str, message: str) -> None:
    if not cond:
        raise ScenarioError(f"{field_name}: {message}")


@dataclass(frozen=True)
class SystemConfig:
    """Radar system constants for one coherent processing interval.

    The fast-time extent of a PRI can be given either as ``pulses_per_pri``
    (PRI = pulses_per_pri * code_length chips) or as
    ``unambiguous_range_bins`` (PRI = 2 * unambiguous_range_bins chips).
    Exactly one of the two must be set.
    """

    carrier_frequency_hz: float = 1.3e9
    chip_period_s: float = 1e-6
    code_length: int = 15
    pris_per_cpi: int = 256
    tx_count: int = 5
    rx_count: int = 5
    tx_power_w: float = 1.0
    snr_db: float = 20.0
    scr_db: float = -5.0
    baseline_bins: float = 95.0
    pulses_per_pri: int | None = None
    unambiguous_range_bins: int | None = 262

    def __post_init__(self) -> None:
        _require(self.carrier_frequency_hz > 0, "carrier_frequency_hz", "must be > 0")
        _require(math.isfinite(self.carrier_frequency_hz), "carrier_frequency_hz", "must be finite")
        _require(self.chip_period_s > 0, "chip_period_s", "must be > 0")
        _require(self.code_length >= 1, "code_length", "must be >= 1")
        _require(self.pris_per_cpi >= 1, "pris_per_cpi", "must be >= 1")
        _require(self.tx_count >= 1, "tx_count", "must be >= 1")
        _require(self.rx_count >= 1, "rx_count", "must be >= 1")
        _require(self.tx_power_w > 0, "tx_power_w", "must be > 0")
        # +inf is the documented "disabled" flag for noise/clutter
        _require(not math.isnan(self.snr_db), "snr_db", "must not be NaN")
        _require(not math.isnan(self.scr_db), "scr_db", "must not be NaN")
        _require(self.baseline_bins > 0, "baseline_bins", "must be > 0")
        if (self.pulses_per_pri is None) == (self.unambiguous_range_bins is None):
            raise ScenarioError(
                "pulses_per_pri/unambiguous_range_bins: exactly one must be set"
            )
        if self.pulses_per_pri is not None:
            _require(self.pulses_per_pri >= 1, "pulses_per_pri", "must be >= 1")
        if self.unambiguous_range_bins is not None:
            _require(self.unambiguous_range_bins >= 1, "unambiguous_range_bins", "must be >= 1")
        _require(
            self.fast_time_bins >= self.code_length,
            "fast_time_bins",
            "PRI must hold at least one full code period",
        )

    @property
    def pulse_duration_s(self) -> float:
        """Pulse duration: code_length chips."""
        return self.code_length * self.chip_period_s

    @property
    def fast_time_bins(self) -> int:
        """Compressed range bins per PRI (fast-time samples per PRI)."""
        if self.pulses_per_pri is not None:
            return self.pulses_per_pri * self.code_length
        return 2 * int(self.unambiguous_range_bins)

    @property
    def pri_s(self) -> float:
        return self.fast_time_bins * self.chip_period_s

    @property
    def cpi_s(self) -> float:
        return self.pris_per_cpi * self.pri_s

    @property
    def bandwidth_hz(self) -> float:
        return 1.0 / self.chip_period_s


@dataclass(frozen=True)
class ArrayGeometry:
    """Antenna element positions as a 3 x M matrix of metres (x, y, z rows)."""

    coordinates: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        coords = np.asarray(self.coordinates, dtype=float)
        _require(coords.ndim == 2 and coords.shape[0] == 3, "coordinates", "must be 3 x M")
        _require(coords.shape[1] >= 1, "coordinates", "must hold at least one element")
        _require(bool(np.all(np.isfinite(coords))), "coordinates", "entries must be finite")

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.coordinates, dtype=float)

    @property
    def element_count(self) -> int:
        return len(self.coordinates[0])

    @staticmethod
    def from_matrix(matrix: np.ndarray) -> "ArrayGeometry":
        m = np.asarray(matrix, dtype=float)
        return ArrayGeometry(tuple(tuple(float(v) for v in row) for row in m))


@dataclass(frozen=True)
class TargetSpec:
    """One target: geometry (bins/degrees), fluctuation model, motion."""

    tx_range_bins: float
    rx_range_bins: float
    doa_deg: float
    dod_deg: float
    bistatic_angle_deg: float
    rcs_mean_m2: float = 1.0
    swerling_model: int = 1
    velocity_mps: float = 0.0
    motion_angle_deg: float = 0.0

    def __post_init__(self) -> None:
        _require(self.tx_range_bins > 0, "tx_range_bins", "must be > 0")
        _require(self.rx_range_bins > 0, "rx_range_bins", "must be > 0")
        _require(self.rcs_mean_m2 > 0, "rcs_mean_m2", "must be > 0")
        _require(self.swerling_model in (1, 2, 3), "swerling_model", "must be 1, 2 or 3")
        _require(math.isfinite(self.velocity_mps), "velocity_mps", "must be finite")

    @property
    def bistatic_range_bins(self) -> float:
        return self.tx_range_bins + self.rx_range_bins


@dataclass(frozen=True)
class Scenario:
    """Full experiment description; validated on construction."""

    system: SystemConfig = field(default_factory=SystemConfig)
    tx_array: ArrayGeometry = None  # type: ignore[assignment]
    rx_array: ArrayGeometry = None  # type: ignore[assignment]
    targets: tuple[TargetSpec, ...] = ()
    rng_seed: int = 0

    def __post_init__(self) -> None:
        _require(self.tx_array is not None, "tx_array", "is required")
        _require(self.rx_array is not None, "rx_array", "is required")
        _require(
            self.tx_array.element_count == self.system.tx_count,
            "tx_array.coordinates",
            f"must have {self.system.tx_count} columns (tx_count)",
        )
        _require(
            self.rx_array.element_count == self.system.rx_count,
            "rx_array.coordinates",
            f"must have {self.system.rx_count} columns (rx_count)",
        )
        for idx, t in enumerate(self.targets):
            name = f"targets[{idx}]"
            _require(
                t.bistatic_range_bins > self.system.baseline_bins,
                f"{name}.bistatic_range_bins",
                "target lies on or inside the baseline (bistatic range must exceed it)",
            )
            _require(
                abs(t.tx_range_bins - t.rx_range_bins) < self.system.baseline_bins,
                f"{name}.tx_range_bins/rx_range_bins",
                "triangle inequality with the baseline is violated",
            )

    @property
    def target_count(self) -> int:
        return len(self.targets)

    def with_system(self, **changes) -> "Scenario":
        """Copy of this scenario with SystemConfig fields replaced."""
        return replace(self, system=replace(self.system, **changes))


@dataclass(frozen=True)
class DerivedParams:
    """Quantities derived from SystemConfig, SI units."""

    wavelength_m: float
    prf_hz: float
    doppler_bin_hz: float
    range_bin_m: float

    @property
    def unambiguous_doppler_hz(self) -> float:
        return self.prf_hz / 2.0


def derive_params(scenario: Scenario) -> DerivedParams:
    sys_cfg = scenario.system
    wavelength = SPEED_OF_LIGHT / sys_cfg.carrier_frequency_hz
    prf = 1.0 / sys_cfg.pri_s
    return DerivedParams(
        wavelength_m=wavelength,
        prf_hz=prf,
        doppler_bin_hz=prf / sys_cfg.pris_per_cpi,
        range_bin_m=SPEED_OF_LIGHT * sys_cfg.chip_period_s,
    )


def truth_from_geometry(target: TargetSpec, system: SystemConfig) -> tuple[int, float]:
    """Ground-truth (delay bin, Doppler Hz) implied by a target's geometry.

    The delay is the floor of the echo round-trip time in chips, which for
    bin-valued ranges is simply tx_range + rx_range.  The bistatic Doppler
    uses the half-bistatic-angle projection of the velocity.
    """
    tau_chips = target.tx_range_bins + target.rx_range_bins
    d_true = int(math.floor(tau_chips + 1e-12))
    wavelength = SPEED_OF_LIGHT / system.carrier_frequency_hz
    f_true = (
        (2.0 * target.velocity_mps / wavelength)
        * math.cos(math.radians(target.motion_angle_deg))
        * math.cos(math.radians(target.bistatic_angle_deg) / 2.0)
    )
    prf = 1.0 / system.pri_s
    if abs(f_true) > prf / 2.0:
        warnings.warn(
            f"Doppler {f_true:.2f} Hz exceeds +-PRF/2 = {prf / 2:.2f} Hz; "
            "estimates will alias",
            RuntimeWarning,
            stacklevel=2,
        )
    return d_true, f_true


# Default Tx/Rx uniform circular arrays, metres.  Tx elements sit three
# half-wavelength units apart, Rx elements one half-wavelength unit apart.
_TX_COORDS = (
    (0.28, 0.09, -0.22, -0.22, 0.09),
    (0.0, 0.26, 0.16, -0.16, -0.26),
    (0.0, 0.0, 0.0, 0.0, 0.0),
)
_RX_COORDS = (
    (0.092, 0.028, -0.074, -0.074, 0.028),
    (0.0, 0.087, 0.054, -0.054, -0.087),
    (0.0, 0.0, 0.0, 0.0, 0.0),
)

_DEFAULT_TARGETS = (
    TargetSpec(51, 101, 150.0, 81.20, 68.80, rcs_mean_m2=1.0, swerling_model=1,
               velocity_mps=-60.0),
    TargetSpec(85, 104, 130.0, 70.83, 59.17, rcs_mean_m2=1.5, swerling_model=2,
               velocity_mps=20.0),
    TargetSpec(126, 102, 100.0, 52.31, 47.69, rcs_mean_m2=2.0, swerling_model=3,
               velocity_mps=60.0),
)


def default_scenario() -> Scenario:
    """The bundled reference scenario (ships as ``data/paper.json``).

    1.3 GHz carrier, 15-chip codes, 524 compressed bins per PRI, 256 PRIs
    per CPI, two 5-element circular arrays 95 bins apart, three fluctuating
    targets, 20 dB SNR and -5 dB SCR.
    """
    return Scenario(
        system=SystemConfig(),
        tx_array=ArrayGeometry(_TX_COORDS),
        rx_array=ArrayGeometry(_RX_COORDS),
        targets=_DEFAULT_TARGETS,
        rng_seed=0,
    )


def default_scenario_path() -> Path:
    """Filesystem path of the bundled default scenario JSON."""
    return Path(str(resources.files("bmradar").joinpath("data/paper.json")))


def _system_to_dict(s: SystemConfig) -> dict:
    out = {
        "carrier_frequency_hz": s.carrier_frequency_hz,
        "chip_period_s": s.chip_period_s,
        "code_length": s.code_length,
        "pris_per_cpi": s.pris_per_cpi,
        "tx_count": s.tx_count,
        "rx_count": s.rx_count,
        "tx_power_w": s.tx_power_w,
        "snr_db": None if math.isinf(s.snr_db) else s.snr_db,
        "scr_db": None if math.isinf(s.scr_db) else s.scr_db,
        "baseline_bins": s.baseline_bins,
    }
    if s.pulses_per_pri is not None:
        out["pulses_per_pri"] = s.pulses_per_pri
    else:
        out["unambiguous_range_bins"] = s.unambiguous_range_bins
    return out


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "system": _system_to_dict(scenario.system),
        "tx_array": {"coordinates": [list(r) for r in scenario.tx_array.coordinates]},
        "rx_array": {"coordinates": [list(r) for r in scenario.rx_array.coordinates]},
        "targets": [
            {
                "tx_range_bins": t.tx_range_bins,
                "rx_range_bins": t.rx_range_bins,
                "doa_deg": t.doa_deg,
                "dod_deg": t.dod_deg,
                "bistatic_angle_deg": t.bistatic_angle_deg,
                "rcs_mean_m2": t.rcs_mean_m2,
                "swerling_model": t.swerling_model,
                "velocity_mps": t.velocity_mps,
                "motion_angle_deg": t.motion_angle_deg,
            }
            for t in scenario.targets
        ],
        "rng_seed": scenario.rng_seed,
    }


_SYSTEM_KEYS = {
    "carrier_frequency_hz", "chip_period_s", "code_length", "pris_per_cpi",
    "tx_count", "rx_count", "tx_power_w", "snr_db", "scr_db", "baseline_bins",
    "pulses_per_pri", "unambiguous_range_bins",
}
_TARGET_KEYS = {
    "tx_range_bins", "rx_range_bins", "doa_deg", "dod_deg",
    "bistatic_angle_deg", "rcs_mean_m2", "swerling_model", "velocity_mps",
    "motion_angle_deg",
}


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("document: top level must be a JSON object")
    sys_doc = dict(doc.get("system", {}))
    unknown = set(sys_doc) - _SYSTEM_KEYS
    _require(not unknown, "system", f"unknown keys {sorted(unknown)}")
    # null means "disabled" for the noise/clutter levels
    for k in ("snr_db", "scr_db"):
        if sys_doc.get(k, 0.0) is None:
            sys_doc[k] = math.inf
    if "pulses_per_pri" in sys_doc and "unambiguous_range_bins" not in sys_doc:
        sys_doc["unambiguous_range_bins"] = None
    try:
        system = SystemConfig(**sys_doc)
    except TypeError as exc:
        raise ScenarioError(f"system: {exc}") from exc

    def geometry(key: str) -> ArrayGeometry:
        g = doc.get(key)
        _require(isinstance(g, dict) and "coordinates" in g, key, "must supply coordinates")
        return ArrayGeometry(tuple(tuple(float(v) for v in row) for row in g["coordinates"]))

    targets = []
    for idx, tdoc in enumerate(doc.get("targets", [])):
        unknown = set(tdoc) - _TARGET_KEYS
        _require(not unknown, f"targets[{idx}]", f"unknown keys {sorted(unknown)}")
        try:
            targets.append(TargetSpec(**tdoc))
        except TypeError as exc:
            raise ScenarioError(f"targets[{idx}]: {exc}") from exc

    return Scenario(
        system=system,
        tx_array=geometry("tx_array"),
        rx_array=geometry("rx_array"),
        targets=tuple(targets),
        rng_seed=int(doc.get("rng_seed", 0)),
    )


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario from a JSON file.

    Raises ScenarioError with the offending field named for both parse and
    validation failures.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: malformed JSON ({exc})") from exc
    return scenario_from_dict(doc)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n")
