import numpy as np
import pytest

import bmradar as b


@pytest.fixture(scope="session")
def paper_scenario():
    return b.default_scenario()


def make_tiny_scenario(
    targets=None,
    n_s=16,
    snr_db=float("inf"),
    scr_db=float("inf"),
    seed=0,
):
    """Small scenario for brute-force oracles: 7-chip codes, 14-bin PRI,
    two antennas each side."""
    system = b.SystemConfig(
        carrier_frequency_hz=1.3e9,
        chip_period_s=1e-6,
        code_length=7,
        pris_per_cpi=n_s,
        tx_count=2,
        rx_count=2,
        snr_db=snr_db,
        scr_db=scr_db,
        baseline_bins=3.0,
        pulses_per_pri=2,
        unambiguous_range_bins=None,
    )
    half_wl = 0.5 * b.SPEED_OF_LIGHT / system.carrier_frequency_hz
    geom = b.ArrayGeometry(((0.0, half_wl), (0.0, 0.0), (0.0, 0.0)))
    if targets is None:
        targets = (
            b.TargetSpec(2, 3, doa_deg=120.0, dod_deg=60.0, bistatic_angle_deg=40.0,
                         velocity_mps=100.0),
        )
    return b.Scenario(system=system, tx_array=geom, rx_array=geom,
                      targets=tuple(targets), rng_seed=seed)


@pytest.fixture
def tiny_scenario():
    return make_tiny_scenario()


def build_waveform(scenario, code_seed=11, symbol_seed=12, kind="mseq"):
    system = scenario.system
    codes = b.extend_codes(
        b.generate_pn_codes(system.tx_count, system.code_length, kind, seed=code_seed),
        system.fast_time_bins,
    )
    symbols = b.generate_symbols(system.pris_per_cpi, seed=symbol_seed)
    return codes, symbols


def clean_cube(scenario, code_seed=11, symbol_seed=12, state_seed=13):
    """Echo-only cube (no noise, no clutter) plus its waveform."""
    codes, symbols = build_waveform(scenario, code_seed, symbol_seed)
    rng = np.random.default_rng(state_seed)
    states = b.draw_target_states(scenario, rng)
    cube = b.synthesize_targets(scenario, codes, symbols, states)
    return cube, codes, symbols, states
