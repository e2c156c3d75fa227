"""Shared fixtures: the reference bench and synthetic operating points.

The triple-resonance fixtures build a degenerate p = 0 mode with all
detunings pinned to zero instead of hunting for the exact cavity length;
solve_steady and linearize only consume the detuning set, so this is the
clean way to probe "exact triple resonance" contracts.
"""

import dataclasses
import math

import numpy as np
import pytest

from tropo import (
    DetuningSet,
    ModeSolution,
    PumpDrive,
    degeneracy_temperature,
    linearize,
    load_setup,
    minimum_threshold,
    qpm_coupling,
    solve_steady,
    threshold,
)


@pytest.fixture(scope="session")
def setup():
    return load_setup()


@pytest.fixture(scope="session")
def cavity(setup):
    return setup.cavity


@pytest.fixture(scope="session")
def omega0(setup):
    return setup.omega0


@pytest.fixture(scope="session")
def t_qpm(setup):
    return degeneracy_temperature(
        setup.crystal.grating_period, setup.crystal, setup.omega0
    )


@pytest.fixture(scope="session")
def t_op(t_qpm):
    """Operating temperature of the near-degenerate squeezing condition."""
    return t_qpm - 0.1


@pytest.fixture(scope="session")
def p_min(setup):
    return minimum_threshold(setup.cavity, setup.omega0)


def _synthetic_mode(setup, temp_c, delta=0.0, phi0=0.0, p=0):
    """Degenerate-pair ModeSolution at prescribed wrapped detunings."""
    om_half = setup.omega0 / 2
    dets = DetuningSet(
        phi0=phi0,
        phi1=delta,
        phi2=delta,
        phi0_unwrapped=phi0,
        phi1_unwrapped=delta + 2 * math.pi * p,
        phi2_unwrapped=delta,
    )
    coupling = qpm_coupling(om_half, om_half, setup.crystal, temp_c=temp_c)
    mode = ModeSolution(
        p=p,
        omega1=om_half,
        omega2=om_half,
        delta_nu_thz=0.0,
        detunings=dets,
        threshold_w=1.0,
        coupling=coupling,
    )
    return dataclasses.replace(
        mode, threshold_w=threshold(mode, setup.cavity, setup.omega0)
    )


@pytest.fixture(scope="session")
def operating_point(setup, t_op):
    """Factory: (mode, drive, state) above threshold at chosen detunings.

    ratio is P_in relative to the minimum threshold for delta = phi0 = 0,
    relative to the mode's own threshold otherwise (so callers stay above
    threshold at detuned points without computing margins themselves).
    """
    p_floor = minimum_threshold(setup.cavity, setup.omega0)

    def make(ratio=8.0, delta=0.0, phi0=0.0, phase=0.0, branch="upper"):
        mode = _synthetic_mode(setup, t_op, delta=delta, phi0=phi0)
        p_ref = p_floor if (delta == 0.0 and phi0 == 0.0) else mode.threshold_w
        drive = PumpDrive.from_power(ratio * p_ref, setup.omega0, phase=phase)
        states = solve_steady(drive, mode.detunings, mode, setup.cavity)
        if branch == "trivial":
            state = states[0]
        else:
            nontrivial = [s for s in states if s.branch != "trivial"]
            state = nontrivial[-1] if nontrivial else states[0]
        return mode, drive, state

    return make


@pytest.fixture(scope="session")
def state_8x(operating_point):
    """Upper-branch steady state at exact triple resonance, 8x threshold."""
    return operating_point(ratio=8.0)


@pytest.fixture(scope="session")
def model_8x(state_8x, setup, t_op):
    _, _, state = state_8x
    return linearize(state, setup.cavity, temp_c=t_op)


@pytest.fixture(scope="session")
def closure_traces(model_8x, setup, tmp_path_factory):
    """Synthetic analyzer traces with a known planted quadrature spectrum.

    Built forward through the detection-chain model (LO shot + pump beat
    + electronic floor, in dBm), so reduce_traces must invert the whole
    arithmetic to recover the planted spectrum.  Returns (dir, planted S,
    theta grid).
    """
    from tropo import pump_quadrature_spectrum
    from tropo.homodyne import MeasuredTrace, homodyne_variance

    theta = np.linspace(0.0, 2 * np.pi, 241)
    planted = pump_quadrature_spectrum(model_8x, theta, 6e6)
    chain = setup.detection
    floor_mw = 10 ** (setup.electronic_floor_dbm / 10)

    n1 = homodyne_variance(planted, chain) * 1e3
    n2 = np.full_like(n1, chain.lo_power_w * 1e3)
    n3 = np.full_like(n1, chain.pump_power_w * 1e3)
    out = tmp_path_factory.mktemp("traces")
    for label, linear, name in (
        ("combined", n1, "n1.csv"),
        ("lo_shot", n2, "n2.csv"),
        ("pump_shot", n3, "n3.csv"),
        ("electronic", np.zeros_like(n1), "electronic.csv"),
    ):
        MeasuredTrace(
            label=label,
            power_dbm=10 * np.log10(linear + floor_mw),
            resolution_bw_hz=1e5,
            video_bw_hz=1e2,
            analysis_freq_hz=6e6,
        ).to_csv(out / name)
    return out, planted, theta
