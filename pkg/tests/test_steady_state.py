"""Steady-state solver: clamp, branches, thresholds, ledger, scans."""

import dataclasses
import math

import numpy as np
import pytest

from tropo import (
    DEFF_TO_FLUX_COUPLING,
    DetuningSet,
    DomainError,
    ModeSolution,
    PumpDrive,
    UsageError,
    calibrate_flux_coupling,
    conversion_ledger,
    degeneracy_temperature,
    double_resonance_lengths,
    minimum_threshold,
    mode_catalog,
    qpm_coupling,
    scan_cavity,
    solve_steady,
    threshold_phase_penalty,
)
from tropo.steady_state import (
    clamp_pump,
    reflected_power_w,
    round_trip_coupling,
    threshold,
)

from oracles import iterate_maps


@pytest.fixture(scope="module")
def chi_rt(setup, t_op, omega0):
    c = qpm_coupling(omega0 / 2, omega0 / 2, setup.crystal, temp_c=t_op)
    return round_trip_coupling(c, setup.crystal)


def _mode(setup, t_op, delta=0.0, phi0=0.0):
    om_half = setup.omega0 / 2
    dets = DetuningSet(phi0, delta, delta, phi0, delta, delta)
    c = qpm_coupling(om_half, om_half, setup.crystal, temp_c=t_op)
    m = ModeSolution(
        p=0, omega1=om_half, omega2=om_half, delta_nu_thz=0.0,
        detunings=dets, threshold_w=1.0, coupling=c,
    )
    return dataclasses.replace(m, threshold_w=threshold(m, setup.cavity, setup.omega0))


# -- pump clamp --------------------------------------------------------------


def test_clamp_zero_detuning_reduction(cavity, chi_rt):
    r = cavity.amplitude_ir_reflection
    assert clamp_pump(0.0, 0.0, r, chi_rt) == pytest.approx(
        (1 - r) / (r * abs(chi_rt)), rel=1e-12
    )


def test_clamp_symmetric_in_signal_idler(cavity, chi_rt):
    r = cavity.amplitude_ir_reflection
    rng = np.random.default_rng(11)
    for _ in range(20):
        a, b = rng.uniform(-0.4, 0.4, 2)
        assert clamp_pump(a, b, r, chi_rt) == clamp_pump(b, a, r, chi_rt)


def test_clamp_rejects_zero_coupling(cavity):
    with pytest.raises(DomainError):
        clamp_pump(0.0, 0.0, cavity.amplitude_ir_reflection, 0.0)


def test_clamp_is_exact_fixed_point_level(cavity, chi_rt):
    """At |E0| = clamp the linearized signal/idler map has a unit eigenvalue,
    and a matching nonzero field configuration closes the full round trip."""
    t0, r0 = cavity.amplitude_pump_coefficients
    r = cavity.amplitude_ir_reflection
    rng = np.random.default_rng(23)
    for _ in range(20):
        phi = rng.uniform(-0.05, 0.05)
        phi0 = rng.uniform(-0.5, 0.5)
        beta = rng.uniform(-math.pi, math.pi)
        clamp = clamp_pump(phi, phi, r, chi_rt)
        e0 = clamp * np.exp(1j * beta)

        # eigenvalue-1 direction of the (E1, conj(E2)) round-trip map
        m = np.array(
            [
                [r * np.exp(1j * phi), r * np.exp(1j * phi) * chi_rt * e0],
                [r * np.exp(-1j * phi) * np.conj(chi_rt * e0), r * np.exp(-1j * phi)],
            ]
        )
        w, v = np.linalg.eig(m)
        k = int(np.argmin(np.abs(w - 1)))
        assert abs(w[k] - 1) < 1e-12

        amp = 2.0e9
        e1 = amp * v[0, k] / abs(v[0, k])
        e2 = np.conj(amp * v[1, k] / abs(v[1, k]))
        # drive that holds this pump level against depletion
        e_in = (e0 - r0 * (e0 - np.conj(chi_rt) * e1 * e2) * np.exp(1j * phi0)) / t0
        out = iterate_maps.round_trip(
            (e0, e1, e2), e_in, t0, r0, r, chi_rt, phi0, phi, phi
        )
        scale = max(abs(e0), abs(e1), abs(e2))
        res = max(abs(a - b) for a, b in zip(out, (e0, e1, e2)))
        assert res < 1e-12 * scale

        # perturb and relax: the pump magnitude must come back to the clamp
        start = (e0 * (1 + 1e-4), e1 * (1 - 2e-4), e2 * (1 + 1e-4))
        fields, resid, ok = iterate_maps.iterate(
            e_in, t0, r0, r, chi_rt, phi0, phi, phi, start, damping=0.5
        )
        assert ok
        assert abs(fields[1]) > 0.1 * amp
        assert abs(abs(fields[0]) - clamp) < 1e-10 * clamp


# -- branches ----------------------------------------------------------------


def test_zero_drive_is_dark(setup, t_op, omega0):
    mode = _mode(setup, t_op)
    states = solve_steady(
        PumpDrive.from_power(0.0, omega0), mode.detunings, mode, setup.cavity
    )
    assert [s.branch for s in states] == ["trivial"]
    assert states[0].e0 == 0 and states[0].e1 == 0 and states[0].e2 == 0


def test_negative_power_rejected(omega0):
    with pytest.raises(DomainError):
        PumpDrive.from_power(-1e-6, omega0)


def test_drive_consistency_enforced(omega0):
    with pytest.raises(DomainError):
        PumpDrive(e_in=1e5, power_w=1.0, omega0=omega0)


def test_above_threshold_branch_structure(setup, t_op, omega0, p_min):
    mode = _mode(setup, t_op)
    states = solve_steady(
        PumpDrive.from_power(8 * p_min, omega0), mode.detunings, mode, setup.cavity
    )
    assert [s.branch for s in states] == ["trivial", "upper"]
    trivial, upper = states
    assert not trivial.stable  # above threshold the dark state loses stability
    assert upper.stable
    assert upper.residual < 1e-10
    assert abs(upper.e1) == abs(upper.e2)

    weaker = solve_steady(
        PumpDrive.from_power(4 * p_min, omega0), mode.detunings, mode, setup.cavity
    )[-1]
    assert abs(upper.e1) > abs(weaker.e1)


def test_bistable_branch_structure(setup, t_op, omega0):
    """Detuned pump plus detuned signal opens a bistable window below the
    linear threshold: dark and bright states coexist, the middle branch is
    the unstable separatrix."""
    mode = _mode(setup, t_op, delta=0.01, phi0=0.3)
    drive = PumpDrive.from_power(0.90 * mode.threshold_w, omega0)
    states = solve_steady(drive, mode.detunings, mode, setup.cavity)
    assert [s.branch for s in states] == ["trivial", "lower", "upper"]
    assert [s.stable for s in states] == [True, False, True]
    assert abs(states[1].e1) < abs(states[2].e1)


def test_stable_branches_match_damped_iteration(setup, t_op, omega0, p_min):
    t0, r0 = setup.cavity.amplitude_pump_coefficients
    r = setup.cavity.amplitude_ir_reflection
    cases = [
        (_mode(setup, t_op), 8 * p_min),
        (_mode(setup, t_op, delta=0.01, phi0=0.3), None),  # bistable point
    ]
    for mode, power in cases:
        if power is None:
            power = 0.90 * mode.threshold_w
        drive = PumpDrive.from_power(power, omega0)
        chi = round_trip_coupling(mode.coupling, setup.cavity.crystal)
        d = mode.detunings
        for state in solve_steady(drive, d, mode, setup.cavity):
            if not state.stable or state.branch == "trivial":
                continue
            start = (state.e0 * (1 + 1e-5), state.e1 * (1 - 1e-5), state.e2)
            fields, resid, ok = iterate_maps.iterate(
                drive.e_in, t0, r0, r, chi, d.phi0, d.phi1, d.phi2, start, damping=0.5
            )
            assert ok
            scale = max(abs(state.e1), abs(state.e0))
            assert abs(fields[0] - state.e0) < 1e-8 * scale
            # signal/idler carry an arbitrary differential phase; compare
            # the gauge invariants
            assert abs(fields[1] * fields[2] - state.e1 * state.e2) < 1e-8 * scale**2
            assert abs(abs(fields[1]) - abs(state.e1)) < 1e-8 * scale


def test_pump_clamped_above_threshold(setup, t_op, omega0, chi_rt):
    mode = _mode(setup, t_op, delta=0.01, phi0=0.1)
    clamp = clamp_pump(0.01, 0.01, setup.cavity.amplitude_ir_reflection, chi_rt)
    mags = []
    for ratio in np.linspace(1.01, 10.0, 25):
        drive = PumpDrive.from_power(ratio * mode.threshold_w, omega0)
        state = solve_steady(drive, mode.detunings, mode, setup.cavity)[-1]
        assert state.branch == "upper"
        mags.append(abs(state.e0))
    mags = np.array(mags)
    assert np.ptp(mags) < 1e-10 * mags.mean()
    assert abs(mags.mean() - clamp) < 1e-10 * clamp


# -- thresholds --------------------------------------------------------------


def test_threshold_scales_inversely_with_coupling_squared(setup, t_op, omega0):
    base = _mode(setup, t_op)
    doubled = dataclasses.replace(setup.crystal, d_eff=2 * setup.crystal.d_eff)
    c2 = qpm_coupling(omega0 / 2, omega0 / 2, doubled, temp_c=t_op)
    m2 = ModeSolution(
        p=0, omega1=omega0 / 2, omega2=omega0 / 2, delta_nu_thz=0.0,
        detunings=base.detunings, threshold_w=1.0, coupling=c2,
    )
    cav2 = dataclasses.replace(setup.cavity, crystal=doubled)
    assert threshold(m2, cav2, omega0) / base.threshold_w == pytest.approx(0.25, rel=1e-12)


def test_threshold_minimum_on_resonance(setup, t_op):
    base = _mode(setup, t_op)
    rng = np.random.default_rng(3)
    for _ in range(10):
        delta, phi0 = rng.uniform(-0.3, 0.3, 2)
        if abs(delta) < 1e-3 and abs(phi0) < 1e-3:
            continue
        assert _mode(setup, t_op, delta=delta, phi0=phi0).threshold_w > base.threshold_w


def test_threshold_phase_penalty_profile(cavity, omega0):
    psi, penalty = threshold_phase_penalty(cavity, omega0, n_psi=81)
    assert penalty[0] == pytest.approx(1.0, abs=1e-12)
    assert np.argmax(penalty) == len(psi) // 2  # worst case at psi = pi
    assert np.allclose(penalty, penalty[::-1], rtol=0, atol=1e-12)
    assert penalty.max() / penalty.min() == pytest.approx(1.90, abs=0.05)


def test_minimum_threshold_and_calibration_round_trip(cavity, omega0):
    p_th = minimum_threshold(cavity, omega0)
    assert p_th == pytest.approx(300e-6, rel=1e-6)
    back = calibrate_flux_coupling(cavity, omega0, p_th)
    assert back == pytest.approx(DEFF_TO_FLUX_COUPLING, rel=1e-9)


# -- conversion bookkeeping --------------------------------------------------


def test_conversion_ledger_identities(setup, state_8x, chi_rt):
    _, _, state = state_8x
    led = conversion_ledger(state, setup.cavity)
    assert led["signal_gain"] == led["idler_gain"]
    assert led["signal_gain"] > 0 and led["pump_depletion"] > 0
    defect = led["signal_gain"] - led["pump_depletion"]
    assert defect == pytest.approx(led["quadratic_defect"], rel=1e-10)
    # the defect is the quadratic remainder of the round-trip exchange
    expected = abs(chi_rt) ** 2 * (
        abs(state.e0 * state.e2) ** 2 + abs(state.e1 * state.e2) ** 2
    )
    assert defect == pytest.approx(expected, rel=1e-10)


def test_reflected_power_sane(setup, t_op, omega0, p_min):
    mode = _mode(setup, t_op)
    drive = PumpDrive.from_power(0.5 * p_min, omega0)
    trivial = solve_steady(drive, mode.detunings, mode, setup.cavity)[0]
    refl = reflected_power_w(trivial, setup.cavity)
    assert 0 <= refl < drive.power_w


# -- catalogs and scans ------------------------------------------------------


@pytest.fixture(scope="module")
def dr_lengths(setup, t_op, omega0):
    cav = setup.cavity
    return np.asarray(
        double_resonance_lengths(
            t_op, 0, cav, (cav.length - 2.3e-6, cav.length + 2.3e-6), omega0
        )
    )


def test_catalog_sorted_and_degenerate_pair(setup, t_op, omega0, dr_lengths):
    cat = mode_catalog(float(dr_lengths[1]), t_op, range(0, 101), setup.cavity, omega0)
    ths = [m.threshold_w for m in cat]
    assert ths == sorted(ths)
    assert all(m.omega1 + m.omega2 == omega0 for m in cat)
    degenerate = next(m for m in cat if m.p == 0)
    assert degenerate.omega1 == degenerate.omega2 == omega0 / 2
    # 0.1 K below degeneracy the coupling peak sits at a small splitting, so
    # a slightly split pair may undercut p = 0, but only in the eighth digit
    assert ths[0] == pytest.approx(degenerate.threshold_w, rel=1e-6)


def test_catalog_repeats_along_resonance_comb(setup, t_op, omega0, dr_lengths):
    """Consecutive double-resonance lengths host the same mode family."""
    c1 = mode_catalog(float(dr_lengths[1]), t_op, range(0, 301), setup.cavity, omega0)
    c2 = mode_catalog(float(dr_lengths[2]), t_op, range(0, 301), setup.cavity, omega0)
    m1 = {m.p: m for m in c1}
    m2 = {m.p: m for m in c2}
    assert set(m1) == set(m2)
    for p in m1:
        assert m1[p].threshold_w == pytest.approx(m2[p].threshold_w, rel=1e-4)
        if p:
            assert m1[p].delta_nu_thz == pytest.approx(m2[p].delta_nu_thz, rel=1e-4)


def test_scan_rejects_bad_arguments(setup, t_op, omega0, p_min, dr_lengths):
    window = (float(dr_lengths[1]) - 5e-9, float(dr_lengths[1]) + 5e-9)
    with pytest.raises(UsageError):
        scan_cavity(window, t_op, 8 * p_min, "noisy", setup.cavity, omega0)
    with pytest.raises(UsageError):
        scan_cavity((window[0], window[0]), t_op, 8 * p_min, "sticky", setup.cavity, omega0)
    with pytest.raises(UsageError):
        scan_cavity(window, t_op, 8 * p_min, "sticky", setup.cavity, omega0, step=0.0)


def test_scan_below_threshold_is_dark(setup, t_op, omega0, p_min, dr_lengths):
    window = (float(dr_lengths[1]) - 5e-9, float(dr_lengths[1]) + 5e-9)
    trace = scan_cavity(
        window, t_op, 0.5 * p_min, "sticky", setup.cavity, omega0,
        pump_ratio_hint=2.0,
    )
    assert np.all(trace.p_index == -1)
    assert np.all(trace.signal_intensity == 0)
    assert not trace.hops
    assert not np.any(trace.hop_flags)
    assert np.all(trace.reflected_mw > 0)
