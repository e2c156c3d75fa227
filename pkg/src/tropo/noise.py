"""Linearized quantum fluctuations of the reflected pump.

Fluctuations around a steady state obey the continuous-time equivalent
of the round-trip maps,

    dx/dt = A x + B xi(t),     x = (x0, y0, x1, y1, x2, y2),

with A = (J - I)/tau built from the exact round-trip Jacobian J and the
photon round-trip time tau.  Every itemized loss port injects unit
vacuum: the per-mode symmetric decay of the map is 2*(1 - r cos phi)/tau,
so the noise blocks are sqrt(2*(1 - r_j cos phi_j)/tau) * I2, which makes
a passive detuned cavity return exactly shot noise at every frequency
and angle (the blocks are scaled rotations, i.e. all-pass).  The
parametric couplings carry no noise ports of their own: three-wave
mixing is Hamiltonian.

The pump loss splits into the external coupler port, 2*kappa_ext =
t0^2/tau, through which the reflected beam is observed, and a lumped
internal port for everything else in the ledger.  Input-output then
gives the observed quadrature spectrum, normalized to shot = 1,

    G(W) = C (iW I - A)^(-1) B + D,      W = 2*pi*f,
    S(theta, f) = u_theta^T Re[G G^dagger] u_theta,

with C = sqrt(2 kappa_ext) P0 projecting the pump quadratures and
D = -I2 on the external-port columns (output = leaked cavity field minus
the promptly reflected input).  The 2x2 matrix M = Re[G G^dagger] is a
full covariance-like object, so the optimum angle is closed-form:
S(theta) = m + R cos(2 theta - phi_R).

Angles are absolute quadrature phases in the drive frame (theta = 0 is
the amplitude quadrature of a real pump drive).  Detection losses belong
to the homodyne chain, not here: these are spectra at the OPO output.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .cavity import CavitySpec, DetuningSet
from .errors import DomainError, ImpedanceMatchedError, UsageError
from .steady_state import (
    PumpDrive,
    SteadyState,
    minimum_threshold,
    reflected_field,
    round_trip_coupling,
    round_trip_jacobian,
    solve_steady,
    _mode_solution_at,
    _scan_basis,
    _select_lowest,
    _threshold_matrix,
)

# port layout of the input-coupling matrix B (two quadratures each)
PORTS = ("pump_external", "pump_internal", "signal", "idler")


@dataclass(frozen=True)
class FluctuationModel:
    """Drift/input/output matrices of the linearized fluctuation dynamics.

    stable reflects the reference state's map spectral radius; an unstable
    reference still yields matrices (spectra from them are flagged lore,
    not physics).  Matrices are read-only shared state: evaluations at
    different (theta, f) never mutate them.
    """

    drift: np.ndarray  # 6x6 real, rad/s
    input_coupling: np.ndarray  # 6x8 real
    output_projection: np.ndarray  # 2x6 real
    feedthrough: np.ndarray  # 2x8 real
    tau: float
    kappa_ext: float
    kappa_internal: float
    state: SteadyState
    stable: bool
    spectral_abscissa: float

    def __post_init__(self):
        for name in ("drift", "input_coupling", "output_projection", "feedthrough"):
            getattr(self, name).setflags(write=False)


@dataclass(frozen=True)
class NoiseSpectrum:
    """S(theta) at one analysis frequency, shot = 1, with its extrema."""

    freq_hz: float
    theta: np.ndarray
    s: np.ndarray
    theta_min: float
    s_min: float
    s_intensity: float


def _map_residual(state, dets, t0, r0, r, chi_rt):
    """Relative defect of the state under one round trip of the mean-field maps."""
    e0, e1, e2 = state.e0, state.e1, state.e2
    e_in = state.drive.e_in
    n0 = t0 * e_in + r0 * (e0 - np.conj(chi_rt) * e1 * e2) * np.exp(1j * dets.phi0)
    n1 = r * (e1 + chi_rt * e0 * np.conj(e2)) * np.exp(1j * dets.phi1)
    n2 = r * (e2 + chi_rt * e0 * np.conj(e1)) * np.exp(1j * dets.phi2)
    scale = max(abs(e0), abs(e1), abs(e2), abs(e_in), 1.0)
    return max(abs(n0 - e0), abs(n1 - e1), abs(n2 - e2)) / scale


def linearize(state: SteadyState, cavity: CavitySpec, temp_c: float | None = None) -> FluctuationModel:
    """Fluctuation model around a solved steady state.

    Rates come from the same loss bookkeeping as the mean-field maps:
    drift = (J - I)/tau, and each port's noise amplitude is the square
    root of its symmetric decay share, so vacuum in gives vacuum out
    wherever there is no parametric gain.
    """
    if temp_c is None:
        temp_c = cavity.crystal.temperature_c
    dets = state.detunings
    t0, r0 = cavity.amplitude_pump_coefficients
    r = cavity.amplitude_ir_reflection
    chi_rt = round_trip_coupling(state.mode.coupling, cavity.crystal)
    residual = _map_residual(state, dets, t0, r0, r, chi_rt)
    if residual > 1e-10:
        raise DomainError(f"reference state residual {residual:.3g} exceeds 1e-10")
    tau = cavity.round_trip_time(state.drive.omega0, temp_c)

    jac = round_trip_jacobian(state.e0, state.e1, state.e2, dets, chi_rt, r0, r)
    drift = (jac - np.eye(6)) / tau

    two_kappa_ext = t0**2 / tau
    decay0 = 2.0 * (1.0 - r0 * math.cos(dets.phi0)) / tau
    two_kappa_int = decay0 - two_kappa_ext
    if two_kappa_int < -1e-12 * decay0:
        raise DomainError("pump coupler transmission exceeds the total pump decay")
    two_kappa_int = max(two_kappa_int, 0.0)

    b = np.zeros((6, 8))
    b[0:2, 0:2] = math.sqrt(two_kappa_ext) * np.eye(2)
    b[0:2, 2:4] = math.sqrt(two_kappa_int) * np.eye(2)
    for mode_i, phi in ((1, dets.phi1), (2, dets.phi2)):
        rate = 2.0 * (1.0 - r * math.cos(phi)) / tau
        b[2 * mode_i : 2 * mode_i + 2, 2 * mode_i + 2 : 2 * mode_i + 4] = math.sqrt(rate) * np.eye(2)

    c = np.zeros((2, 6))
    c[0, 0] = c[1, 1] = math.sqrt(two_kappa_ext)
    d = np.zeros((2, 8))
    d[0, 0] = d[1, 1] = -1.0

    eigs = np.linalg.eigvals(drift)
    abscissa = float(np.max(eigs.real))
    return FluctuationModel(
        drift=drift,
        input_coupling=b,
        output_projection=c,
        feedthrough=d,
        tau=float(tau),
        kappa_ext=two_kappa_ext / 2,
        kappa_internal=two_kappa_int / 2,
        state=state,
        stable=state.stable,
        spectral_abscissa=abscissa,
    )


def output_covariance(model: FluctuationModel, freq_hz: float) -> np.ndarray:
    """M(f) = Re[G G^dagger]: 2x2 quadrature covariance of the reflected pump.

    S(theta, f) = u_theta^T M u_theta; M is symmetric positive definite
    for any stable model and equals the identity for a passive cavity.
    """
    w = 2 * math.pi * float(freq_hz)
    lhs = 1j * w * np.eye(6) - model.drift
    try:
        x = np.linalg.solve(lhs, model.input_coupling.astype(complex))
    except np.linalg.LinAlgError:
        raise DomainError(
            "singular response (zero-frequency evaluation on a marginal state)"
        ) from None
    g = model.output_projection @ x + model.feedthrough
    return (g @ g.conj().T).real


def pump_quadrature_spectrum(model: FluctuationModel, theta, freq_hz):
    """S(theta, f) of the reflected pump, shot = 1; broadcasts over both args."""
    thetas = np.atleast_1d(np.asarray(theta, float))
    freqs = np.atleast_1d(np.asarray(freq_hz, float))
    if np.any(freqs < 0):
        raise DomainError("analysis frequency must be nonnegative")
    out = np.empty((freqs.size, thetas.size))
    for i, f in enumerate(freqs.ravel()):
        m = output_covariance(model, f)
        u = np.stack([np.cos(thetas), np.sin(thetas)])
        out[i] = np.einsum("ij,ik,kj->j", u, m, u)
    out = out.reshape(freqs.shape + thetas.shape)
    if np.isscalar(theta) or np.asarray(theta).shape == ():
        out = out[..., 0]
    if np.isscalar(freq_hz) or np.asarray(freq_hz).shape == ():
        out = out[0] if out.ndim else float(out)
    return float(out) if np.ndim(out) == 0 else out


def optimum_squeezing(model: FluctuationModel, freq_hz: float):
    """(theta_min, s_min): best quadrature of the reflected pump at f.

    With M = [[a, b], [b, c]], S(theta) = m + R cos(2 theta - phi_R),
    m = (a+c)/2, R = sqrt(((a-c)/2)^2 + b^2); the minimum sits at
    theta_min = (phi_R + pi)/2 mod pi with S_min = m - R.  No search.
    """
    m2 = output_covariance(model, freq_hz)
    a, b, c = m2[0, 0], m2[0, 1], m2[1, 1]
    mean = 0.5 * (a + c)
    radius = math.hypot(0.5 * (a - c), b)
    phi_r = math.atan2(b, 0.5 * (a - c))
    theta_min = ((phi_r + math.pi) / 2) % math.pi
    return theta_min, mean - radius


def intensity_noise(model: FluctuationModel, freq_hz: float, cavity: CavitySpec) -> float:
    """S at the quadrature aligned with the mean reflected pump field.

    Raises ImpedanceMatchedError when that mean field vanishes (the
    amplitude quadrature is undefined at an impedance-matched point).
    """
    mean_out = reflected_field(model.state, cavity)
    scale = max(abs(model.state.drive.e_in), 1.0)
    if abs(mean_out) <= 1e-9 * scale:
        raise ImpedanceMatchedError(
            "mean reflected pump vanishes: intensity quadrature undefined"
        )
    theta_i = math.atan2(mean_out.imag, mean_out.real)
    return float(pump_quadrature_spectrum(model, theta_i, freq_hz))


def noise_spectrum(
    model: FluctuationModel, freq_hz: float, cavity: CavitySpec, n_theta: int = 721
) -> NoiseSpectrum:
    """Densely sampled S(theta) at one frequency plus the closed-form optimum."""
    if n_theta < 8:
        raise UsageError("theta grid too coarse to be meaningful")
    theta = np.linspace(0.0, math.pi, n_theta)
    s = pump_quadrature_spectrum(model, theta, freq_hz)
    theta_min, s_min = optimum_squeezing(model, freq_hz)
    try:
        s_int = intensity_noise(model, freq_hz, cavity)
    except ImpedanceMatchedError:
        s_int = float("nan")
    return NoiseSpectrum(
        freq_hz=float(freq_hz),
        theta=theta,
        s=np.asarray(s),
        theta_min=theta_min,
        s_min=s_min,
        s_intensity=s_int,
    )


# -- squeezing versus cavity length ------------------------------------------


@dataclass
class SqueezingScanTrace:
    """Per-length optimum squeezing of the reflected pump along a scan."""

    lengths: np.ndarray
    s_min: np.ndarray
    theta_min: np.ndarray
    s_intensity: np.ndarray
    p_index: np.ndarray
    meta: dict = field(default_factory=dict)

    def write_csv(self, path):
        with open(path, "w") as fh:
            for key in sorted(self.meta):
                fh.write(f"# {key} = {self.meta[key]}\n")
            fh.write("L_offset_um,S_min,theta_min_rad,S_intensity\n")
            l0 = self.lengths[0]
            for i in range(len(self.lengths)):
                fh.write(
                    f"{(self.lengths[i] - l0) * 1e6:.9f},{self.s_min[i]:.12g},"
                    f"{self.theta_min[i]:.12g},{self.s_intensity[i]:.12g}\n"
                )


def squeezing_scan(
    window,
    temp_c: float,
    p_in_w: float,
    freq_hz: float,
    cavity: CavitySpec,
    omega0: float,
    step: float = 0.5e-9,
) -> SqueezingScanTrace:
    """Optimum squeezing, its angle, and intensity noise across a length scan.

    Mode selection is the lowest-threshold policy (noise spectra are
    steady-state objects; hysteresis adds nothing here).  Dark samples
    are exactly shot-limited: a passive detuned cavity driven by a
    coherent beam returns S = 1 at every angle, so S_min = S_intensity =
    1 and theta_min is reported as 0.
    """
    l_a, l_b = float(window[0]), float(window[1])
    if l_a == l_b:
        raise UsageError("scan window has zero width")
    if step <= 0:
        raise UsageError("scan step must be positive")
    n = int(round(abs(l_b - l_a) / step)) + 1
    if n > 2e5:
        raise UsageError("scan would exceed 200k samples; widen the step")
    lengths = np.linspace(l_a, l_b, n)
    l_ref = 0.5 * (l_a + l_b)
    ratio = max(2.0, p_in_w / minimum_threshold(cavity, omega0))
    basis = _scan_basis(cavity, temp_c, omega0, ratio, l_ref)
    p_th, delta, phi0 = _threshold_matrix(basis, lengths, cavity, omega0)
    drive = PumpDrive.from_power(p_in_w, omega0)

    s_min = np.ones(n)
    theta_min = np.zeros(n)
    s_int = np.ones(n)
    p_sel = np.full(n, -1, int)
    for i in range(n):
        j = _select_lowest(p_th[:, i], p_in_w, basis)
        if j < 0:
            continue
        mode = _mode_solution_at(basis, j, delta[j, i], phi0[i], cavity, temp_c, omega0)
        states = solve_steady(drive, mode.detunings, mode, cavity)
        nontrivial = [s for s in states if s.branch != "trivial" and s.stable]
        if not nontrivial:
            continue
        state = nontrivial[-1]
        model = linearize(state, cavity, temp_c=temp_c)
        theta_min[i], s_min[i] = optimum_squeezing(model, freq_hz)
        try:
            s_int[i] = intensity_noise(model, freq_hz, cavity)
        except ImpedanceMatchedError:
            s_int[i] = float("nan")
        p_sel[i] = basis.p[j]

    return SqueezingScanTrace(
        lengths=lengths,
        s_min=s_min,
        theta_min=theta_min,
        s_intensity=s_int,
        p_index=p_sel,
        meta={
            "freq_hz": f"{freq_hz:.9g}",
            "temp_c": f"{temp_c:.6f}",
            "p_in_w": f"{p_in_w:.9g}",
            "omega0": f"{omega0:.9g}",
            "step_m": f"{step:.3g}",
        },
    )
