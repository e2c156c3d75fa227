"""Intracavity mean fields, thresholds, mode competition, length scans.

The round-trip maps for the intracavity pump, signal and idler,
in photon-flux normalization (|E|^2 in photons/s),

    E0 -> t0*E_in + r0*(E0 - conj(chi)*E1*E2) * exp(i*phi0)
    E1 -> r*(E1 + chi*E0*conj(E2)) * exp(i*phi1)
    E2 -> r*(E2 + chi*E0*conj(E1)) * exp(i*phi2)

admit closed-form fixed points.  Oscillation requires phi1 = phi2 + 2*p*pi
(integer p), which makes the wrapped IR detunings equal, phi1 = phi2 = phi.
Eliminating (E1, E2) from the last two maps pins the intracavity pump to
the clamp modulus

    |E0|_c = |1 - r e^{i phi}| / (r |chi|),

independent of drive.  Writing E0 = |E0|_c e^{i beta}, E1 = E2 = m e^{i
sigma/2} (the relative IR phase is a free gauge), the pump map reduces to
one real quadratic in m^2:

    A2 m^4 + A1 m^2 + A0 = 0,
    A2 = r0^2 |chi|^2,
    A1 = 2 |E0|_c r0 |chi| |D0| cos(Psi - arg D0),
    A0 = |E0|_c^2 |D0|^2 - t0^2 |E_in|^2,

with D0 = 1 - r0 e^{i phi0} and Psi = phi0 + phi - arg(1 - r e^{i phi}).
A0 crosses zero exactly when the free intracavity pump t0 E_in / D0
reaches the clamp: that is the threshold.  Above it the quadratic has one
positive root; below it, two positive roots exist when cos(Psi - arg D0)
< 0 and the discriminant allows (the bistable pocket).

The crystal is traversed twice per round trip.  The return pass adds
coherently with residual phase theta = dkappa*l + psi relative to the
forward pass (psi is the fractional-period phase; the mirror gap drops
out of the mismatch combination), so the per-round-trip coupling is

    chi_rt = chi_single_pass * cos(theta/2) * exp(-i*theta/2).

At theta = pi the best compromise between the sinc envelope and the
pass-interference factor raises the minimum threshold by the classic
factor ~1.9 over a perfectly matched integer-period crystal.

Length scans linearize each mode's detuning in L around the window
center (the curvature term is < 1e-8 rad over a few um), which makes
mode competition a vectorized argmin over a (mode x length) threshold
matrix.  The sticky policy additionally tracks branch existence so a
mode survives into its bistable pocket before hopping.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .cavity import (
    CavitySpec,
    DetuningSet,
    PI_L,
    TWO_PI_L,
    detuning_set,
    round_trip_phase,
    solve_mode_frequency,
    wrap_phase,
)
from .dispersion import (
    C_LIGHT,
    HBAR,
    DEFF_TO_FLUX_COUPLING,
    CouplingResult,
    qpm_coupling,
    qpm_mismatch,
)
from .errors import DomainError, NotFoundError, UsageError

# -- domain types -----------------------------------------------------------


@dataclass(frozen=True)
class PumpDrive:
    """Input pump field; |e_in|^2 is photon flux so P = hbar*omega0*|e_in|^2."""

    e_in: complex
    power_w: float
    omega0: float

    def __post_init__(self):
        if self.power_w < 0:
            raise DomainError("pump power must be nonnegative")
        flux = abs(self.e_in) ** 2
        if abs(flux * HBAR * self.omega0 - self.power_w) > 1e-9 * max(self.power_w, 1e-30):
            raise DomainError("e_in inconsistent with power_w at this omega0")

    @classmethod
    def from_power(cls, power_w: float, omega0: float, phase: float = 0.0):
        if power_w < 0:
            raise DomainError("pump power must be nonnegative")
        amp = math.sqrt(power_w / (HBAR * omega0))
        return cls(e_in=amp * complex(math.cos(phase), math.sin(phase)), power_w=power_w, omega0=omega0)


@dataclass(frozen=True)
class ModeSolution:
    """One oscillation mode: frequency pair, detunings at a length, threshold."""

    p: int
    omega1: float
    omega2: float
    delta_nu_thz: float
    detunings: DetuningSet
    threshold_w: float
    coupling: CouplingResult
    phase_residual: float = 0.0

    def __post_init__(self):
        if self.omega1 < self.omega2:
            raise DomainError("mode convention requires omega1 >= omega2")
        if abs(self.phase_residual) > 1e-9:
            raise DomainError(f"mode condition residual {self.phase_residual:.3g} rad > 1e-9")
        if not self.threshold_w > 0:
            raise DomainError("threshold must be positive")


@dataclass(frozen=True)
class SteadyState:
    """One fixed point of the maps; residual is relative to the largest field.

    detunings are the phases the state was solved at (they may be a probe
    set distinct from mode.detunings); every linearization must reuse them.
    """

    e0: complex
    e1: complex
    e2: complex
    mode: ModeSolution
    drive: PumpDrive
    detunings: DetuningSet
    branch: str  # trivial | lower | upper
    stable: bool
    residual: float
    spectral_radius: float


@dataclass
class ScanTrace:
    """Cavity-length scan: per-sample selected mode and observables."""

    lengths: np.ndarray
    p_index: np.ndarray  # -1 where no mode oscillates
    signal_intensity: np.ndarray  # |E1|^2, photons/s
    reflected_mw: np.ndarray
    delta_nu_thz: np.ndarray
    hop_flags: np.ndarray
    hops: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def write_csv(self, path):
        with open(path, "w") as fh:
            for key in sorted(self.meta):
                fh.write(f"# {key} = {self.meta[key]}\n")
            fh.write("L_offset_um,p,dnu_THz,signal_intensity,reflected_pump_mW,hop_flag\n")
            l0 = self.lengths[0]
            for i in range(len(self.lengths)):
                fh.write(
                    f"{(self.lengths[i] - l0) * 1e6:.9f},{int(self.p_index[i])},"
                    f"{self.delta_nu_thz[i]:.12g},{self.signal_intensity[i]:.12g},"
                    f"{self.reflected_mw[i]:.12g},{int(self.hop_flags[i])}\n"
                )


# -- couplings and thresholds ----------------------------------------------


def round_trip_coupling(coupling: CouplingResult, crystal) -> complex:
    """Coherent two-pass coupling chi_rt = chi * cos(theta/2) * e^{-i theta/2}.

    theta = dkappa*l + fractional_period_phase is the phase of the return
    pass relative to the forward one: the grating slip accumulated across
    the crystal plus any residue of a non-integer period count.  theta = 0
    doubles the pass amplitudes in phase; theta = pi cancels them at the
    sinc peak and pushes the optimum off-mismatch.
    """
    theta = coupling.delta_kappa * crystal.length + crystal.fractional_period_phase
    return coupling.chi * math.cos(theta / 2) * complex(math.cos(theta / 2), -math.sin(theta / 2))


def clamp_pump(phi1: float, phi2: float, r: float, chi: complex) -> float:
    """Above-threshold intracavity pump modulus forced by the IR maps.

    |E0|_c = sqrt(|1 - r e^{i phi1}| * |1 - r e^{-i phi2}|) / (r |chi|);
    symmetric in phi1 <-> phi2, reduces to (1-r)/(r|chi|) on resonance.
    """
    if not 0.0 < r < 1.0:
        raise DomainError("IR amplitude reflection must lie in (0, 1)")
    mag = abs(chi)
    if mag == 0.0:
        raise DomainError("zero coupling: no oscillation at any pump power")
    g1 = abs(1.0 - r * complex(math.cos(phi1), math.sin(phi1)))
    g2 = abs(1.0 - r * complex(math.cos(phi2), -math.sin(phi2)))
    return math.sqrt(g1 * g2) / (r * mag)


def threshold(mode: ModeSolution, cavity: CavitySpec, omega0: float) -> float:
    """Smallest input power destabilizing the trivial branch for this mode.

    The free (undepleted) intracavity pump t0 E_in / (1 - r0 e^{i phi0})
    reaches the clamp modulus exactly when the largest eigenvalue of the
    IR fluctuation block crosses unit modulus, so

        P_th = hbar*omega0 * |E0|_c^2 * |1 - r0 e^{i phi0}|^2 / t0^2.
    """
    chi_rt = round_trip_coupling(mode.coupling, cavity.crystal)
    if chi_rt == 0:
        raise DomainError("zero round-trip coupling: threshold is infinite")
    t0, r0 = cavity.amplitude_pump_coefficients
    r = cavity.amplitude_ir_reflection
    d = mode.detunings
    e0c = clamp_pump(d.phi1, d.phi2, r, chi_rt)
    d0 = abs(1.0 - r0 * complex(math.cos(d.phi0), math.sin(d.phi0)))
    return HBAR * omega0 * (e0c * d0 / t0) ** 2


def dual_pass_envelope(u, psi: float = 0.0):
    """|sinc(u/2) * cos((u + psi)/2)|: round-trip coupling magnitude vs u = dkappa*l.

    With psi = 0 this collapses to |sinc(u)| (two passes act like one
    crystal of double length); broadcasting over u.
    """
    u = np.asarray(u, float)
    single = np.sinc(u / (2 * np.pi))
    out = np.abs(single * np.cos((u + psi) / 2))
    return out if out.shape else float(out)


def _best_envelope(psi: float):
    # global max of the two-pass envelope over the mismatch continuum
    grid = np.linspace(-4 * np.pi, 4 * np.pi, 4097)
    vals = dual_pass_envelope(grid, psi)
    i = int(np.argmax(vals))
    res = minimize_scalar(
        lambda u: -dual_pass_envelope(u, psi),
        bounds=(grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return float(-res.fun), float(res.x)


def minimum_threshold(cavity: CavitySpec, omega0: float, psi: float | None = None) -> float:
    """Global threshold minimum: all phases resonant, best reachable mismatch.

    Temperature and mode choice together sweep dkappa*l over the real line,
    so the best coupling is the envelope maximum at the crystal's
    fractional-period phase (psi defaults to the configured value).
    """
    crystal = cavity.crystal
    if psi is None:
        psi = crystal.fractional_period_phase
    g_max, _ = _best_envelope(psi)
    chi_peak = DEFF_TO_FLUX_COUPLING * crystal.d_eff * (2 / math.pi) * g_max
    t0, r0 = cavity.amplitude_pump_coefficients
    r = cavity.amplitude_ir_reflection
    e0c = (1.0 - r) / (r * chi_peak)
    return HBAR * omega0 * (e0c * (1.0 - r0) / t0) ** 2


def threshold_phase_penalty(cavity: CavitySpec, omega0: float, n_psi: int = 181):
    """Minimum-threshold penalty versus fractional-period phase.

    Returns (psi, penalty) arrays with penalty(psi) = P_min(psi)/P_min(0).
    The worst case sits at psi = pi, where the two crystal passes fight
    each other at the sinc peak.
    """
    if n_psi < 2:
        raise UsageError("need at least two psi samples")
    psis = np.linspace(0.0, 2 * np.pi, n_psi)
    base = minimum_threshold(cavity, omega0, psi=0.0)
    pen = np.array([minimum_threshold(cavity, omega0, psi=p) / base for p in psis])
    return psis, pen


def calibrate_flux_coupling(cavity: CavitySpec, omega0: float, p_th_target: float) -> float:
    """DEFF_TO_FLUX_COUPLING that puts the global minimum threshold at target.

    Inverts minimum_threshold at psi = 0, dkappa = 0:
    value = (pi/2) * (1-r)(1-r0) sqrt(hbar*omega0/P) / (r * t0 * d_eff).
    """
    t0, r0 = cavity.amplitude_pump_coefficients
    r = cavity.amplitude_ir_reflection
    return (
        (math.pi / 2)
        * (1.0 - r)
        * (1.0 - r0)
        * math.sqrt(HBAR * omega0 / p_th_target)
        / (r * t0 * cavity.crystal.d_eff)
    )


# -- fixed points ------------------------------------------------------------


def _map_once(e0, e1, e2, drive: PumpDrive, dets: DetuningSet, chi_rt, t0, r0, r):
    """One literal application of the three round-trip maps."""
    f0 = t0 * drive.e_in + r0 * np.exp(1j * dets.phi0) * (e0 - np.conj(chi_rt) * e1 * e2)
    f1 = r * np.exp(1j * dets.phi1) * (e1 + chi_rt * e0 * np.conj(e2))
    f2 = r * np.exp(1j * dets.phi2) * (e2 + chi_rt * e0 * np.conj(e1))
    return f0, f1, f2


def _wirtinger_block(alpha: complex, beta: complex) -> np.ndarray:
    # real 2x2 quadrature block of dF = alpha dE + beta d(conj E)
    return np.array(
        [
            [(alpha + beta).real, -(alpha - beta).imag],
            [(alpha + beta).imag, (alpha - beta).real],
        ]
    )


def round_trip_jacobian(e0, e1, e2, dets: DetuningSet, chi_rt, r0, r) -> np.ndarray:
    """Exact 6x6 real Jacobian of the maps in quadrature coordinates.

    Ordering (x0, y0, x1, y1, x2, y2) with E = x + i y.  The drive term is
    constant and drops out; conjugation couplings land in the beta slots
    of the Wirtinger blocks.
    """
    m0 = r0 * np.exp(1j * dets.phi0)
    m1 = r * np.exp(1j * dets.phi1)
    m2 = r * np.exp(1j * dets.phi2)
    cc = np.conj(chi_rt)
    jac = np.zeros((6, 6))

    def put(row, col, alpha, beta):
        jac[2 * row : 2 * row + 2, 2 * col : 2 * col + 2] = _wirtinger_block(alpha, beta)

    put(0, 0, m0, 0.0)
    put(0, 1, -m0 * cc * e2, 0.0)
    put(0, 2, -m0 * cc * e1, 0.0)
    put(1, 0, m1 * chi_rt * np.conj(e2), 0.0)
    put(1, 1, m1, 0.0)
    put(1, 2, 0.0, m1 * chi_rt * e0)
    put(2, 0, m2 * chi_rt * np.conj(e1), 0.0)
    put(2, 1, 0.0, m2 * chi_rt * e0)
    put(2, 2, m2, 0.0)
    return jac


def _quadratic_coefficients(drive: PumpDrive, phi0: float, phi: float, chi_rt, t0, r0, r):
    """A2 m^4 + A1 m^2 + A0 = 0 for the nontrivial branches; plus phase data."""
    e0c = clamp_pump(phi, phi, r, chi_rt)
    d0 = 1.0 - r0 * complex(math.cos(phi0), math.sin(phi0))
    loop = 1.0 - r * complex(math.cos(phi), math.sin(phi))
    psi_drive = phi0 + phi - np.angle(loop)
    a2 = (r0 * abs(chi_rt)) ** 2
    a1 = 2.0 * e0c * r0 * abs(chi_rt) * abs(d0) * math.cos(psi_drive - np.angle(d0))
    a0 = (e0c * abs(d0)) ** 2 - t0**2 * abs(drive.e_in) ** 2
    return a2, a1, a0, e0c, d0, loop, psi_drive


def _positive_roots(a2, a1, a0):
    disc = a1 * a1 - 4.0 * a2 * a0
    if disc < 0.0:
        return []
    if a1 == 0.0:
        return [math.sqrt(-a0 / a2)] if a0 < 0.0 else []
    # stable quadratic: large-magnitude root via q, small one via a0/q
    q = -0.5 * (a1 + math.copysign(math.sqrt(disc), a1))
    return sorted({u for u in (q / a2, a0 / q) if u > 0.0})


def nontrivial_branch_exists(drive: PumpDrive, phi0: float, phi: float, chi_rt, cavity) -> bool:
    """True when the quadratic admits a positive m^2 (oscillation or bistable pocket)."""
    t0, r0 = cavity.amplitude_pump_coefficients
    r = cavity.amplitude_ir_reflection
    a2, a1, a0, *_ = _quadratic_coefficients(drive, phi0, phi, chi_rt, t0, r0, r)
    return len(_positive_roots(a2, a1, a0)) > 0


def solve_steady(drive: PumpDrive, detunings: DetuningSet, mode: ModeSolution, cavity: CavitySpec):
    """All steady states at this drive/detuning: trivial plus nontrivial branches.

    The trivial branch (E1 = E2 = 0) always exists.  Each positive root
    m^2 of the reduced quadratic yields one nontrivial branch with the
    symmetric gauge E1 = E2 = m e^{i sigma/2}.  Stability is the spectral
    radius of the exact round-trip Jacobian (gauge rotation contributes a
    unit eigenvalue above threshold; the tolerance absorbs it).
    """
    gap = (detunings.phi1 - detunings.phi2 + math.pi) % (2 * math.pi) - math.pi
    if abs(gap) > 1e-9:
        raise DomainError("oscillating solutions require equal wrapped IR detunings")
    t0, r0 = cavity.amplitude_pump_coefficients
    r = cavity.amplitude_ir_reflection
    chi_rt = round_trip_coupling(mode.coupling, cavity.crystal)
    if chi_rt == 0:
        raise DomainError("zero round-trip coupling")
    phi0 = detunings.phi0
    phi = detunings.phi2 + 0.5 * gap

    d0 = 1.0 - r0 * complex(math.cos(phi0), math.sin(phi0))
    states = []

    def finish(e0, e1, e2, branch):
        f0, f1, f2 = _map_once(e0, e1, e2, drive, detunings, chi_rt, t0, r0, r)
        scale = max(1.0, abs(e0), abs(e1), abs(e2))
        residual = max(abs(f0 - e0), abs(f1 - e1), abs(f2 - e2)) / scale
        jac = round_trip_jacobian(e0, e1, e2, detunings, chi_rt, r0, r)
        radius = float(np.max(np.abs(np.linalg.eigvals(jac))))
        states.append(
            SteadyState(
                e0=complex(e0),
                e1=complex(e1),
                e2=complex(e2),
                mode=mode,
                drive=drive,
                detunings=detunings,
                branch=branch,
                stable=radius <= 1.0 + 1e-9,
                residual=float(residual),
                spectral_radius=radius,
            )
        )

    finish(t0 * drive.e_in / d0, 0.0, 0.0, "trivial")

    if drive.e_in != 0:
        a2, a1, a0, e0c, d0, loop, psi_drive = _quadratic_coefficients(
            drive, phi0, phi, chi_rt, t0, r0, r
        )
        roots = _positive_roots(a2, a1, a0)
        tags = ["upper"] if len(roots) == 1 else ["lower", "upper"]
        for m2, tag in zip(roots, tags):
            vec = d0 * e0c + r0 * abs(chi_rt) * m2 * complex(
                math.cos(psi_drive), math.sin(psi_drive)
            )
            beta = np.angle(t0 * drive.e_in) - np.angle(vec)
            e0 = e0c * complex(math.cos(beta), math.sin(beta))
            sigma = phi + np.angle(chi_rt) + beta - np.angle(loop)
            amp = math.sqrt(m2)
            e1 = e2 = amp * complex(math.cos(sigma / 2), math.sin(sigma / 2))
            finish(e0, e1, e2, tag)

    return states


def reflected_field(state: SteadyState, cavity: CavitySpec) -> complex:
    """Mean reflected pump amplitude at the coupler output.

    Beamsplitter convention E_out = t0*E_circ - r0*E_in with E_circ the
    intracavity field arriving at the coupler: E_circ = (E0 - t0 E_in)/r0.
    """
    t0, r0 = cavity.amplitude_pump_coefficients
    circ = (state.e0 - t0 * state.drive.e_in) / r0
    return t0 * circ - r0 * state.drive.e_in


def reflected_power_w(state: SteadyState, cavity: CavitySpec) -> float:
    return HBAR * state.drive.omega0 * abs(reflected_field(state, cavity)) ** 2


def conversion_ledger(state: SteadyState, cavity: CavitySpec) -> dict:
    """Per-round-trip photon bookkeeping of the conversion step.

    The maps deposit the conversion inside the loss/phase factor, so the
    step E -> E + chi E E' has the exact quadratic defect

        gain(signal) - depletion(pump) = |chi|^2 (|E0 E2|^2 + |E1 E2|^2);

    pair counting (one pump photon <-> one signal plus one idler photon)
    balances to that same order.  All terms are returned so tests can pin
    the exact identities instead of a loose approximate one.
    """
    chi_rt = round_trip_coupling(state.mode.coupling, cavity.crystal)
    e0, e1, e2 = state.e0, state.e1, state.e2
    g0 = e0 - np.conj(chi_rt) * e1 * e2
    g1 = e1 + chi_rt * e0 * np.conj(e2)
    g2 = e2 + chi_rt * e0 * np.conj(e1)
    gain1 = abs(g1) ** 2 - abs(e1) ** 2
    gain2 = abs(g2) ** 2 - abs(e2) ** 2
    depletion = abs(e0) ** 2 - abs(g0) ** 2
    defect = abs(chi_rt) ** 2 * (abs(e0 * e2) ** 2 + abs(e1 * e2) ** 2)
    return {
        "signal_gain": gain1,
        "idler_gain": gain2,
        "pump_depletion": depletion,
        "quadratic_defect": defect,
    }


# -- mode catalogs -----------------------------------------------------------


def _gvd_curvature(cavity: CavitySpec, temp_c: float, omega0: float) -> float:
    """|k''| * l at the degenerate IR frequency (rad per (rad/s)^2)."""
    model = cavity.crystal.sellmeier
    half = omega0 / 2
    h = half * 1e-5
    from .dispersion import wavevector

    k = [float(wavevector(half + s * h, temp_c, model)) for s in (-1, 0, 1)]
    kpp = (k[0] - 2 * k[1] + k[2]) / h**2
    return abs(kpp) * cavity.crystal.length


def _auto_p_max(cavity: CavitySpec, temp_c: float, omega0: float, pump_ratio: float) -> int:
    """Smallest mode range covering everything that can oscillate at this drive.

    A mode oscillates only if its envelope satisfies G^2 >= 1/ratio;
    G falls off along u = dkappa*l = dkappa_deg*l + |k''| l x^2, so the
    envelope bound caps the frequency offset x and hence p.  The second
    envelope lobe needs ratios beyond ~50 and is excluded by contract.
    """
    ratio = max(float(pump_ratio), 1.05)
    if ratio > 50:
        raise DomainError("mode range heuristic assumes pump below 50x threshold")
    psi = cavity.crystal.fractional_period_phase
    g_floor = 1.0 / math.sqrt(ratio)
    g_max, u_peak = _best_envelope(psi)
    # walk outward from the peak to where the envelope dives under the floor
    u = u_peak
    step = 0.05
    while dual_pass_envelope(u, psi) >= g_floor * g_max and u < u_peak + 2 * np.pi:
        u += step
    half = omega0 / 2
    dk_deg = float(qpm_mismatch(half, half, temp_c, cavity.crystal)) * cavity.crystal.length
    curvature = _gvd_curvature(cavity, temp_c, omega0)
    u_reach = abs(u - dk_deg) + abs(u_peak) + 1.0
    x_bound = math.sqrt(u_reach / curvature)
    from .cavity import _phase_difference

    dphi = float(_phase_difference(np.longdouble(x_bound), omega0, cavity, temp_c))
    return max(2, int(math.ceil(dphi / (2 * math.pi))) + 2)


def mode_catalog(
    length: float,
    temp_c: float,
    p_range,
    cavity: CavitySpec,
    omega0: float,
    pump_ratio: float = 16.0,
):
    """ModeSolutions at one cavity length, sorted by ascending threshold.

    p_range is an iterable of mode indices, or None to span every mode
    whose coupling envelope allows oscillation below pump_ratio times the
    global minimum threshold.  Indices without a root in the dispersion
    window are omitted.
    """
    cav = dataclasses.replace(cavity, length=float(length))
    if p_range is None:
        p_range = range(0, _auto_p_max(cav, temp_c, omega0, pump_ratio) + 1)
    modes = []
    guess = None
    for p in sorted(set(int(p) for p in p_range)):
        if p < 0:
            continue
        try:
            om1, om2 = solve_mode_frequency(p, cav, temp_c, omega0, guess=guess)
        except NotFoundError:
            break
        guess = om1
        dets = detuning_set(omega0, om1, om2, cav, temp_c)
        residual = (dets.phi1_unwrapped - dets.phi2_unwrapped) - 2 * math.pi * p
        coupling = qpm_coupling(om1, om2, cav.crystal, temp_c=temp_c)
        mode = ModeSolution(
            p=p,
            omega1=om1,
            omega2=om2,
            delta_nu_thz=(om1 - om2) / (2 * math.pi * 1e12),
            detunings=dets,
            threshold_w=1.0,  # placeholder, replaced below
            coupling=coupling,
            phase_residual=float(residual),
        )
        p_th = threshold(mode, cav, omega0)
        modes.append(dataclasses.replace(mode, threshold_w=p_th))
    modes.sort(key=lambda m: (m.threshold_w, m.p, m.omega1))
    return modes


# -- length scans ------------------------------------------------------------


@dataclass
class _ScanBasis:
    """Per-mode linearization of detunings about the window center."""

    p: np.ndarray
    omega1: np.ndarray
    omega2: np.ndarray
    delta_base: np.ndarray  # wrapped IR detuning at L_ref
    delta_slope: np.ndarray  # d(delta)/dL
    phi0_base: float
    phi0_slope: float
    chi_rt: np.ndarray  # complex round-trip coupling per mode
    l_ref: float


def _scan_basis(cavity, temp_c, omega0, pump_ratio, l_ref) -> _ScanBasis:
    from .cavity import _difference_slope

    cav = dataclasses.replace(cavity, length=float(l_ref))
    p_max = _auto_p_max(cav, temp_c, omega0, pump_ratio)
    slope_diff = _difference_slope(omega0, cav, temp_c)
    crystal = cav.crystal

    ps, om1s, om2s, base, slope, chis = [], [], [], [], [], []
    guess = None
    for p in range(0, p_max + 1):
        try:
            om1, om2 = solve_mode_frequency(p, cav, temp_c, omega0, guess=guess)
        except NotFoundError:
            break
        guess = om1
        _, u2 = round_trip_phase(om2, "ir", cav, temp_c)
        delta0 = float(wrap_phase(u2))
        lam2_um = 2 * np.pi * C_LIGHT / om2 * 1e6
        from .dispersion import group_index

        g2 = (2.0 / C_LIGHT) * (
            (cav.length - crystal.length)
            + float(group_index(lam2_um, temp_c, crystal.sellmeier)) * crystal.length
        )
        # the pair re-solves as L moves: d(omega1)/dL = -2(omega1-omega2)/(c*slope_diff)
        dw1_dl = -2.0 * (om1 - om2) / (C_LIGHT * slope_diff)
        d_slope = 2.0 * om2 / C_LIGHT + g2 * (-dw1_dl)
        coupling = qpm_coupling(om1, om2, crystal, temp_c=temp_c)
        ps.append(p)
        om1s.append(om1)
        om2s.append(om2)
        base.append(delta0)
        slope.append(d_slope)
        chis.append(round_trip_coupling(coupling, crystal))

    w0, u0 = round_trip_phase(omega0, "pump", cav, temp_c)
    return _ScanBasis(
        p=np.array(ps, int),
        omega1=np.array(om1s),
        omega2=np.array(om2s),
        delta_base=np.array(base),
        delta_slope=np.array(slope),
        phi0_base=float(w0),
        phi0_slope=2.0 * omega0 / C_LIGHT,
        chi_rt=np.array(chis, complex),
        l_ref=float(l_ref),
    )


def _wrap_pi(arr):
    return (np.asarray(arr) + np.pi) % (2 * np.pi) - np.pi


def _threshold_matrix(basis: _ScanBasis, lengths, cavity, omega0):
    """(n_modes x n_L) thresholds and the detunings used to build them."""
    t0, r0 = cavity.amplitude_pump_coefficients
    r = cavity.amplitude_ir_reflection
    dl = np.asarray(lengths) - basis.l_ref
    delta = _wrap_pi(basis.delta_base[:, None] + basis.delta_slope[:, None] * dl[None, :])
    phi0 = _wrap_pi(basis.phi0_base + basis.phi0_slope * dl)
    loop_ir = np.abs(1.0 - r * np.exp(1j * delta))
    e0c = loop_ir / (r * np.abs(basis.chi_rt)[:, None])
    d0 = np.abs(1.0 - r0 * np.exp(1j * phi0))
    p_th = HBAR * omega0 * (e0c * d0[None, :] / t0) ** 2
    return p_th, delta, phi0


def _mode_solution_at(basis, j, delta, phi0, cavity, temp_c, omega0):
    """Synthesize the ModeSolution for basis mode j at linearized detunings."""
    p = int(basis.p[j])
    # _wrap_pi lands in [-pi, pi); DetuningSet wants the (-pi, pi] convention
    delta = float(delta) if delta > -math.pi else float(delta) + 2 * math.pi
    phi0 = float(phi0) if phi0 > -math.pi else float(phi0) + 2 * math.pi
    dets = DetuningSet(
        phi0=float(phi0),
        phi1=float(delta),
        phi2=float(delta),
        phi0_unwrapped=float(phi0),
        phi1_unwrapped=float(delta) + 2 * math.pi * p,
        phi2_unwrapped=float(delta),
    )
    coupling = qpm_coupling(basis.omega1[j], basis.omega2[j], cavity.crystal, temp_c=temp_c)
    mode = ModeSolution(
        p=p,
        omega1=float(basis.omega1[j]),
        omega2=float(basis.omega2[j]),
        delta_nu_thz=float(basis.omega1[j] - basis.omega2[j]) / (2 * math.pi * 1e12),
        detunings=dets,
        threshold_w=1.0,
        coupling=coupling,
    )
    return dataclasses.replace(mode, threshold_w=threshold(mode, cavity, omega0))


def _select_lowest(p_th_column, p_in, basis):
    """Index of the lowest-threshold oscillating mode, or -1.

    Ties within 1e-9 relative break to the lower p, then lower omega1.
    """
    feasible = np.nonzero(p_th_column <= p_in)[0]
    if feasible.size == 0:
        return -1
    best = feasible[np.argmin(p_th_column[feasible])]
    tie = feasible[p_th_column[feasible] <= p_th_column[best] * (1 + 1e-9)]
    order = sorted(tie, key=lambda j: (basis.p[j], basis.omega1[j]))
    return int(order[0])


def scan_cavity(
    window,
    temp_c: float,
    p_in_w: float,
    policy: str,
    cavity: CavitySpec,
    omega0: float,
    step: float = 0.5e-9,
    pump_ratio_hint: float | None = None,
) -> ScanTrace:
    """Sweep cavity length across window = (L_lo, L_hi) at fixed temperature.

    policy 'lowest-threshold' re-selects the global argmin at every sample
    (direction-free envelope); 'sticky' rides the current mode while its
    nontrivial branch survives, then hops to the instantaneous
    lowest-threshold mode, which is what produces hysteresis.  Scanning
    right-to-left is expressed by a reversed window (L_lo > L_hi).
    """
    if policy not in ("lowest-threshold", "sticky"):
        raise UsageError(f"unknown scan policy {policy!r}")
    l_a, l_b = float(window[0]), float(window[1])
    if l_a == l_b:
        raise UsageError("scan window has zero width")
    if step <= 0:
        raise UsageError("scan step must be positive")
    if abs(l_b - l_a) / step > 2e5:
        raise UsageError("scan would exceed 200k samples; widen the step")
    if step > 0.1 * C_LIGHT / (2 * omega0):
        raise UsageError("step too coarse: round-trip phases move > 0.1 rad per sample")

    n = int(round(abs(l_b - l_a) / step)) + 1
    lengths = np.linspace(l_a, l_b, n)
    l_ref = 0.5 * (l_a + l_b)
    ratio_hint = pump_ratio_hint or max(2.0, p_in_w / minimum_threshold(cavity, omega0))
    basis = _scan_basis(cavity, temp_c, omega0, ratio_hint, l_ref)
    if basis.p.size == 0:
        raise DomainError("no modes found in the dispersion window")
    p_th, delta, phi0 = _threshold_matrix(basis, lengths, cavity, omega0)

    drive = PumpDrive.from_power(p_in_w, omega0)
    p_sel = np.full(n, -1, int)
    hop_flags = np.zeros(n, bool)
    signal = np.zeros(n)
    refl = np.zeros(n)
    dnu = np.zeros(n)
    hops = []

    current = -1  # basis row of the sticky mode, -1 = dark
    for i in range(n):
        column = p_th[:, i]
        if policy == "lowest-threshold":
            j = _select_lowest(column, p_in_w, basis)
        else:
            j = current
            if j >= 0:
                chi_rt = basis.chi_rt[j]
                alive = nontrivial_branch_exists(
                    drive, float(phi0[i]), float(delta[j, i]), chi_rt, cavity
                )
                if not alive:
                    j = -1
            if j < 0:
                j = _select_lowest(column, p_in_w, basis)
        if j != current and i > 0:
            hop_flags[i] = True
            hops.append(
                {
                    "index": i,
                    "from_p": int(basis.p[current]) if current >= 0 else None,
                    "to_p": int(basis.p[j]) if j >= 0 else None,
                }
            )
        current = j
        if j < 0:
            # dark sample: reflected pump of the passive detuned cavity
            mode0 = _mode_solution_at(basis, 0, delta[0, i], phi0[i], cavity, temp_c, omega0)
            states = solve_steady(drive, mode0.detunings, mode0, cavity)
            refl[i] = reflected_power_w(states[0], cavity) * 1e3
            continue
        mode = _mode_solution_at(basis, j, delta[j, i], phi0[i], cavity, temp_c, omega0)
        states = solve_steady(drive, mode.detunings, mode, cavity)
        nontrivial = [s for s in states if s.branch != "trivial"]
        if not nontrivial:
            # selection said oscillating; numerical edge, treat as dark
            p_sel[i] = -1
            refl[i] = reflected_power_w(states[0], cavity) * 1e3
            current = -1
            continue
        state = nontrivial[-1]  # upper branch
        p_sel[i] = basis.p[j]
        signal[i] = abs(state.e1) ** 2
        refl[i] = reflected_power_w(state, cavity) * 1e3
        dnu[i] = mode.delta_nu_thz

    return ScanTrace(
        lengths=lengths,
        p_index=p_sel,
        signal_intensity=signal,
        reflected_mw=refl,
        delta_nu_thz=dnu,
        hop_flags=hop_flags,
        hops=hops,
        meta={
            "policy": policy,
            "temp_c": f"{temp_c:.6f}",
            "p_in_w": f"{p_in_w:.9g}",
            "omega0": f"{omega0:.9g}",
            "step_m": f"{step:.3g}",
        },
    )
