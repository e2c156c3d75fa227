"""Standing-wave cavity geometry: phases, losses, resonances, filtering.

The cavity is a two-mirror linear resonator of geometric length L
containing a crystal of length l, so one round trip traverses the
crystal twice.  With mirror reflection phases set to zero (only phase
differences from resonance matter for every observable reproduced
here), the round-trip phase of a wave at angular frequency omega is

    phi = (2*omega/c) * [(L - l) + n(lam, T) * l]        (rad)

which is linear in L with slope 2*omega/c.  Mode structure compares
wrapped phases at the 1e-9 rad level on top of ~1e5 rad of absolute
propagation phase, so phases are accumulated in np.longdouble before
wrapping; float64 would leave only one spare decade.

Intensity losses are kept as an itemized ledger (coupler and end-mirror
transmission, mirror excess, four crystal-face passes, two bulk-
absorption passes for the pump) whose sum feeds the small-loss finesse
F = 2*pi/L_tot and whose amplitude product feeds the mean-field maps.

The pump-cleaning resonator upstream is reduced to a single-pole
Lorentzian noise filter locked on resonance:
S_out = 1 + (S_in - 1)/(1 + (f/f_c)^2), f_c = FSR/finesse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dispersion import C_LIGHT, CrystalSpec, refractive_index, group_index
from .errors import DomainError, NotFoundError, UsageError

# 80-bit pi; float64 pi would poison every longdouble wrap below.
PI_L = np.longdouble("3.14159265358979323846264338327950288")
TWO_PI_L = 2 * PI_L


def wrap_phase(phi):
    """Wrap to (-pi, pi], preserving longdouble precision."""
    w = phi - TWO_PI_L * np.floor(phi / TWO_PI_L + np.longdouble(0.5))
    # floor(x + 1/2) maps the upper boundary to -pi; the invariant wants +pi
    if w <= -PI_L:
        w = w + TWO_PI_L
    return w


@dataclass(frozen=True)
class MirrorSpec:
    """One mirror in one wavelength band; R + T + A = 1 with A the excess loss."""

    band: str
    reflection: float
    transmission: float

    def __post_init__(self):
        if self.band not in ("pump", "ir"):
            raise DomainError(f"unknown mirror band {self.band!r}")
        for name in ("reflection", "transmission"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"mirror {name} must lie in [0, 1]")
        if self.reflection + self.transmission > 1.0 + 1e-12:
            raise DomainError("mirror R + T exceeds unity")

    @property
    def excess(self) -> float:
        return max(0.0, 1.0 - self.reflection - self.transmission)


@dataclass(frozen=True)
class DetuningSet:
    """Round-trip phases (pump, signal, idler) wrapped to (-pi, pi].

    The unwrapped values are kept because the mode condition
    phi1 - phi2 = 2*p*pi lives on the unwrapped sheet.
    """

    phi0: float
    phi1: float
    phi2: float
    phi0_unwrapped: float
    phi1_unwrapped: float
    phi2_unwrapped: float

    def __post_init__(self):
        for w, u in (
            (self.phi0, self.phi0_unwrapped),
            (self.phi1, self.phi1_unwrapped),
            (self.phi2, self.phi2_unwrapped),
        ):
            if not -math.pi < w <= math.pi + 1e-15:
                raise DomainError(f"wrapped phase {w!r} outside (-pi, pi]")
            turns = (u - w) / (2 * math.pi)
            if abs(turns - round(turns)) > 1e-6:
                raise DomainError("unwrapped phase is not the wrapped value plus 2*pi*n")

    @classmethod
    def from_unwrapped(cls, u0, u1, u2):
        return cls(
            float(wrap_phase(np.longdouble(u0))),
            float(wrap_phase(np.longdouble(u1))),
            float(wrap_phase(np.longdouble(u2))),
            float(u0),
            float(u1),
            float(u2),
        )


@dataclass(frozen=True)
class FinesseResult:
    finesse: float
    total_loss: float
    ledger: dict = field(compare=False)


@dataclass(frozen=True)
class CavitySpec:
    """Linear cavity: geometric length, per-band mirror pairs, crystal."""

    length: float
    pump_in: MirrorSpec
    pump_end: MirrorSpec
    ir_in: MirrorSpec
    ir_end: MirrorSpec
    crystal: CrystalSpec

    def __post_init__(self):
        if self.length <= self.crystal.length:
            raise DomainError("cavity shorter than the crystal it contains")
        bands = (self.pump_in.band, self.pump_end.band, self.ir_in.band, self.ir_end.band)
        if bands != ("pump", "pump", "ir", "ir"):
            raise DomainError(f"mirror bands {bands} do not match their cavity roles")
        if not self.amplitude_ir_reflection < 1.0:
            raise DomainError("lossless IR round trip: not a resonator")
        t0, r0 = self.amplitude_pump_coefficients
        if t0 * t0 + r0 * r0 > 1.0 + 1e-12:
            raise DomainError("pump coupler bookkeeping exceeds unity")

    # -- amplitude coefficients used by the round-trip maps ---------------

    @property
    def amplitude_pump_coefficients(self):
        """(t0, r0): coupler transmission and lumped pump round-trip reflection."""
        x = self.crystal
        t0 = math.sqrt(self.pump_in.transmission)
        r0 = math.sqrt(
            self.pump_in.reflection
            * self.pump_end.reflection
            * (1.0 - x.face_loss_pump) ** 4
            * (1.0 - x.bulk_absorption_pump) ** 2
        )
        return t0, r0

    @property
    def amplitude_ir_reflection(self):
        """Common signal/idler amplitude factor r, all passive losses lumped."""
        x = self.crystal
        return math.sqrt(
            self.ir_in.reflection * self.ir_end.reflection * (1.0 - x.face_loss_ir) ** 4
        )

    def loss_ledger(self, band: str) -> dict:
        """Itemized intensity losses per round trip for one band."""
        x = self.crystal
        if band == "pump":
            return {
                "input_coupler_transmission": self.pump_in.transmission,
                "input_mirror_excess": self.pump_in.excess,
                "end_mirror_transmission": self.pump_end.transmission,
                "end_mirror_excess": self.pump_end.excess,
                "crystal_faces": 4.0 * x.face_loss_pump,
                "bulk_absorption": 2.0 * x.bulk_absorption_pump,
            }
        if band == "ir":
            return {
                "input_mirror_transmission": self.ir_in.transmission,
                "input_mirror_excess": self.ir_in.excess,
                "end_mirror_transmission": self.ir_end.transmission,
                "end_mirror_excess": self.ir_end.excess,
                "crystal_faces": 4.0 * x.face_loss_ir,
            }
        raise DomainError(f"unknown band {band!r}")

    # -- time and frequency scales ----------------------------------------

    def optical_path(self, omega, temp_c, dispersive=True):
        """One-way optical path (m); group index in the crystal when dispersive."""
        lam_um = 2 * np.pi * C_LIGHT / float(omega) * 1e6
        n = (group_index if dispersive else refractive_index)(
            lam_um, temp_c, self.crystal.sellmeier
        )
        return (self.length - self.crystal.length) + float(n) * self.crystal.length

    def round_trip_time(self, omega, temp_c):
        """Photon round-trip time 2 * group path / c (s)."""
        return 2.0 * self.optical_path(omega, temp_c) / C_LIGHT

    def free_spectral_range(self, omega, temp_c):
        """Resonance spacing in Hz near omega."""
        return 1.0 / self.round_trip_time(omega, temp_c)

    def bandwidth_hz(self, omega, temp_c):
        """Pump-band cavity FWHM = FSR / finesse, in Hz."""
        return self.free_spectral_range(omega, temp_c) / finesse("pump", self).finesse


def finesse(band: str, cavity: CavitySpec) -> FinesseResult:
    """Small-loss finesse F = 2*pi / L_tot with the itemized loss ledger."""
    ledger = cavity.loss_ledger(band)
    total = math.fsum(ledger.values())
    if not 0.0 < total < 1.0:
        raise DomainError(f"total round-trip loss {total:g} outside (0, 1): not a resonator")
    return FinesseResult(finesse=2 * math.pi / total, total_loss=total, ledger=ledger)


def round_trip_phase(omega, band: str, cavity: CavitySpec, temp_c):
    """(wrapped, unwrapped) round-trip phase at omega (rad/s) and T (deg C).

    band selects the mirror pair; with zero mirror phases both bands share
    the same propagation formula.  Computed in longdouble end to end: the
    absolute phase is ~1e5-1e6 rad and downstream solvers need the wrap
    to 1e-9 rad.
    """
    if band not in ("pump", "ir"):
        raise DomainError(f"unknown band {band!r}")
    om = np.longdouble(omega)
    lam_um = TWO_PI_L * C_LIGHT / om * np.longdouble(1e6)
    n = refractive_index(lam_um, np.longdouble(temp_c), cavity.crystal.sellmeier)
    path = (np.longdouble(cavity.length) - np.longdouble(cavity.crystal.length)) + n * np.longdouble(
        cavity.crystal.length
    )
    unwrapped = 2 * om / C_LIGHT * path
    return wrap_phase(unwrapped), unwrapped


def detuning_set(omega0, omega1, omega2, cavity: CavitySpec, temp_c) -> DetuningSet:
    """DetuningSet for a pump/signal/idler triple at one length and temperature."""
    w0, u0 = round_trip_phase(omega0, "pump", cavity, temp_c)
    w1, u1 = round_trip_phase(omega1, "ir", cavity, temp_c)
    w2, u2 = round_trip_phase(omega2, "ir", cavity, temp_c)
    return DetuningSet(float(w0), float(w1), float(w2), float(u0), float(u1), float(u2))


# -- mode frequency geometry ---------------------------------------------
#
# A mode p is the signal/idler pair with phi1 - phi2 = 2*p*pi on the
# unwrapped sheet.  With the convention omega1 >= omega2 and normal
# dispersion, phi1u - phi2u is strictly increasing in omega1, so p >= 0
# labels every distinct pair exactly once (p < 0 is the same pair with
# the labels swapped).


def _phase_difference(x, omega0, cavity, temp_c):
    # x = omega1 - omega0/2 >= 0, longdouble
    half = np.longdouble(omega0) / 2
    _, u1 = round_trip_phase(half + x, "ir", cavity, temp_c)
    _, u2 = round_trip_phase(half - x, "ir", cavity, temp_c)
    return u1 - u2


def _difference_slope(omega0, cavity, temp_c):
    # d(phi1u - phi2u)/dx at degeneracy: 2/c * [2*(L-l) + 2*ng*l]
    lam_um = 4 * np.pi * C_LIGHT / float(omega0) * 1e6
    ng = float(group_index(lam_um, temp_c, cavity.crystal.sellmeier))
    return (4.0 / C_LIGHT) * ((cavity.length - cavity.crystal.length) + ng * cavity.crystal.length)


def solve_mode_frequency(p: int, cavity: CavitySpec, temp_c, omega0, guess=None):
    """(omega1, omega2) with omega1 >= omega2 solving phi1 - phi2 = 2*p*pi.

    Secant iteration on the unwrapped phase difference, warm-startable via
    guess = previous omega1.  Raises NotFoundError when the pair would
    leave the dispersion validity window (that p has no mode here).
    """
    if p < 0:
        raise NotFoundError("mode indices are canonical with omega1 >= omega2, so p >= 0")
    half = np.longdouble(omega0) / 2
    target = 2 * PI_L * p
    if p == 0:
        # exact by symmetry, no iteration
        return float(half), float(half)

    model = cavity.crystal.sellmeier
    # largest splitting the window allows: idler wavelength at the red edge
    x_max = float(half) - 2 * np.pi * C_LIGHT / (model.wl_max_um * 1e-6)
    if x_max <= 0:
        raise NotFoundError("dispersion window cannot host any nondegenerate pair")

    slope = _difference_slope(omega0, cavity, temp_c)
    x = np.longdouble(guess) - half if guess is not None else np.longdouble(float(target) / slope)
    if not 0 < x < x_max:
        x = np.longdouble(min(float(target) / slope, 0.9 * x_max))

    f = _phase_difference(x, omega0, cavity, temp_c) - target
    dx = np.longdouble(max(1e3, abs(float(x)) * 1e-7))
    for _ in range(60):
        if abs(float(f)) < 1e-11:
            break
        deriv = (_phase_difference(x + dx, omega0, cavity, temp_c) - f - target) / dx
        step = f / deriv
        x_new = x - step
        if x_new <= 0:
            x_new = x / 2
        elif x_new >= x_max:
            x_new = (x + np.longdouble(x_max)) / 2
        x = x_new
        f = _phase_difference(x, omega0, cavity, temp_c) - target
        dx = np.longdouble(max(1.0, abs(float(step)) * 1e-3))
    else:
        raise NotFoundError(f"mode p={p} did not converge (residual {float(f):.3g} rad)")
    if abs(float(f)) > 1e-9:
        raise NotFoundError(f"mode p={p} residual {float(f):.3g} rad exceeds 1e-9")
    return float(half + x), float(half - x)


def double_resonance_lengths(temp_c, p, cavity: CavitySpec, window, omega0):
    """Lengths in window = (L_lo, L_hi) where the mode-p pair is doubly resonant.

    At fixed p the pair (omega1, omega2) adjusts with L; both IR phases are
    multiples of 2*pi exactly when the idler phase alone is (the difference
    is pinned to 2*p*pi).  phi2u(L) is strictly increasing, so each integer
    multiple of 2*pi in its range gives one length, found by bisection and
    polished to |wrapped phi| < 1e-9 rad.
    """
    lo, hi = float(window[0]), float(window[1])
    if not hi > lo:
        raise UsageError("double-resonance window must have positive width")
    if lo <= cavity.crystal.length:
        raise DomainError("window extends below the crystal length")

    import dataclasses as _dc

    def idler_phase(length):
        cav = _dc.replace(cavity, length=length)
        om1, om2 = solve_mode_frequency(p, cav, temp_c, omega0)
        _, u2 = round_trip_phase(om2, "ir", cav, temp_c)
        return u2

    u_lo = idler_phase(lo)
    u_hi = idler_phase(hi)
    m_first = int(np.ceil(float(u_lo / TWO_PI_L) - 1e-12))
    m_last = int(np.floor(float(u_hi / TWO_PI_L) + 1e-12))

    lengths = []
    for m in range(m_first, m_last + 1):
        target = TWO_PI_L * m
        a, b = lo, hi
        fa = u_lo - target
        for _ in range(200):
            mid = 0.5 * (a + b)
            fm = idler_phase(mid) - target
            if (fm < 0) == (fa < 0):
                a, fa = mid, fm
            else:
                b = mid
            if b - a < 1e-16:
                break
        root = 0.5 * (a + b)
        cav = _dc.replace(cavity, length=root)
        om1, om2 = solve_mode_frequency(p, cav, temp_c, omega0)
        w1, _ = round_trip_phase(om1, "ir", cav, temp_c)
        w2, _ = round_trip_phase(om2, "ir", cav, temp_c)
        if max(abs(float(w1)), abs(float(w2))) < 1e-9:
            lengths.append(root)
    return lengths


# -- pump-cleaning filter cavity -------------------------------------------


@dataclass(frozen=True)
class FilterCavitySpec:
    """Ring filter cavity reduced to a Lorentzian noise gate.

    finesse_measured, when given, overrides the mirror-derived value
    2*pi/sum(1 - R_i); high-finesse cavities are routinely limited by
    unmeasured mirror excess loss, so the measurement wins.
    """

    round_trip_length: float
    mirror_r1: float
    mirror_r2: float
    mirror_r3: float
    finesse_measured: float | None = None
    locked: bool = True

    def __post_init__(self):
        if self.round_trip_length <= 0:
            raise DomainError("filter round-trip length must be positive")
        for r in (self.mirror_r1, self.mirror_r2, self.mirror_r3):
            if not 0.0 < r < 1.0:
                raise DomainError("filter mirror reflectivities must lie in (0, 1)")
        if self.finesse <= 0:
            raise DomainError("filter finesse must be positive")

    @property
    def derived_finesse(self) -> float:
        loss = (1 - self.mirror_r1) + (1 - self.mirror_r2) + (1 - self.mirror_r3)
        return 2 * math.pi / loss

    @property
    def finesse(self) -> float:
        return self.finesse_measured if self.finesse_measured else self.derived_finesse

    @property
    def bandwidth_hz(self) -> float:
        return C_LIGHT / self.round_trip_length / self.finesse


def filter_noise_transmission(freq_hz, s_in, spec: FilterCavitySpec):
    """Noise (relative to shot = 1) after the resonant filter cavity.

    S_out = 1 + (S_in - 1) * |H|^2 with |H|^2 = 1 / (1 + (f/f_c)^2):
    excess noise is rolled off, shot noise passes untouched, and no
    frequency gains noise.  Broadcasts over freq_hz / s_in arrays.
    """
    if not spec.locked:
        raise DomainError("filter transmission is defined with the cavity locked on resonance")
    f = np.asarray(freq_hz, dtype=float)
    s = np.asarray(s_in, dtype=float)
    h2 = 1.0 / (1.0 + (f / spec.bandwidth_hz) ** 2)
    out = 1.0 + (s - 1.0) * h2
    return out if out.shape else float(out)
