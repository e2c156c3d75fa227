"""Temperature-dependent dispersion and quasi-phase-matched coupling.

Extraordinary index of congruent lithium niobate from a Sellmeier fit
with a quadratic temperature parameter f = (T - 24.5)(T + 570.82),

    n^2 = a1 + b1 f + (a2 + b2 f) / (lam^2 - (a3 + b3 f)^2)
        + (a4 + b4 f) / (lam^2 - a5^2) - a6 lam^2

with lam in um and T in deg C.  The coefficients are configuration
data (see data/default.ini), not code, so alternative published fits
can be swapped without touching this module.

Wavevectors are k = n(lam, T) * omega / c in rad/m.  For a poling
period Lambda the first-order grating momentum 2*pi/Lambda turns the
bulk mismatch dk = k0 - k1 - k2 into

    dkappa = k0 - k1 - k2 - 2*pi/Lambda(T),

and the single-pass effective coupling acquires the usual reduced
magnitude and phase-slip factor

    chi = chi2 * (2/pi) * sinc(dkappa*l/2) * exp(-i*dkappa*l/2).

All functions preserve the floating dtype of their inputs: the
mode-structure solvers feed np.longdouble through this module because
round-trip phases are compared at the 1e-9 rad level on top of ~1e5
rad of absolute phase, which is right at the edge of float64.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, NotFoundError

C_LIGHT = 299792458.0  # m/s
HBAR = 1.054571817e-34  # J s

# Calibrated scale turning the tabulated d_eff (m/V) into the photon-flux
# coupling of the round-trip maps (units sqrt(s)).  All mode-overlap and
# impedance factors are absorbed here; the value is frozen so the reference
# cavity in data/default.ini oscillates at exactly 300 uW minimum threshold.
# steady_state.calibrate_flux_coupling recomputes it from first principles.
DEFF_TO_FLUX_COUPLING = 4.673597455654192


@dataclass(frozen=True)
class SellmeierModel:
    """Coefficient set for the extraordinary index plus its validity window."""

    a1: float
    a2: float
    a3: float
    a4: float
    a5: float
    a6: float
    b1: float
    b2: float
    b3: float
    b4: float
    wl_min_um: float = 0.4
    wl_max_um: float = 5.0
    temp_min_c: float = 10.0
    temp_max_c: float = 350.0

    def check_window(self, lam_um, temp_c):
        lam = np.asarray(lam_um)
        t = np.asarray(temp_c)
        if np.any(lam < self.wl_min_um) or np.any(lam > self.wl_max_um):
            bad = float(np.min(lam)) if np.any(lam < self.wl_min_um) else float(np.max(lam))
            raise DomainError(
                f"wavelength {bad:g} um outside Sellmeier validity window "
                f"[{self.wl_min_um:g}, {self.wl_max_um:g}] um"
            )
        if np.any(t < self.temp_min_c) or np.any(t > self.temp_max_c):
            bad = float(np.min(t)) if np.any(t < self.temp_min_c) else float(np.max(t))
            raise DomainError(
                f"temperature {bad:g} C outside Sellmeier validity window "
                f"[{self.temp_min_c:g}, {self.temp_max_c:g}] C"
            )


def refractive_index(lam_um, temp_c, model: SellmeierModel):
    """Extraordinary index n_e(lam, T); lam in um, T in deg C.

    Pure and deterministic; broadcasts over numpy arrays and keeps the
    input dtype (longdouble in, longdouble out).
    """
    model.check_window(lam_um, temp_c)
    lam = np.asanyarray(lam_um)
    t = np.asanyarray(temp_c)
    f = (t - 24.5) * (t + 570.82)
    lam2 = lam * lam
    n2 = (
        model.a1
        + model.b1 * f
        + (model.a2 + model.b2 * f) / (lam2 - (model.a3 + model.b3 * f) ** 2)
        + (model.a4 + model.b4 * f) / (lam2 - model.a5**2)
        - model.a6 * lam2
    )
    return np.sqrt(n2)


def wavevector(omega, temp_c, model: SellmeierModel):
    """k = n * omega / c in rad/m for angular frequency omega (rad/s)."""
    om = np.asanyarray(omega)
    if np.any(om <= 0):
        raise DomainError("angular frequency must be positive")
    lam_um = 2 * np.pi * C_LIGHT / om * 1e6
    return refractive_index(lam_um, temp_c, model) * om / C_LIGHT


def group_index(lam_um, temp_c, model: SellmeierModel):
    """n_g = n - lam * dn/dlam, central difference with h = 1e-4 um.

    The fit is a smooth rational function of lam^2, so a fixed small step
    is accurate to ~1e-10 here; good enough for round-trip times and mode
    spacings, which only need n_g at the percent level.
    """
    h = 1e-4
    lam = np.asanyarray(lam_um)
    n = refractive_index(lam, temp_c, model)
    dn = (refractive_index(lam + h, temp_c, model) - refractive_index(lam - h, temp_c, model)) / (
        2 * h
    )
    return n - lam * dn


@dataclass(frozen=True)
class CrystalSpec:
    """Periodically poled crystal: geometry, losses and coupling inputs.

    length and grating_period in m; d_eff in m/V (calibration input, see
    DEFF_TO_FLUX_COUPLING); loss fields are per-face / per-pass intensity
    fractions.  fractional_period_phase is the residual relative phase
    (rad) left by a non-integer number of poling periods; it never enters
    the sinc envelope (the associated coupling correction is smaller by
    ~Lambda/l) but it does shift the inter-pass phase in a standing-wave
    cavity, which is what raises the threshold.
    """

    length: float
    grating_period: float
    d_eff: float
    sellmeier: SellmeierModel
    temperature_c: float
    face_loss_pump: float = 0.0
    face_loss_ir: float = 0.0
    bulk_absorption_pump: float = 0.0
    fractional_period_phase: float = 0.0
    # Poling rides on the crystal lattice: the period specified at
    # grating_expansion_ref_c dilates linearly with temperature.
    grating_expansion_per_k: float = 1.54e-5
    grating_expansion_ref_c: float = 25.0

    def __post_init__(self):
        if self.length <= 0 or self.grating_period <= 0:
            raise DomainError("crystal length and grating period must be positive")
        if self.length / self.grating_period < 10:
            raise DomainError("grating period must be much shorter than the crystal")
        for name in ("face_loss_pump", "face_loss_ir", "bulk_absorption_pump"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise DomainError(f"{name} must lie in [0, 1)")

    def grating_period_at(self, temp_c):
        """Poling period at temperature T, expanded from the reference value."""
        return self.grating_period * (
            1.0 + self.grating_expansion_per_k * (np.asanyarray(temp_c) - self.grating_expansion_ref_c)
        )


@dataclass(frozen=True)
class CouplingResult:
    """Mismatches and effective couplings for one (omega1, omega2) pair.

    delta_k / delta_kappa in rad/m; chi and chi_bulk carry the flux
    normalization of the round-trip maps (|E|^2 in photons/s), so that
    chi * E0 * E2 has the units of a field amplitude.
    """

    delta_k: float
    delta_kappa: float
    chi: complex
    chi_bulk: complex


def _pair_check(omega1, omega2):
    if np.any(np.asarray(omega1) <= 0) or np.any(np.asarray(omega2) <= 0):
        raise DomainError("signal and idler frequencies must be positive")


def qpm_mismatch(omega1, omega2, temp_c, crystal: CrystalSpec):
    """Grating-compensated mismatch dkappa = k0 - k1 - k2 - 2*pi/Lambda(T).

    omega0 = omega1 + omega2 by construction; symmetric in omega1 <-> omega2.
    """
    _pair_check(omega1, omega2)
    om1 = np.asanyarray(omega1)
    om2 = np.asanyarray(omega2)
    om0 = om1 + om2
    model = crystal.sellmeier
    k0 = wavevector(om0, temp_c, model)
    k1 = wavevector(om1, temp_c, model)
    k2 = wavevector(om2, temp_c, model)
    return k0 - k1 - k2 - 2 * np.pi / crystal.grating_period_at(temp_c)


def _sinc(x):
    # sin(x)/x with the numpy normalization hidden
    return np.sinc(np.asanyarray(x) / np.pi)


def qpm_coupling(omega1, omega2, crystal: CrystalSpec, temp_c=None) -> CouplingResult:
    """Single-pass effective coupling for the pair, bulk and grating forms.

    The quasi-phase-matched coupling is
        chi = chi2 * (2/pi) * sinc(dkappa*l/2) * exp(-i*dkappa*l/2)
    and the bulk reference (no grating momentum) is
        chi_bulk = chi2 * sinc(dk*l/2) * exp(-i*dk*l/2),
    with chi2 = DEFF_TO_FLUX_COUPLING * d_eff.  fractional_period_phase is
    deliberately not folded in here; threshold analyses apply it as an
    inter-pass phase (see steady_state.round_trip_coupling).
    """
    _pair_check(omega1, omega2)
    t = crystal.temperature_c if temp_c is None else temp_c
    om1 = float(omega1)
    om2 = float(omega2)
    om0 = om1 + om2
    model = crystal.sellmeier
    k0 = float(wavevector(om0, t, model))
    k1 = float(wavevector(om1, t, model))
    k2 = float(wavevector(om2, t, model))
    dk = k0 - k1 - k2
    dkap = dk - 2 * np.pi / float(crystal.grating_period_at(t))
    chi2 = DEFF_TO_FLUX_COUPLING * crystal.d_eff
    half_bulk = dk * crystal.length / 2
    half_qpm = dkap * crystal.length / 2
    chi_bulk = chi2 * _sinc(half_bulk) * np.exp(-1j * half_bulk)
    chi = chi2 * (2 / np.pi) * _sinc(half_qpm) * np.exp(-1j * half_qpm)
    return CouplingResult(delta_k=dk, delta_kappa=dkap, chi=complex(chi), chi_bulk=complex(chi_bulk))


def degeneracy_temperature(grating_period, crystal: CrystalSpec, omega0, bracket=None):
    """Temperature where dkappa(omega0/2, omega0/2) = 0 for the given period.

    Brackets a sign change of the degenerate mismatch inside the Sellmeier
    temperature window (or a caller-supplied (t_lo, t_hi)) and polishes it
    with Brent's method; the returned root satisfies |dkappa| < 1e-6 rad/m.
    Raises NotFoundError when the mismatch does not change sign in the
    window.
    """
    xtal = dataclasses.replace(crystal, grating_period=float(grating_period))
    half = float(omega0) / 2

    def mismatch(t):
        return float(qpm_mismatch(half, half, t, xtal))

    model = crystal.sellmeier
    if bracket is None:
        t_lo, t_hi = model.temp_min_c + 0.5, model.temp_max_c - 0.5
    else:
        t_lo, t_hi = bracket
    grid = np.linspace(t_lo, t_hi, 65)
    vals = np.array([mismatch(t) for t in grid])
    sign_change = np.nonzero(np.diff(np.signbit(vals)))[0]
    if len(sign_change) == 0:
        raise NotFoundError(
            f"dkappa does not change sign for Lambda = {grating_period * 1e6:.4g} um "
            f"in [{t_lo:g}, {t_hi:g}] C"
        )
    i = sign_change[0]
    t_root = brentq(mismatch, grid[i], grid[i + 1], xtol=1e-10, rtol=8.9e-16)
    if abs(mismatch(t_root)) >= 1e-6:
        raise NotFoundError("degeneracy root did not converge below 1e-6 rad/m")
    return float(t_root)
