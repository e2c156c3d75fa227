"""Damped fixed-point iteration of the literal round-trip maps.

Implements the three-field recursion directly,

    E0' = t0 E_in + r0 (E0 - conj(chi) E1 E2) e^{i phi0}
    E1' = r (E1 + chi E0 conj(E2)) e^{i phi1}
    E2' = r (E2 + chi E0 conj(E1)) e^{i phi2}

and drives it to a fixed point with adjustable damping.  Also provides
a central-difference Jacobian of the same map in quadrature variables;
the map is quadratic in the fields, so central differences are exact up
to roundoff.  This module is the reference the closed-form solver and
the analytic Jacobian are tested against; it shares no code with the
package.
"""

import numpy as np


def round_trip(fields, e_in, t0, r0, r, chi, phi0, phi1, phi2):
    e0, e1, e2 = fields
    f0 = t0 * e_in + r0 * (e0 - np.conj(chi) * e1 * e2) * np.exp(1j * phi0)
    f1 = r * (e1 + chi * e0 * np.conj(e2)) * np.exp(1j * phi1)
    f2 = r * (e2 + chi * e0 * np.conj(e1)) * np.exp(1j * phi2)
    return np.array([f0, f1, f2], complex)


def iterate(e_in, t0, r0, r, chi, phi0, phi1, phi2, start, damping=0.5,
            max_iter=400_000, tol=1e-13):
    """Damped Picard iteration z <- (1-d) map(z) + d z from a given start.

    Returns (fields, residual, converged); residual is the undamped map
    defect max|map(z) - z| relative to the field scale.  Damping 0.5
    tames the marginal phase direction above threshold without touching
    the fixed-point set.
    """
    z = np.asarray(start, complex)
    for _ in range(max_iter):
        fz = round_trip(z, e_in, t0, r0, r, chi, phi0, phi1, phi2)
        scale = max(1.0, float(np.max(np.abs(fz))))
        residual = float(np.max(np.abs(fz - z))) / scale
        if residual < tol:
            return z, residual, True
        z = (1.0 - damping) * fz + damping * z
    return z, residual, False


def _pack(fields):
    return np.array([fields[0].real, fields[0].imag,
                     fields[1].real, fields[1].imag,
                     fields[2].real, fields[2].imag])


def _unpack(x):
    return np.array([x[0] + 1j * x[1], x[2] + 1j * x[3], x[4] + 1j * x[5]])


def jacobian_fd(fields, e_in, t0, r0, r, chi, phi0, phi1, phi2, h=None):
    """6x6 central-difference Jacobian of the map at the given fields."""
    x0 = _pack(np.asarray(fields, complex))
    if h is None:
        h = 1e-5 * max(1.0, float(np.max(np.abs(x0))))
    jac = np.empty((6, 6))
    for j in range(6):
        dx = np.zeros(6)
        dx[j] = h
        fp = round_trip(_unpack(x0 + dx), e_in, t0, r0, r, chi, phi0, phi1, phi2)
        fm = round_trip(_unpack(x0 - dx), e_in, t0, r0, r, chi, phi0, phi1, phi2)
        jac[:, j] = (_pack(fp) - _pack(fm)) / (2 * h)
    return jac
