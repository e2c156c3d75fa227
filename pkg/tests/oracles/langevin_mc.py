"""Monte-Carlo spectrum estimate for a linear Langevin system.

Integrates dx = A x dt + B dW by Euler-Maruyama and estimates the
stationary power spectrum of the scalar output

    y(t) = u^T (C x(t) + D xi(t)),    xi = dW/dt white, unit two-sided PSD

with Welch averaging (Hann window).  The estimate is normalized against
the shot reference r(t) = u^T D xi(t) built from the same noise
increments and the same window, so every estimator convention (window
gain, bin width, dt scaling) cancels in the ratio; for the OPO models
under test the reference is exactly the shot-noise level, making the
ratio directly comparable to a spectrum normalized to shot = 1.

Pure numpy, no package imports; the state-space matrices come in as
plain arrays.
"""

import numpy as np


def spectrum_ratio(a, b, c, d, u, freq_hz, dt, n_traj=64, seg_len=32768,
                   n_seg=4, rng=None):
    """Return (ratio, standard_error, f_bin).

    ratio is the trajectory-averaged PSD of y over the PSD of the shot
    reference at the FFT bin nearest freq_hz; standard_error is the
    spread of per-trajectory ratios / sqrt(n_traj).  Compare the model
    at f_bin, not freq_hz: the bin grid is set by seg_len * dt.
    """
    rng = np.random.default_rng(rng)
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    u = np.asarray(u, float)
    uc = u @ np.asarray(c, float)
    ud = u @ np.asarray(d, float)
    n_state, n_in = b.shape

    step = np.eye(n_state) + a * dt
    sq = np.sqrt(dt)
    burn = seg_len // 2
    total = burn + n_seg * seg_len

    x = np.zeros((n_state, n_traj))
    y = np.empty((n_seg * seg_len, n_traj))
    ref = np.empty_like(y)

    chunk = 4096
    k = 0
    while k < total:
        m = min(chunk, total - k)
        w = rng.standard_normal((m, n_in, n_traj))
        for i in range(m):
            wi = w[i]
            if k + i >= burn:
                j = k + i - burn
                y[j] = uc @ x + (ud @ wi) / sq
                ref[j] = (ud @ wi) / sq
            x = step @ x + (b @ wi) * sq
        k += m

    window = np.hanning(seg_len)[:, None]
    k_bin = int(round(freq_hz * seg_len * dt))
    f_bin = k_bin / (seg_len * dt)
    p_sig = np.zeros(n_traj)
    p_ref = np.zeros(n_traj)
    for s in range(n_seg):
        block = slice(s * seg_len, (s + 1) * seg_len)
        spec_y = np.fft.rfft(y[block] * window, axis=0)[k_bin]
        spec_r = np.fft.rfft(ref[block] * window, axis=0)[k_bin]
        p_sig += np.abs(spec_y) ** 2
        p_ref += np.abs(spec_r) ** 2
    ratios = p_sig / p_ref
    return float(np.mean(ratios)), float(np.std(ratios, ddof=1) / np.sqrt(n_traj)), f_bin
