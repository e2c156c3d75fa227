"""Measurement-chain model and spectrum-analyzer trace reduction.

A weak local oscillator forces the two-term form of the balanced
photocurrent-difference variance,

    Var(i1 - i2)  ~  I_LO * S_det(theta) + I * S_LO,

where I_LO and I are the LO and reflected-pump powers at the detectors,
S_LO = 1 for a coherent LO, and the detected quadrature spectrum is the
source spectrum degraded by the chain efficiency

    S_det = eta * S + (1 - eta),
    eta   = eta_qe * eta_vis^2 * eta_path * (1 - Gamma).

Measured traces arrive in dBm versus (time-parameterized) LO phase.
The reduction pipeline is: subtract the electronic floor in linear
units, form N = (N1 - N3)/N2 samplewise, and optionally undo known
losses with N_loss = (1 - Gamma) * N + Gamma or invert the chain with
N_source = 1 + (N - 1)/eta.  Phase stays implicit (sample index): the
LO piezo scan is never calibrated against absolute phase.

Trace files are plain CSV with a '# key = value' header carrying the
analyzer settings; a resolution-bandwidth mismatch silently corrupts
every ratio downstream, so mismatched settings are a hard DataError.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DomainError

TRACE_LABELS = ("combined", "lo_shot", "pump_shot", "electronic")


@dataclass(frozen=True)
class MeasuredTrace:
    """One spectrum-analyzer trace in dBm at fixed analysis frequency."""

    label: str
    power_dbm: np.ndarray
    resolution_bw_hz: float
    video_bw_hz: float
    analysis_freq_hz: float

    def __post_init__(self):
        object.__setattr__(self, "power_dbm", np.atleast_1d(np.asarray(self.power_dbm, float)))
        if self.label not in TRACE_LABELS:
            raise DataError(f"unknown trace label {self.label!r}; expected one of {TRACE_LABELS}")
        if self.resolution_bw_hz <= 0 or self.video_bw_hz <= 0:
            raise DataError("analyzer bandwidths must be positive")
        if not np.all(np.isfinite(self.power_dbm)):
            raise DataError("trace contains non-finite dBm samples")

    @property
    def settings(self):
        return (self.resolution_bw_hz, self.video_bw_hz, self.analysis_freq_hz)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(f"# label = {self.label}\n")
            fh.write(f"# resolution_bw_hz = {self.resolution_bw_hz:.12g}\n")
            fh.write(f"# video_bw_hz = {self.video_bw_hz:.12g}\n")
            fh.write(f"# analysis_freq_hz = {self.analysis_freq_hz:.12g}\n")
            fh.write("sample_index,power_dbm\n")
            for i, v in enumerate(self.power_dbm):
                fh.write(f"{i},{v:.12g}\n")

    @classmethod
    def from_csv(cls, path):
        meta = {}
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, value = line.lstrip("# ").partition("=")
                    meta[key.strip()] = value.strip()
                elif line[0].isdigit() or line[0] == "-":
                    idx, _, v = line.partition(",")
                    rows.append(float(v))
        try:
            return cls(
                label=meta["label"],
                power_dbm=np.array(rows),
                resolution_bw_hz=float(meta["resolution_bw_hz"]),
                video_bw_hz=float(meta["video_bw_hz"]),
                analysis_freq_hz=float(meta["analysis_freq_hz"]),
            )
        except KeyError as exc:
            raise DataError(f"trace file {path} missing header field {exc}") from exc


@dataclass(frozen=True)
class LinearTrace:
    """Electronically corrected linear powers (mW) plus clip flags."""

    power_mw: np.ndarray
    floor_flags: np.ndarray
    settings: tuple


@dataclass(frozen=True)
class DetectionChain:
    """Efficiency budget between the OPO output and the recorded variance."""

    eta_qe: float
    eta_vis_sq: float
    eta_path: float
    gamma: float = 0.0
    pump_power_w: float = 0.0
    lo_power_w: float = 0.0

    def __post_init__(self):
        for name in ("eta_qe", "eta_vis_sq", "eta_path"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise DomainError(f"{name} must lie in (0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError("attenuator loss must lie in [0, 1)")
        if self.pump_power_w < 0 or self.lo_power_w < 0:
            raise DomainError("powers must be nonnegative")

    @property
    def efficiency(self) -> float:
        """Total source-to-variance efficiency including the attenuator."""
        return self.eta_qe * self.eta_vis_sq * self.eta_path * (1.0 - self.gamma)


@dataclass(frozen=True)
class NormalizedNoise:
    """N = (N1 - N3)/N2 per phase sample, shot = 1."""

    values: np.ndarray
    flags: np.ndarray
    provenance: tuple = field(default=(), compare=False)

    def __post_init__(self):
        bad = np.nonzero(np.asarray(self.values) <= 0)[0]
        if bad.size:
            raise DataError(f"normalized noise <= 0 at sample {int(bad[0])} ({bad.size} samples)")


def dbm_to_linear(trace: MeasuredTrace, electronic: MeasuredTrace, floor_mw=1e-12) -> LinearTrace:
    """Linear power (mW) with the electronic floor subtracted samplewise.

    The electronic trace must share the analyzer settings; it may be a
    single sample (a flat floor) or match the trace length.  Samples that
    fall at or below the floor after subtraction are clipped to floor_mw
    and flagged rather than silently going negative.
    """
    if trace.settings != electronic.settings:
        raise DataError(
            f"analyzer settings mismatch: trace {trace.settings} vs electronic {electronic.settings}"
        )
    p = 10.0 ** (trace.power_dbm / 10.0)
    e = 10.0 ** (electronic.power_dbm / 10.0)
    if e.size not in (1, p.size):
        raise DataError(f"electronic trace length {e.size} does not match {p.size}")
    corrected = p - e
    flags = corrected <= floor_mw
    return LinearTrace(
        power_mw=np.maximum(corrected, floor_mw), floor_flags=flags, settings=trace.settings
    )


def homodyne_variance(s_signal, chain: DetectionChain, s_lo=1.0):
    """Photocurrent-difference variance for a model quadrature spectrum.

    Arbitrary linear units (W * shot); only ratios survive normalization.
    The signal term is degraded by the chain efficiency, the pump-power
    correction term rides on the LO noise and is not.
    """
    s = np.asarray(s_signal, float)
    eta = chain.efficiency
    detected = eta * s + (1.0 - eta)
    return chain.lo_power_w * detected + chain.pump_power_w * np.asarray(s_lo, float)


def _as_power(trace):
    return trace.power_mw if isinstance(trace, LinearTrace) else np.asarray(trace, float)


def normalize(n1, n2, n3) -> NormalizedNoise:
    """N = (N1 - N3)/N2 samplewise; inputs are LinearTrace or plain arrays."""
    traces = [t for t in (n1, n2, n3) if isinstance(t, LinearTrace)]
    if len(traces) > 1 and any(t.settings != traces[0].settings for t in traces):
        raise DataError("normalize requires all traces at identical analyzer settings")
    p1, p2, p3 = _as_power(n1), _as_power(n2), _as_power(n3)
    if not p1.shape == p2.shape == p3.shape:
        raise DataError(f"trace lengths differ: {p1.shape}, {p2.shape}, {p3.shape}")
    bad = np.nonzero(p2 <= 0)[0]
    if bad.size:
        raise DataError(f"LO shot trace N2 <= 0 at sample {int(bad[0])}")
    flags = np.zeros(p1.shape, bool)
    for t in (n1, n2, n3):
        if isinstance(t, LinearTrace):
            flags |= t.floor_flags
    return NormalizedNoise(values=(p1 - p3) / p2, flags=flags, provenance=tuple(traces))


def apply_loss(n, gamma):
    """Downstream loss Gamma pulls normalized noise toward shot: (1-Gamma)N + Gamma."""
    if not 0.0 <= gamma < 1.0:
        raise DomainError("loss coefficient must lie in [0, 1)")
    n = np.asarray(n, float)
    out = (1.0 - gamma) * n + gamma
    return out if out.shape else float(out)


def infer_source_noise(n_measured, efficiency):
    """Invert the efficiency map: N_source = 1 + (N_measured - 1)/eta.

    efficiency is a DetectionChain or a plain number in (0, 1].  Refuses
    inversions that land at or below zero (the efficiency was
    overestimated; no physical source spectrum is consistent).
    """
    eta = efficiency.efficiency if isinstance(efficiency, DetectionChain) else float(efficiency)
    if not 0.0 < eta <= 1.0:
        raise DomainError("overall efficiency must lie in (0, 1]")
    n = np.asarray(n_measured, float)
    source = 1.0 + (n - 1.0) / eta
    if np.any(source <= 0.0):
        raise DomainError(
            "inferred source noise <= 0: detection efficiency is overestimated for this trace"
        )
    return source if source.shape else float(source)


def implied_path_efficiency(n_measured, n_source, eta_qe, eta_vis_sq):
    """Back out eta_path from a measured/inferred noise pair.

    The pair fixes the total efficiency eta = (1 - N_meas)/(1 - N_source);
    dividing out the known photodiode and mode-matching factors leaves the
    propagation transmission, the one factor nobody measures directly.
    """
    if n_source >= 1.0 or n_measured >= 1.0:
        raise DomainError("implied efficiency needs squeezing on both sides (N < 1)")
    eta_total = (1.0 - n_measured) / (1.0 - n_source)
    if not 0.0 < eta_total <= 1.0:
        raise DomainError(f"implied total efficiency {eta_total:.4g} outside (0, 1]")
    return eta_total / (eta_qe * eta_vis_sq)


@dataclass(frozen=True)
class ReductionReport:
    """Summary emitted next to every normalized trace."""

    n_min: float
    n_min_index: int
    n_max: float
    n_max_index: int
    inferred_source_min: float
    efficiencies: dict
    flagged_samples: int

    def as_dict(self):
        return {
            "n_min": self.n_min,
            "n_min_index": self.n_min_index,
            "n_max": self.n_max,
            "n_max_index": self.n_max_index,
            "inferred_source_min": self.inferred_source_min,
            "efficiencies": dict(self.efficiencies),
            "flagged_samples": self.flagged_samples,
        }


def reduce_traces(
    combined: MeasuredTrace,
    lo_shot: MeasuredTrace,
    pump_shot: MeasuredTrace,
    electronic: MeasuredTrace,
    chain: DetectionChain,
    floor_mw=1e-12,
):
    """Full pipeline: dBm -> linear -> normalize -> report."""
    lin1 = dbm_to_linear(combined, electronic, floor_mw)
    lin2 = dbm_to_linear(lo_shot, electronic, floor_mw)
    lin3 = dbm_to_linear(pump_shot, electronic, floor_mw)
    noise = normalize(lin1, lin2, lin3)
    i_min = int(np.argmin(noise.values))
    i_max = int(np.argmax(noise.values))
    n_min = float(noise.values[i_min])
    source_min = float(infer_source_noise(n_min, chain)) if n_min < 1.0 else n_min
    report = ReductionReport(
        n_min=n_min,
        n_min_index=i_min,
        n_max=float(noise.values[i_max]),
        n_max_index=i_max,
        inferred_source_min=source_min,
        efficiencies={
            "eta_qe": chain.eta_qe,
            "eta_vis_sq": chain.eta_vis_sq,
            "eta_path": chain.eta_path,
            "gamma": chain.gamma,
            "total": chain.efficiency,
        },
        flagged_samples=int(np.count_nonzero(noise.flags)),
    )
    return noise, report
