"""Triply resonant OPO toolkit: dispersion, mean fields, noise, homodyne reduction.

Simulation and data-reduction package for a continuous-wave optical
parametric oscillator on a periodically poled crystal: quasi-phase-matched
coupling and degeneracy temperature, round-trip mode structure, steady-state
fields and thresholds with mode competition, linearized quadrature-noise
spectra of the reflected pump, and spectrum-analyzer trace reduction.
"""

__version__ = "0.1.0"

from .errors import (
    DataError,
    DomainError,
    ImpedanceMatchedError,
    NotFoundError,
    TropoError,
    UsageError,
)
from .dispersion import (
    C_LIGHT,
    HBAR,
    DEFF_TO_FLUX_COUPLING,
    CouplingResult,
    CrystalSpec,
    SellmeierModel,
    degeneracy_temperature,
    group_index,
    qpm_coupling,
    qpm_mismatch,
    refractive_index,
    wavevector,
)
from .cavity import (
    CavitySpec,
    DetuningSet,
    FilterCavitySpec,
    FinesseResult,
    MirrorSpec,
    detuning_set,
    double_resonance_lengths,
    filter_noise_transmission,
    finesse,
    round_trip_phase,
    solve_mode_frequency,
    wrap_phase,
)
from .steady_state import (
    ModeSolution,
    PumpDrive,
    ScanTrace,
    SteadyState,
    calibrate_flux_coupling,
    clamp_pump,
    conversion_ledger,
    dual_pass_envelope,
    minimum_threshold,
    mode_catalog,
    reflected_field,
    reflected_power_w,
    round_trip_coupling,
    scan_cavity,
    solve_steady,
    threshold,
    threshold_phase_penalty,
)
from .noise import (
    FluctuationModel,
    NoiseSpectrum,
    SqueezingScanTrace,
    intensity_noise,
    linearize,
    noise_spectrum,
    optimum_squeezing,
    output_covariance,
    pump_quadrature_spectrum,
    squeezing_scan,
)
from .manifest import RunManifest
from .homodyne import (
    DetectionChain,
    LinearTrace,
    MeasuredTrace,
    NormalizedNoise,
    ReductionReport,
    apply_loss,
    dbm_to_linear,
    homodyne_variance,
    implied_path_efficiency,
    infer_source_noise,
    normalize,
    reduce_traces,
)
from .config import Setup, load_setup

__all__ = [name for name in dir() if not name.startswith("_")]
