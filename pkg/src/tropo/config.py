"""Configuration parsing: one INI file describes the whole bench.

Boundary units are the ones people write on optics tables (mm, um,
pm/V, mW, dBm); everything becomes SI inside the dataclasses.  The
parsed file is also kept as a flat key/value snapshot so run manifests
can reproduce an invocation byte for byte.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .cavity import CavitySpec, FilterCavitySpec, MirrorSpec
from .dispersion import C_LIGHT, CrystalSpec, SellmeierModel
from .errors import UsageError
from .homodyne import DetectionChain


@dataclass(frozen=True)
class Setup:
    """Everything a command needs, resolved from one config file."""

    crystal: CrystalSpec
    cavity: CavitySpec
    filter_cavity: FilterCavitySpec
    detection: DetectionChain
    pump_wavelength_um: float
    pump_power_w: float
    electronic_floor_dbm: float
    snapshot: dict

    @property
    def omega0(self) -> float:
        """Pump angular frequency (rad/s)."""
        return 2 * np.pi * C_LIGHT / (self.pump_wavelength_um * 1e-6)


def _parser():
    return configparser.ConfigParser(inline_comment_prefixes=("#",))


def load_setup(path=None) -> Setup:
    """Build a Setup from an INI file; None loads the packaged default."""
    cp = _parser()
    if path is None:
        text = resources.files("tropo").joinpath("data/default.ini").read_text()
        cp.read_string(text)
    else:
        read = cp.read(path)
        if not read:
            raise UsageError(f"config file not found: {path}")
    try:
        sm = cp["sellmeier"]
        sellmeier = SellmeierModel(
            a1=sm.getfloat("a1"),
            a2=sm.getfloat("a2"),
            a3=sm.getfloat("a3"),
            a4=sm.getfloat("a4"),
            a5=sm.getfloat("a5"),
            a6=sm.getfloat("a6"),
            b1=sm.getfloat("b1"),
            b2=sm.getfloat("b2"),
            b3=sm.getfloat("b3"),
            b4=sm.getfloat("b4"),
            wl_min_um=sm.getfloat("wl_min_um"),
            wl_max_um=sm.getfloat("wl_max_um"),
            temp_min_c=sm.getfloat("temp_min_c"),
            temp_max_c=sm.getfloat("temp_max_c"),
        )
        xs = cp["crystal"]
        crystal = CrystalSpec(
            length=xs.getfloat("length_mm") * 1e-3,
            grating_period=xs.getfloat("grating_period_um") * 1e-6,
            d_eff=xs.getfloat("d_eff_pm_v") * 1e-12,
            sellmeier=sellmeier,
            temperature_c=xs.getfloat("temperature_c"),
            face_loss_pump=xs.getfloat("face_loss_pump"),
            face_loss_ir=xs.getfloat("face_loss_ir"),
            bulk_absorption_pump=xs.getfloat("bulk_absorption_pump"),
            fractional_period_phase=xs.getfloat("fractional_period_phase_rad"),
            grating_expansion_per_k=xs.getfloat("grating_expansion_per_k"),
            grating_expansion_ref_c=xs.getfloat("grating_expansion_ref_c"),
        )
        cv = cp["cavity"]
        cavity = CavitySpec(
            length=cv.getfloat("length_mm") * 1e-3,
            pump_in=MirrorSpec("pump", cv.getfloat("pump_in_r"), cv.getfloat("pump_in_t")),
            pump_end=MirrorSpec("pump", cv.getfloat("pump_end_r"), cv.getfloat("pump_end_t")),
            ir_in=MirrorSpec("ir", cv.getfloat("ir_in_r"), cv.getfloat("ir_in_t")),
            ir_end=MirrorSpec("ir", cv.getfloat("ir_end_r"), cv.getfloat("ir_end_t")),
            crystal=crystal,
        )
        fc = cp["filter_cavity"]
        measured = fc.getfloat("finesse_measured")
        filter_cavity = FilterCavitySpec(
            round_trip_length=fc.getfloat("round_trip_m"),
            mirror_r1=fc.getfloat("mirror_r1"),
            mirror_r2=fc.getfloat("mirror_r2"),
            mirror_r3=fc.getfloat("mirror_r3"),
            finesse_measured=measured if measured else None,
            locked=fc.getboolean("locked"),
        )
        dt = cp["detection"]
        detection = DetectionChain(
            eta_qe=dt.getfloat("quantum_efficiency"),
            eta_vis_sq=dt.getfloat("visibility") ** 2,
            eta_path=dt.getfloat("path_efficiency"),
            gamma=0.0,
            pump_power_w=dt.getfloat("pump_power_at_detector_mw") * 1e-3,
            lo_power_w=dt.getfloat("lo_power_mw") * 1e-3,
        )
        pump = cp["pump"]
        setup = Setup(
            crystal=crystal,
            cavity=cavity,
            filter_cavity=filter_cavity,
            detection=detection,
            pump_wavelength_um=pump.getfloat("wavelength_um"),
            pump_power_w=pump.getfloat("power_mw") * 1e-3,
            electronic_floor_dbm=dt.getfloat("electronic_floor_dbm"),
            snapshot=snapshot_dict(cp),
        )
    except (configparser.Error, KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"bad config: {exc}") from exc
    return setup


def snapshot_dict(cp: configparser.ConfigParser) -> dict:
    """Flatten a parsed config to {'section.key': 'value'} for manifests."""
    flat = {}
    for section in cp.sections():
        for key, value in cp[section].items():
            flat[f"{section}.{key}"] = value
    return flat
