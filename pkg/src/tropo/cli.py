"""Command-line front end: one subcommand per plot-ready artifact set.

    tropo dispersion  QPM tables against grating period or temperature
    tropo scan        cavity-length scan: mode staircase and mean powers
    tropo noise       pump-quadrature squeezing over the same scan
    tropo reduce      spectrum-analyzer trace reduction to shot units

Operating conditions are specified the way they are dialed in the lab:
temperature as an offset from the QPM degeneracy point of the
configured grating, pump power as a multiple of the minimum oscillation
threshold.  Length scans are centered on the degenerate double
resonance nearest the configured cavity length.

Every command writes a ``<command>_manifest.json`` next to its outputs;
re-running with identical arguments reproduces every file byte for
byte.  Exit codes: 0 success, 2 usage, 3 domain, 4 data.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import __version__
from .cavity import double_resonance_lengths
from .dispersion import degeneracy_temperature, qpm_coupling, qpm_mismatch
from .errors import DataError, DomainError, TropoError, UsageError
from .homodyne import MeasuredTrace, apply_loss, reduce_traces
from .manifest import RunManifest
from .noise import squeezing_scan
from .steady_state import minimum_threshold, scan_cavity
from .config import Setup, load_setup

_EXIT_CODES = ((UsageError, 2), (DataError, 4), (DomainError, 3))


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{value:.12g}"
    return str(value)


def _write_table(path, header, rows, meta=()):
    with open(path, "w") as fh:
        for key, value in meta:
            fh.write(f"# {key} = {value}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _parse_sweep(text: str, flag: str) -> list:
    values = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            values.append(float(token))
        except ValueError as exc:
            raise UsageError(f"{flag}: cannot parse {token!r} as a number") from exc
    if not values:
        raise UsageError(f"{flag}: empty sweep list")
    return values


def _out_dir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _condition(setup: Setup, args):
    """Resolve (T in C, P_in in W) from the offset/ratio flags."""
    t_qpm = degeneracy_temperature(
        setup.crystal.grating_period, setup.crystal, setup.omega0
    )
    temp_c = t_qpm + args.temp_offset_c
    if args.pump_ratio <= 0:
        raise UsageError("--pump-ratio must be positive")
    p_in = args.pump_ratio * minimum_threshold(setup.cavity, setup.omega0)
    return temp_c, p_in


def _scan_window(setup: Setup, temp_c: float, width_um: float):
    """Window of the requested width centered on the nearest p = 0 resonance."""
    if width_um <= 0:
        raise UsageError("--window-um must be positive")
    cav = setup.cavity
    # degenerate double resonances recur every ~1.1 um of length, so a
    # +-1.2 um bracket always contains at least one
    search = (cav.length - 1.2e-6, cav.length + 1.2e-6)
    centers = double_resonance_lengths(temp_c, 0, cav, search, setup.omega0)
    center = min(centers, key=lambda val: abs(val - cav.length))
    half = 0.5 * width_um * 1e-6
    return center - half, center + half


def _write_manifest(out, command, arguments, setup, seed, outputs):
    manifest = RunManifest(
        command=command,
        arguments={k: str(v) for k, v in arguments.items()},
        config=setup.snapshot,
        seed=seed,
        version=__version__,
        outputs=tuple(sorted(outputs)),
    )
    path = os.path.join(out, f"{command}_manifest.json")
    manifest.write(path)
    return [path] + [os.path.join(out, name) for name in manifest.outputs]


def cmd_dispersion(args) -> list:
    setup = load_setup(args.config)
    crystal = setup.crystal
    omega0 = setup.omega0
    half = omega0 / 2
    out = _out_dir(args)

    rows = []
    if args.period_um is not None:
        sweep = _parse_sweep(args.period_um, "--period-um")
        header = ("period_um", "t_qpm_c", "dkappa_per_m", "chi_mag")
        for period_um in sweep:
            xtal = dataclasses.replace(crystal, grating_period=period_um * 1e-6)
            t_qpm = degeneracy_temperature(xtal.grating_period, xtal, omega0)
            dkappa = float(qpm_mismatch(half, half, xtal.temperature_c, xtal))
            chi = qpm_coupling(half, half, xtal).chi
            rows.append((period_um, t_qpm, dkappa, abs(chi)))
        sweep_kind = "grating period"
        arguments = {"--period-um": args.period_um}
    else:
        sweep = _parse_sweep(args.temp_c, "--temp-C")
        header = ("temp_c", "t_qpm_c", "dkappa_per_m", "chi_mag")
        t_qpm = degeneracy_temperature(crystal.grating_period, crystal, omega0)
        for temp_c in sweep:
            dkappa = float(qpm_mismatch(half, half, temp_c, crystal))
            chi = qpm_coupling(half, half, crystal, temp_c=temp_c).chi
            rows.append((temp_c, t_qpm, dkappa, abs(chi)))
        sweep_kind = "temperature"
        arguments = {"--temp-C": args.temp_c}

    table = os.path.join(out, "dispersion_table.csv")
    _write_table(table, header, rows, meta=(("sweep", sweep_kind),))
    if args.config:
        arguments["--config"] = args.config
    return _write_manifest(
        out, "dispersion", arguments, setup, args.seed, ["dispersion_table.csv"]
    )


def cmd_scan(args) -> list:
    setup = load_setup(args.config)
    temp_c, p_in = _condition(setup, args)
    window = _scan_window(setup, temp_c, args.window_um)
    out = _out_dir(args)

    trace = scan_cavity(window, temp_c, p_in, args.policy, setup.cavity, setup.omega0)
    trace_path = os.path.join(out, "scan_trace.csv")
    trace.write_csv(trace_path)
    stair_path = os.path.join(out, "scan_staircase.csv")
    l0 = trace.lengths[0]
    _write_table(
        stair_path,
        ("L_offset_um", "dnu_THz"),
        [((li - l0) * 1e6, di) for li, di in zip(trace.lengths, trace.delta_nu_thz)],
        meta=(("policy", args.policy), ("temp_c", f"{temp_c:.6f}")),
    )

    arguments = {
        "--temp-offset-C": args.temp_offset_c,
        "--pump-ratio": args.pump_ratio,
        "--window-um": args.window_um,
        "--policy": args.policy,
    }
    if args.config:
        arguments["--config"] = args.config
    return _write_manifest(
        out, "scan", arguments, setup, args.seed,
        ["scan_trace.csv", "scan_staircase.csv"],
    )


def cmd_noise(args) -> list:
    setup = load_setup(args.config)
    temp_c, p_in = _condition(setup, args)
    window = _scan_window(setup, temp_c, args.window_um)
    freq_hz = args.omega_mhz * 1e6
    out = _out_dir(args)

    trace = squeezing_scan(window, temp_c, p_in, freq_hz, setup.cavity, setup.omega0)
    noise_path = os.path.join(out, "noise_scan.csv")
    trace.write_csv(noise_path)

    arguments = {
        "--temp-offset-C": args.temp_offset_c,
        "--pump-ratio": args.pump_ratio,
        "--window-um": args.window_um,
        "--omega-mhz": args.omega_mhz,
    }
    if args.config:
        arguments["--config"] = args.config
    return _write_manifest(
        out, "noise", arguments, setup, args.seed, ["noise_scan.csv"]
    )


def _load_trace(path, flag) -> MeasuredTrace:
    if not os.path.exists(path):
        raise UsageError(f"{flag}: trace file not found: {path}")
    return MeasuredTrace.from_csv(path)


def cmd_reduce(args) -> list:
    setup = load_setup(args.config)
    combined = _load_trace(args.combined, "--combined")
    lo_shot = _load_trace(args.lo_shot, "--lo-shot")
    pump_shot = _load_trace(args.pump_shot, "--pump-shot")
    electronic = _load_trace(args.electronic, "--electronic")
    out = _out_dir(args)

    noise, report = reduce_traces(combined, lo_shot, pump_shot, electronic, setup.detection)
    outputs = ["reduce_normalized.csv", "reduce_report.json"]
    _write_table(
        os.path.join(out, "reduce_normalized.csv"),
        ("sample_index", "normalized_noise", "floor_flag"),
        [(i, v, int(f)) for i, (v, f) in enumerate(zip(noise.values, noise.flags))],
    )
    import json

    with open(os.path.join(out, "reduce_report.json"), "w") as fh:
        fh.write(json.dumps(report.as_dict(), sort_keys=True, indent=2) + "\n")

    arguments = {
        "--combined": args.combined,
        "--lo-shot": args.lo_shot,
        "--pump-shot": args.pump_shot,
        "--electronic": args.electronic,
    }
    if args.gamma is not None:
        attenuated = apply_loss(noise.values, args.gamma)
        _write_table(
            os.path.join(out, "reduce_attenuated.csv"),
            ("sample_index", "normalized_noise"),
            list(enumerate(attenuated)),
            meta=(("gamma", f"{args.gamma:.12g}"),),
        )
        outputs.append("reduce_attenuated.csv")
        arguments["--gamma"] = args.gamma
    if args.config:
        arguments["--config"] = args.config
    return _write_manifest(out, "reduce", arguments, setup, args.seed, outputs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tropo",
        description="Triply resonant OPO models and homodyne data reduction.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", default=None,
                       help="bench description INI (default: packaged setup)")
        p.add_argument("--seed", type=int, default=0,
                       help="seed recorded for stochastic oracles (commands are deterministic)")
        p.add_argument("--out", metavar="DIR", default=".", help="output directory")

    p_disp = sub.add_parser("dispersion", help="QPM mismatch/degeneracy/coupling tables")
    sweep = p_disp.add_mutually_exclusive_group(required=True)
    sweep.add_argument("--period-um", metavar="LIST",
                       help="comma-separated grating periods (um) to sweep")
    sweep.add_argument("--temp-C", dest="temp_c", metavar="LIST",
                       help="comma-separated temperatures (C) to sweep")
    common(p_disp)
    p_disp.set_defaults(func=cmd_dispersion)

    def condition_flags(p):
        p.add_argument("--temp-offset-C", dest="temp_offset_c", type=float, default=-0.1,
                       help="crystal temperature minus the QPM degeneracy point (C)")
        p.add_argument("--pump-ratio", type=float, default=8.0,
                       help="pump power as a multiple of the minimum threshold")
        p.add_argument("--window-um", type=float, default=0.5,
                       help="full scan width (um), centered on the p = 0 resonance")

    p_scan = sub.add_parser("scan", help="cavity-length scan of the oscillating mode")
    condition_flags(p_scan)
    p_scan.add_argument("--policy", choices=("sticky", "lowest-threshold"),
                        default="sticky", help="mode-selection rule during the sweep")
    common(p_scan)
    p_scan.set_defaults(func=cmd_scan)

    p_noise = sub.add_parser("noise", help="pump squeezing along a cavity-length scan")
    condition_flags(p_noise)
    p_noise.add_argument("--omega-mhz", type=float, default=2.0,
                         help="noise analysis frequency (MHz)")
    common(p_noise)
    p_noise.set_defaults(func=cmd_noise)

    p_red = sub.add_parser("reduce", help="reduce spectrum-analyzer traces to shot units")
    p_red.add_argument("--combined", required=True, metavar="CSV",
                       help="N1: LO + pump beat trace")
    p_red.add_argument("--lo-shot", required=True, metavar="CSV",
                       help="N2: LO-only shot calibration trace")
    p_red.add_argument("--pump-shot", required=True, metavar="CSV",
                       help="N3: pump-only trace")
    p_red.add_argument("--electronic", required=True, metavar="CSV",
                       help="analyzer floor with all beams blocked")
    p_red.add_argument("--gamma", type=float, default=None,
                       help="also emit the trace after a downstream loss Gamma")
    common(p_red)
    p_red.set_defaults(func=cmd_reduce)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        written = args.func(args)
    except TropoError as exc:
        print(f"tropo {args.command}: error: {exc}", file=sys.stderr)
        for etype, code in _EXIT_CODES:
            if isinstance(exc, etype):
                return code
        return 1
    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
