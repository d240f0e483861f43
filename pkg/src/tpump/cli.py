"""Command-line driver: calibrate, design, bands, chern1, chern2, pump.

Exit codes: 0 success, 1 domain error (``ClassName: message`` on stderr),
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .design import (DEFAULT_SEPARATIONS, DEFAULT_WAVELENGTHS, DESIGN_WAVELENGTH, IndexProfile,
                     build_layout, calibrate, flat_positions, lattice_positions, read_law_csv,
                     read_layout_csv, write_law_csv, write_layout_csv)
from .errors import ConfigError, InvalidInput, TPumpError
from .model import (DEFAULT_CUTOFF, LatticeSpec, PumpParams, PumpSchedule, build_2d_direct_sum,
                    direct_sum_bloch_family, geometric_matrix, harper_bloch_family)
from .propagate import run_pump, write_intensity_csv, write_metrics_json, write_pgm
from .spectral import diagonal_path, scan_bands, write_scan_csv
from .topology import (ChernReport, ParamGrid, band_ranges, chern_1, chern_2_direct,
                       chern_2_product, minkowski_gaps, pairs_below_gap)

RAMP_START = 0.477 * math.pi
RAMP_END = 2.19 * math.pi
CONFIG_KEYS = {
    "lattice", "schedule", "model", "wavelengths", "law", "layout", "output", "seed", "steps",
    "cutoff", "eta", "design_wavelength", "z_samples", "edge_depth", "corner_block",
}
FILE_KEYS = ("law", "layout")


class UsageError(Exception):
    pass


def parse_range(text: str) -> list[float]:
    """``start:stop:step`` inclusive of both ends; a single number is a one-element list.

    The step must divide ``stop - start`` exactly.
    """
    parts = text.split(":")
    try:
        values = [Fraction(p.strip()) for p in parts]
    except ValueError:
        raise UsageError(f"bad range {text!r}; expected start:stop:step") from None
    if len(values) == 1:
        return [float(values[0])]
    if len(values) != 3:
        raise UsageError(f"bad range {text!r}; expected start:stop:step")
    start, stop, step = values
    if step <= 0 or stop < start:
        raise UsageError(f"range {text!r} needs step > 0 and stop >= start")
    count = (stop - start) / step
    if count.denominator != 1:
        raise UsageError(f"step {parts[2]} does not divide the span of {text!r}")
    return [float(start + i * step) for i in range(int(count) + 1)]


@dataclass
class RunConfig:
    lattice: LatticeSpec = field(default_factory=LatticeSpec)
    schedule: PumpSchedule = field(
        default_factory=lambda: PumpSchedule(RAMP_START, RAMP_END, RAMP_START, RAMP_START, 15.0))
    model: str = "nearest"
    wavelengths: tuple[float, ...] = (DESIGN_WAVELENGTH,)
    law: Path | None = None
    layout: Path | None = None
    output: Path | None = None
    seed: int = 0
    steps: int | None = None
    cutoff: float = DEFAULT_CUTOFF
    eta: float = 1.0
    design_wavelength: float = DESIGN_WAVELENGTH
    z_samples: int = 151
    edge_depth: int = 2
    corner_block: int = 2

    @classmethod
    def from_dict(cls, d: dict, base: Path = Path(".")) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        for key, kind in (("lattice", LatticeSpec), ("schedule", PumpSchedule)):
            if key in kw:
                try:
                    kw[key] = kind.from_dict(kw[key])
                except (TypeError, InvalidInput) as exc:
                    raise ConfigError(f"{key}: {exc}") from None
        if kw.get("model", "nearest") not in ("nearest", "geometric"):
            raise ConfigError(f"model must be 'nearest' or 'geometric', got {kw['model']!r}")
        if "wavelengths" in kw:
            w = kw["wavelengths"]
            try:
                kw["wavelengths"] = tuple(parse_range(w) if isinstance(w, str) else (float(v) for v in w))
            except UsageError as exc:
                raise ConfigError(str(exc)) from None
            if not kw["wavelengths"]:
                raise ConfigError("wavelengths must not be empty")
        for key in FILE_KEYS:
            if kw.get(key) is not None:
                path = base / kw[key]
                if not path.is_file():
                    raise ConfigError(f"{key} file {path} does not exist")
                kw[key] = path
        if kw.get("output") is not None:
            kw["output"] = base / kw["output"]
        return cls(**kw)

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        return cls.from_dict(data, p.parent)

    def out_path(self, given: str | None, default: str) -> Path:
        return _output(given if given is not None else (self.output or Path(".")) / default)


def _output(path) -> Path:
    """Output path with its parent directory created."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _threads(arg: int | None) -> int | None:
    env = os.environ.get("TPUMP_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"TPUMP_THREADS must be an integer, got {env!r}") from None
    else:
        value = arg
    if value is not None and value < 1:
        raise UsageError("thread count must be >= 1")
    return value


def _law(cfg: RunConfig, override: str | None = None):
    path = override or cfg.law
    if path is None:
        raise ConfigError("a coupling law file is required (config 'law' or --law)")
    if not Path(path).is_file():
        raise ConfigError(f"law file {path} does not exist")
    return read_law_csv(path)


def _write_json(data: dict, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, sort_keys=True, indent=2)
        fh.write("\n")


def cmd_calibrate(args, threads):
    if args.profile:
        try:
            profile = IndexProfile.from_dict(json.loads(Path(args.profile).read_text()))
        except FileNotFoundError:
            raise ConfigError(f"profile file {args.profile} does not exist") from None
        except (json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"{args.profile}: {exc}") from None
    else:
        profile = IndexProfile()
    seps = parse_range(args.seps) if args.seps else DEFAULT_SEPARATIONS
    wls = parse_range(args.wavelengths) if args.wavelengths else DEFAULT_WAVELENGTHS
    law = calibrate(profile, seps, wls, extent=args.extent, spacing=args.spacing, threads=threads)
    write_law_csv(law, _output(args.out))


def cmd_design(args, threads):
    cfg = RunConfig.load(args.config)
    law = _law(cfg, args.law)
    layout = build_layout(cfg.lattice, law, cfg.design_wavelength, cfg.schedule,
                          args.z_samples or cfg.z_samples)
    write_layout_csv(layout, cfg.out_path(args.out, "layout.csv"))


def _band_path(name: str, samples: int, schedule: PumpSchedule) -> list[PumpParams]:
    if samples < 1:
        raise UsageError("--samples must be >= 1")
    if name == "diag":
        return diagonal_path(samples)
    phis = np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
    if name == "x-only":
        return [PumpParams(p, schedule.phi_y_start) for p in phis]
    if name == "y-only":
        return [PumpParams(schedule.phi_x_start, p) for p in phis]
    raise UsageError(f"unknown path preset {name!r}")


def cmd_bands(args, threads):
    cfg = RunConfig.load(args.config)
    spec = cfg.lattice
    path = _band_path(args.path, args.samples, cfg.schedule)
    if cfg.model == "nearest":
        def builder(p):
            return build_2d_direct_sum(spec, p)
    else:
        law = _law(cfg)
        wl = cfg.design_wavelength

        def builder(p):
            xs, ys = flat_positions(*lattice_positions(spec, law, wl, p.phi_x, p.phi_y))
            return geometric_matrix(xs, ys, law, wl, cutoff=cfg.cutoff, eta=cfg.eta)
    scan = scan_bands(builder, path, spec=spec, edge_depth=cfg.edge_depth,
                      corner_block=cfg.corner_block, threads=threads)
    write_scan_csv(scan, cfg.out_path(args.out, "bands.csv"))


def cmd_chern1(args, threads):
    cfg = RunConfig.load(args.config)
    report = chern_1(harper_bloch_family(cfg.lattice, args.axis), [args.band],
                     ParamGrid.square(args.grid), label=f"{args.axis}-band-{args.band}")
    _write_json(report.to_dict(), cfg.out_path(args.out, "chern1.json"))


def _gap_energy(spec: LatticeSpec, which: str):
    bx = band_ranges(harper_bloch_family(spec, "x"))
    by = band_ranges(harper_bloch_family(spec, "y"))
    gaps = minkowski_gaps(bx, by)
    if not gaps:
        raise TPumpError("the 2D bulk spectrum has no gap")
    lo, hi = gaps[0] if which == "lower" else gaps[-1]
    return 0.5 * (lo + hi), bx, by


def cmd_chern2(args, threads):
    cfg = RunConfig.load(args.config)
    spec = cfg.lattice
    energy, bx, by = _gap_energy(spec, args.gap)
    if args.method == "direct":
        report = chern_2_direct(direct_sum_bloch_family(spec), energy, ParamGrid.square(args.grid, 4),
                                label=args.gap, threads=threads)
    else:
        grid = ParamGrid.square(args.grid)
        nus = {}
        for axis, bands in (("x", bx), ("y", by)):
            fam = harper_bloch_family(spec, axis)
            nus[axis] = [chern_1(fam, [i], grid).value for i in range(len(bands))]
        value = chern_2_product(nus["x"], nus["y"], pairs_below_gap(bx, by, energy))
        report = ChernReport("chern2", args.gap, grid, float(value), value)
    _write_json(report.to_dict(), cfg.out_path(args.out, "chern2.json"))


_SITE = re.compile(r"^\(?\s*(-?\d+)\s*,\s*(-?\d+)\s*\)?$")


def _injection(text: str):
    m = _SITE.match(text.strip())
    if m:
        return (int(m.group(1)), int(m.group(2)))
    return text


def cmd_pump(args, threads):
    cfg = RunConfig.load(args.config)
    law = layout = None
    if cfg.model == "geometric":
        law = _law(cfg)
        if cfg.layout is not None:
            layout = read_layout_csv(cfg.layout)
    result = run_pump(cfg.lattice, cfg.schedule, _injection(args.inject), model=cfg.model,
                      wavelengths=cfg.wavelengths, law=law, steps=args.steps or cfg.steps,
                      design_wavelength=cfg.design_wavelength, cutoff=cfg.cutoff, eta=cfg.eta,
                      edge_depth=cfg.edge_depth, corner_block=cfg.corner_block, threads=threads,
                      layout=layout)
    write_pgm(result.intensity, cfg.out_path(args.out, "facet.pgm"))
    metrics = dict(result.metrics, norm_drift=result.norm_drift, steps=result.steps)
    write_metrics_json(metrics, cfg.out_path(args.metrics, "metrics.json"))
    if args.csv:
        write_intensity_csv(result.intensity, _output(args.csv))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tpump", description="2D topological pump simulations in waveguide arrays")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: all cores; TPUMP_THREADS overrides)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("calibrate", help="fit the coupling law from the two-waveguide solver")
    p.add_argument("--profile", help="IndexProfile JSON (default: built-in profile)")
    p.add_argument("--seps", help="separations in um, start:stop:step")
    p.add_argument("--wavelengths", help="wavelengths in nm, start:stop:step")
    p.add_argument("--extent", type=float, default=80.0, help="solver window in um")
    p.add_argument("--spacing", type=float, default=0.5, help="solver grid spacing in um")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("design", help="waveguide trajectories realising the schedule")
    p.add_argument("--config")
    p.add_argument("--law", help="coupling-law CSV (overrides the config)")
    p.add_argument("--z-samples", type=int, dest="z_samples")
    p.add_argument("--out")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("bands", help="finite-lattice spectrum along a pump path")
    p.add_argument("--config")
    p.add_argument("--path", default="diag", choices=("diag", "x-only", "y-only"))
    p.add_argument("--samples", type=int, default=201)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bands)

    p = sub.add_parser("chern1", help="first Chern number of one 1D band")
    p.add_argument("--config")
    p.add_argument("--band", type=int, required=True, help="zero-based band index")
    p.add_argument("--axis", default="x", choices=("x", "y"))
    p.add_argument("--grid", type=int, default=48)
    p.add_argument("--out")
    p.set_defaults(func=cmd_chern1)

    p = sub.add_parser("chern2", help="second Chern number below a 2D bulk gap")
    p.add_argument("--config")
    p.add_argument("--gap", required=True, choices=("lower", "upper"))
    p.add_argument("--grid", type=int, default=12)
    p.add_argument("--method", default="direct", choices=("direct", "product"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_chern2)

    p = sub.add_parser("pump", help="propagate an injected beam and record the output facet")
    p.add_argument("--config")
    p.add_argument("--inject", required=True, help="named site or (ix,iy)")
    p.add_argument("--steps", type=int)
    p.add_argument("--out", help="facet image (PGM)")
    p.add_argument("--metrics", help="metrics JSON")
    p.add_argument("--csv", help="optional per-site intensity CSV")
    p.set_defaults(func=cmd_pump)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        threads = _threads(args.threads)
        args.func(args, threads)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except TPumpError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    return 0
