"""Coupling-law calibration and inverse design of waveguide layouts.

The two-waveguide eigenproblem is the paraxial operator

    H = -(1/2 k0) laplacian - k0 dn(x, y) / n0,    k0 = 2 pi n0 / wavelength

on a uniform finite-difference grid with Dirichlet walls. Eigenvalues are
propagation-constant shifts; more negative means more strongly bound.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .errors import (
    CouplingTooStrong,
    GridTooCoarse,
    InsufficientSamples,
    InvalidInput,
    NonPositiveCoupling,
    NotGuided,
    OverlapError,
    WavelengthOutOfRange,
)
from .model import LatticeSpec, PumpSchedule, hopping_amplitude

log = logging.getLogger(__name__)

UM_PER_CM = 1e4
NM_PER_UM = 1e3
DESIGN_WAVELENGTH = 1550.0
DEFAULT_WAVELENGTHS = tuple(float(w) for w in range(1510, 1591, 5))
DEFAULT_SEPARATIONS = tuple(float(s) for s in range(10, 31, 2))
MIN_SPACING = 8.0  # um


@dataclass(frozen=True)
class IndexProfile:
    """Gaussian index bump ``dn exp(-x^2/sx^2 - y^2/sy^2)`` of one waveguide."""

    delta_n: float = 2.8e-3
    sigma_x: float = 3.5
    sigma_y: float = 5.35
    n0: float = 1.473

    def __post_init__(self):
        for name in ("delta_n", "sigma_x", "sigma_y", "n0"):
            if not getattr(self, name) > 0:
                raise InvalidInput(f"{name} must be positive")
        if self.delta_n > 0.01 * self.n0:
            raise InvalidInput("index contrast too large for the paraxial model")

    @classmethod
    def from_dict(cls, d: Mapping) -> "IndexProfile":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInput(f"unknown IndexProfile keys: {sorted(unknown)}")
        return cls(**d)


class TwoGuideModes(NamedTuple):
    e1: float  # 1/cm
    e2: float  # 1/cm
    t: float  # 1/cm


def _grid(extent: float, spacing: float) -> np.ndarray:
    n = int(round(extent / spacing)) - 1
    return (np.arange(n) + 1) * spacing - extent / 2


def _lowest_modes(profile: IndexProfile, centers: Sequence[float], wavelength: float,
                  extent: float, spacing: float, k: int) -> np.ndarray:
    """Lowest ``k`` eigenvalues (1/cm) for waveguides centred at ``(c, 0)``."""
    k0 = 2 * math.pi * profile.n0 / (wavelength / NM_PER_UM)
    x = _grid(extent, spacing)
    n = x.size
    xx, yy = np.meshgrid(x, x, indexing="ij")
    dn = np.zeros_like(xx)
    for c in centers:
        dn += profile.delta_n * np.exp(-((xx - c) ** 2) / profile.sigma_x**2 - yy**2 / profile.sigma_y**2)
    d2 = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]) / spacing**2
    eye = sp.identity(n)
    lap = sp.kron(d2, eye) + sp.kron(eye, d2)
    op = (-lap / (2 * k0) - sp.diags((k0 * dn / profile.n0).ravel())).tocsc()
    # the potential floor lies strictly below the spectrum, so shift-invert picks the lowest modes
    floor = -k0 * dn.max() / profile.n0
    vals = sla.eigsh(op, k=k, sigma=1.01 * floor, which="LM", return_eigenvectors=False)
    return np.sort(vals) * UM_PER_CM


def _check_grid(profile: IndexProfile, separation: float, extent: float, spacing: float):
    if spacing > min(profile.sigma_x, profile.sigma_y) / 4:
        raise GridTooCoarse(f"grid spacing {spacing} um does not resolve the index profile")
    if extent / 2 < separation / 2 + 4 * profile.sigma_x or extent / 2 < 4 * profile.sigma_y:
        raise InvalidInput(f"extent {extent} um leaves less than a 4 sigma margin")


def solve_single_waveguide(profile: IndexProfile, wavelength: float, extent: float = 80.0,
                           spacing: float = 0.5) -> float:
    """Ground eigenvalue (1/cm) of one isolated waveguide."""
    _check_grid(profile, 0.0, extent, spacing)
    e0 = _lowest_modes(profile, [0.0], wavelength, extent, spacing, k=1)[0]
    if e0 >= 0:
        raise NotGuided("no bound mode")
    return float(e0)


def solve_two_waveguide(profile: IndexProfile, separation: float, wavelength: float,
                        extent: float = 80.0, spacing: float = 0.5,
                        refine: bool = False) -> TwoGuideModes:
    """Two lowest modes of a waveguide pair split along x, and their hopping.

    With ``refine`` the problem is re-solved at half the spacing and
    GridTooCoarse is raised if the hopping moves by more than 1%.
    """
    if separation <= 0:
        raise InvalidInput("separation must be positive")
    _check_grid(profile, separation, extent, spacing)
    centers = (-separation / 2, separation / 2)
    e1, e2 = _lowest_modes(profile, centers, wavelength, extent, spacing, k=2)
    if e2 >= 0:
        raise NotGuided(f"fewer than two bound states at separation {separation} um")
    t = (e2 - e1) / 2
    if refine:
        f1, f2 = _lowest_modes(profile, centers, wavelength, extent, spacing / 2, k=2)
        t_fine = (f2 - f1) / 2
        if abs(t_fine - t) > 0.01 * abs(t_fine):
            raise GridTooCoarse(f"hopping changed from {t:.6g} to {t_fine:.6g} on refinement")
    return TwoGuideModes(float(e1), float(e2), float(t))


@dataclass(frozen=True)
class CouplingLaw:
    """Wavelength table of ``t(s) = A exp(-gamma s)``; A in 1/cm, gamma in 1/um.

    Between tabulated wavelengths ln A and gamma are interpolated linearly.
    """

    wavelengths: np.ndarray
    amplitudes: np.ndarray
    gammas: np.ndarray
    diagnostics: tuple = field(default=(), compare=False)

    def __post_init__(self):
        w = np.asarray(self.wavelengths, dtype=float)
        a = np.asarray(self.amplitudes, dtype=float)
        g = np.asarray(self.gammas, dtype=float)
        if not (w.ndim == a.ndim == g.ndim == 1 and w.size == a.size == g.size and w.size > 0):
            raise InvalidInput("coupling law needs equal-length, non-empty columns")
        if np.any(a <= 0) or np.any(g <= 0):
            raise InvalidInput("coupling law needs A > 0 and gamma > 0")
        if np.any(np.diff(w) <= 0):
            raise InvalidInput("wavelengths must be strictly increasing")
        for name, arr in (("wavelengths", w), ("amplitudes", a), ("gammas", g)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def parameters(self, wavelength: float, extrapolate: bool = False) -> tuple[float, float]:
        w = self.wavelengths
        if w.size == 1:
            if np.isclose(wavelength, w[0]) or extrapolate:
                return float(self.amplitudes[0]), float(self.gammas[0])
            raise WavelengthOutOfRange(f"{wavelength} nm not in calibrated table")
        lo, hi = w[0], w[-1]
        if not (lo - 1e-9 <= wavelength <= hi + 1e-9) and not extrapolate:
            raise WavelengthOutOfRange(f"{wavelength} nm outside calibrated range [{lo}, {hi}] nm")
        i = int(np.clip(np.searchsorted(w, wavelength) - 1, 0, w.size - 2))
        s = (wavelength - w[i]) / (w[i + 1] - w[i])
        log_a = (1 - s) * math.log(self.amplitudes[i]) + s * math.log(self.amplitudes[i + 1])
        gamma = (1 - s) * self.gammas[i] + s * self.gammas[i + 1]
        if gamma <= 0:
            raise WavelengthOutOfRange(f"extrapolated decay rate is not positive at {wavelength} nm")
        return math.exp(log_a), float(gamma)

    def coupling(self, separation, wavelength: float, extrapolate: bool = False):
        amp, gamma = self.parameters(wavelength, extrapolate)
        return amp * np.exp(-gamma * np.asarray(separation, dtype=float))


def fit_coupling_law(samples: Mapping[float, Iterable[tuple[float, float]]]) -> CouplingLaw:
    """Least-squares fit of ``ln t = ln A - gamma s`` for each wavelength."""
    rows = []
    for wavelength in sorted(samples):
        pts = np.asarray(list(samples[wavelength]), dtype=float).reshape(-1, 2)
        s, t = pts[:, 0], pts[:, 1]
        if len(s) < 3 or np.unique(s).size < 2:
            raise InsufficientSamples(f"need >= 3 samples over distinct separations at {wavelength} nm")
        if np.any(t <= 0):
            raise NonPositiveCoupling(f"non-positive coupling sample at {wavelength} nm")
        y = np.log(t)
        slope, intercept = np.polyfit(s, y, 1)
        resid = y - (intercept + slope * s)
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
        diag = {
            "wavelength_nm": float(wavelength),
            "r_squared": r2,
            "rms_log_residual": float(np.sqrt(np.mean(resid**2))),
            "s_min": float(s.min()),
            "s_max": float(s.max()),
        }
        rows.append((float(wavelength), math.exp(intercept), -slope, diag))
    if not rows:
        raise InsufficientSamples("no samples")
    w, a, g, d = zip(*rows)
    return CouplingLaw(np.array(w), np.array(a), np.array(g), tuple(d))


def calibrate(profile: IndexProfile, separations: Sequence[float] = DEFAULT_SEPARATIONS,
              wavelengths: Sequence[float] = DEFAULT_WAVELENGTHS, extent: float = 80.0,
              spacing: float = 0.5, threads: int | None = None) -> CouplingLaw:
    """Solve the two-waveguide problem on a separation x wavelength grid and fit."""
    jobs = [(w, s) for w in wavelengths for s in separations]

    def work(job):
        w, s = job
        return solve_two_waveguide(profile, s, w, extent=extent, spacing=spacing).t

    with ThreadPoolExecutor(max_workers=threads) as pool:
        ts = list(pool.map(work, jobs))
    samples: dict[float, list] = {float(w): [] for w in wavelengths}
    for (w, s), t in zip(jobs, ts):
        samples[float(w)].append((float(s), t))
    law = fit_coupling_law(samples)
    for d in law.diagnostics:
        log.info("calibrated %.1f nm: R^2 = %.6f", d["wavelength_nm"], d["r_squared"])
    return law


def spacing_for_coupling(law: CouplingLaw, wavelength: float, t, extrapolate: bool = False):
    """Separation (um) that realises coupling ``t`` (1/cm)."""
    amp, gamma = law.parameters(wavelength, extrapolate)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise NonPositiveCoupling("target coupling must be positive")
    if np.any(t > amp * (1 + 1e-15)):
        raise CouplingTooStrong(f"coupling {t.max():.6g}/cm exceeds A = {amp:.6g}/cm")
    s = np.maximum(np.log(amp / t) / gamma, 0.0)
    return float(s) if s.ndim == 0 else s


def write_law_csv(law: CouplingLaw, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["wavelength_nm", "A_per_cm", "gamma_per_um"])
        for row in zip(law.wavelengths, law.amplitudes, law.gammas):
            w.writerow([repr(float(v)) for v in row])


def read_law_csv(path) -> CouplingLaw:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["wavelength_nm", "A_per_cm", "gamma_per_um"]:
            raise InvalidInput(f"{path}: unexpected coupling-law header {reader.fieldnames}")
        rows = [(float(r["wavelength_nm"]), float(r["A_per_cm"]), float(r["gamma_per_um"])) for r in reader]
    if not rows:
        raise InvalidInput(f"{path}: empty coupling law")
    w, a, g = map(np.array, zip(*rows))
    return CouplingLaw(w, a, g)


@dataclass(frozen=True, eq=False)
class WaveguideLayout:
    """Rectilinear waveguide trajectories sampled on a uniform z grid.

    ``x[k, ix]`` is the position (um) of column ``ix`` at ``z[k]`` (cm); rows
    likewise in ``y``. Waveguide ``(ix, iy)`` sits at ``(x[:, ix], y[:, iy])``.
    """

    z: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if x.shape[0] != z.size or y.shape[0] != z.size:
            raise InvalidInput("layout arrays must share the z grid")
        if z.size > 1 and np.any(np.diff(z) <= 0):
            raise InvalidInput("z samples must be increasing")
        gaps = [np.diff(a, axis=1) for a in (x, y) if a.shape[1] > 1]
        if any(np.any(g <= 0) for g in gaps):
            raise OverlapError("waveguides coincide or cross at some z sample")
        if z.size > 1 and gaps:
            jump = max(np.abs(np.diff(a, axis=0)).max() for a in (x, y))
            if jump > min(g.min() for g in gaps):
                raise InvalidInput("waveguide paths jump by more than the minimum spacing between samples")
        for name, arr in (("z", z), ("x", x), ("y", y)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.x.shape[1], self.y.shape[1])

    @property
    def n_waveguides(self) -> int:
        return self.shape[0] * self.shape[1]

    def positions_at(self, z: float) -> tuple[np.ndarray, np.ndarray]:
        """Flat (x-major) waveguide coordinates at ``z``, linear in between samples."""
        if self.z.size == 1:
            xc, yc = self.x[0], self.y[0]
        else:
            xc = np.array([np.interp(z, self.z, col) for col in self.x.T])
            yc = np.array([np.interp(z, self.z, col) for col in self.y.T])
        return flat_positions(xc, yc)

    def min_spacing(self) -> float:
        gaps = [np.diff(a, axis=1).min() for a in (self.x, self.y) if a.shape[1] > 1]
        return float(min(gaps)) if gaps else math.inf


def flat_positions(x_cols: np.ndarray, y_rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xs = np.repeat(np.asarray(x_cols, dtype=float), len(y_rows))
    ys = np.tile(np.asarray(y_rows, dtype=float), len(x_cols))
    return xs, ys


def lattice_positions(spec: LatticeSpec, law: CouplingLaw, wavelength: float, phi_x: float,
                      phi_y: float, min_spacing: float = MIN_SPACING) -> tuple[np.ndarray, np.ndarray]:
    """Column and row coordinates realising the nearest-neighbour couplings at one phase pair."""
    coords = []
    for axis, phi in (("x", phi_x), ("y", phi_y)):
        size = spec.axis(axis)[0]
        if size == 1:
            coords.append(np.zeros(1))
            continue
        t = hopping_amplitude(spec, axis, np.arange(size - 1), phi)
        if np.any(t <= 0):
            raise NonPositiveCoupling(f"{axis}-couplings are not all positive; lattice not realisable")
        gaps = spacing_for_coupling(law, wavelength, t)
        gaps = np.atleast_1d(gaps)
        if gaps.min() < min_spacing:
            raise OverlapError(f"{axis}-spacing {gaps.min():.3f} um below minimum {min_spacing} um")
        coords.append(np.concatenate([[0.0], np.cumsum(gaps)]))
    return coords[0], coords[1]


def build_layout(spec: LatticeSpec, law: CouplingLaw, wavelength: float, schedule: PumpSchedule,
                 z_samples: int, min_spacing: float = MIN_SPACING) -> WaveguideLayout:
    """Sample the rectilinear layout that follows ``schedule`` along z."""
    if z_samples < 1:
        raise InvalidInput("z_samples must be >= 1")
    z = np.linspace(0.0, schedule.z_total, z_samples) if z_samples > 1 else np.zeros(1)
    xs, ys = [], []
    for zk in z:
        xc, yc = lattice_positions(spec, law, wavelength, *schedule.phases(zk), min_spacing=min_spacing)
        xs.append(xc)
        ys.append(yc)
    return WaveguideLayout(z, np.array(xs), np.array(ys))


def write_layout_csv(layout: WaveguideLayout, path) -> None:
    nx, ny = layout.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["z_cm", "wg_index", "ix", "iy", "x_um", "y_um"])
        for k, zk in enumerate(layout.z):
            for ix in range(nx):
                for iy in range(ny):
                    w.writerow([repr(float(zk)), ix * ny + iy, ix, iy,
                                repr(float(layout.x[k, ix])), repr(float(layout.y[k, iy]))])


def read_layout_csv(path) -> WaveguideLayout:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["z_cm", "wg_index", "ix", "iy", "x_um", "y_um"]
        if reader.fieldnames != expected:
            raise InvalidInput(f"{path}: unexpected layout header {reader.fieldnames}")
        rows = list(reader)
    if not rows:
        raise InvalidInput(f"{path}: empty layout")
    zs = sorted({float(r["z_cm"]) for r in rows})
    nx = max(int(r["ix"]) for r in rows) + 1
    ny = max(int(r["iy"]) for r in rows) + 1
    zi = {z: k for k, z in enumerate(zs)}
    x = np.full((len(zs), nx), np.nan)
    y = np.full((len(zs), ny), np.nan)
    for r in rows:
        k = zi[float(r["z_cm"])]
        x[k, int(r["ix"])] = float(r["x_um"])
        y[k, int(r["iy"])] = float(r["y_um"])
    if np.isnan(x).any() or np.isnan(y).any():
        raise InvalidInput(f"{path}: layout is missing waveguides at some z")
    return WaveguideLayout(np.array(zs), x, y)
