"""Paraxial z-evolution of light in the pumped array, and facet metrics."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .design import DESIGN_WAVELENGTH, CouplingLaw, WaveguideLayout, flat_positions, lattice_positions
from .errors import InvalidInput, NotNormalized, OutOfRange, StepTooLarge
from .model import (DEFAULT_CUTOFF, DirectSumOperator, LatticeSpec, PumpSchedule, build_geometric_model,
                    direct_sum_operator, geometric_matrix)
from .spectral import region_weights

__all__ = [
    "FieldState",
    "PumpResult",
    "PumpSchedule",
    "adiabatic_track",
    "evolve",
    "inject",
    "pump_metrics",
    "run_pump",
    "write_intensity_csv",
    "write_metrics_json",
    "write_pgm",
]

MAX_PHASE_PER_STEP = 0.1
NORM_TOL = 1e-12

NAMED_SITES = {
    "left-center": lambda nx, ny: (0, ny // 2),
    "right-center": lambda nx, ny: (nx - 1, ny // 2),
    "bottom-center": lambda nx, ny: (nx // 2, 0),
    "top-center": lambda nx, ny: (nx // 2, ny - 1),
    "bottom-left": lambda nx, ny: (0, 0),
    "bottom-right": lambda nx, ny: (nx - 1, 0),
    "top-left": lambda nx, ny: (0, ny - 1),
    "top-right": lambda nx, ny: (nx - 1, ny - 1),
    "center": lambda nx, ny: (nx // 2, ny // 2),
}


@dataclass(frozen=True, eq=False)
class FieldState:
    """Normalised complex amplitudes over the x-major site basis."""

    amplitudes: np.ndarray
    shape: tuple[int, int]

    def __post_init__(self):
        a = np.array(self.amplitudes, dtype=complex).ravel()
        if a.size != self.shape[0] * self.shape[1]:
            raise InvalidInput(f"{a.size} amplitudes do not fit lattice {self.shape}")
        if abs(np.linalg.norm(a) - 1.0) > NORM_TOL:
            raise NotNormalized(f"field norm {np.linalg.norm(a):.15f} != 1")
        a.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "shape", tuple(self.shape))

    @property
    def intensity(self) -> np.ndarray:
        return (np.abs(self.amplitudes) ** 2).reshape(self.shape)


def _shape(spec) -> tuple[int, int]:
    if isinstance(spec, LatticeSpec):
        return spec.shape
    shape = getattr(spec, "shape", spec)
    return (int(shape[0]), int(shape[1]))


def inject(spec: LatticeSpec, site: str | tuple[int, int]) -> FieldState:
    """Unit amplitude on one waveguide: a named site or explicit (ix, iy)."""
    nx, ny = spec.shape
    if isinstance(site, str):
        if site not in NAMED_SITES:
            raise InvalidInput(f"unknown injection site {site!r}; choose from {sorted(NAMED_SITES)}")
        ix, iy = NAMED_SITES[site](nx, ny)
    else:
        ix, iy = (int(v) for v in site)
    if not (0 <= ix < nx and 0 <= iy < ny):
        raise OutOfRange(f"site ({ix}, {iy}) outside the {nx} x {ny} lattice")
    a = np.zeros(nx * ny, dtype=complex)
    a[spec.index(ix, iy)] = 1.0
    return FieldState(a, (nx, ny))


def pump_metrics(intensity, spec, edge_depth: int = 2, corner_block: int = 2) -> dict:
    """Side-strip and corner-block occupations plus the intensity centroid."""
    nx, ny = _shape(spec)
    w = np.asarray(intensity, dtype=float)
    if w.size != nx * ny:
        raise InvalidInput(f"intensity of size {w.size} does not fit lattice {(nx, ny)}")
    w = w.reshape(nx, ny)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise NotNormalized(f"intensity must be non-negative and sum to 1 (sum {w.sum():.12f})")
    sides, corners = region_weights(w, edge_depth, corner_block)
    metrics = {side: val for side, val in sides.items()}
    metrics.update({f"corner_{k}": v for k, v in corners.items()})
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    metrics["centroid_x"] = float((w * ix).sum())
    metrics["centroid_y"] = float((w * iy).sum())
    return metrics


@dataclass(eq=False)
class PumpResult:
    final: FieldState
    intensity: np.ndarray  # (nx, ny)
    metrics: dict
    snapshots: list = field(default_factory=list)  # (z, FieldState)
    norm_drift: float = 0.0
    steps: int = 0
    per_wavelength: dict = field(default_factory=dict)


def _polish(v: np.ndarray) -> np.ndarray:
    """One Newton-Schulz step towards the nearest unitary."""
    n = v.shape[0]
    return v @ (1.5 * np.eye(n, dtype=v.dtype) - 0.5 * (v.conj().T @ v))


def _propagator(h: np.ndarray, dz: float, dtype) -> tuple[np.ndarray, float]:
    """exp(-i h dz) in ``dtype`` and the largest |eigenvalue| of h."""
    e, v = np.linalg.eigh(h)
    ext = np.dtype(dtype) == np.clongdouble
    real = np.longdouble if ext else float
    v = _polish(v.astype(dtype if np.iscomplexobj(v) else real))
    ph = -e.astype(real) * real(dz)
    return (v * (np.cos(ph) + 1j * np.sin(ph))) @ v.conj().T, float(np.abs(e).max())


class _AxisCache:
    """Reuses the last step propagator while an axis Hamiltonian is unchanged."""

    def __init__(self, dz: float, dtype):
        self.dz, self.dtype = dz, dtype
        self.h = self.u = None
        self.norm = 0.0

    def __call__(self, h: np.ndarray):
        if self.h is None or not np.array_equal(h, self.h):
            self.u, self.norm = _propagator(h, self.dz, self.dtype)
            self.h = h
        return self.u, self.norm


def evolve(H_of_z: Callable[[float], object], psi0: FieldState, z_total: float, steps: int,
           snapshot_every: int | None = None, edge_depth: int = 2, corner_block: int = 2) -> PumpResult:
    """Integrate i d(psi)/dz = H(z) psi with exact midpoint unitaries.

    Each step applies exp(-i H(z_mid) dz) built from the spectral
    decomposition. StepTooLarge is raised if ||H|| dz exceeds 0.1 on any step.

    When ``H_of_z`` returns a :class:`DirectSumOperator` the step factorises
    into exp(-i Hx dz) (x) exp(-i Hy dz), applied on the (nx, ny) amplitude
    grid in extended precision so that rounding does not accumulate into the
    norm over long runs.
    """
    if steps < 1 or not z_total > 0:
        raise InvalidInput("need steps >= 1 and z_total > 0")
    dz = z_total / steps
    shape = psi0.shape
    snaps = [(0.0, psi0)] if snapshot_every else []
    factored = isinstance(H_of_z(0.5 * dz), DirectSumOperator)
    if factored:
        cache_x, cache_y = _AxisCache(dz, np.clongdouble), _AxisCache(dz, np.clongdouble)
        psi = psi0.amplitudes.reshape(shape).astype(np.clongdouble)
    else:
        psi = psi0.amplitudes.copy()
    drift = 0.0
    for k in range(steps):
        h = H_of_z((k + 0.5) * dz)
        if factored:
            ux, nx = cache_x(h.hx)
            uy, ny = cache_y(h.hy)
            norm = nx + ny
        else:
            u, norm = _propagator(np.asarray(h), dz, complex)
        if norm * dz > MAX_PHASE_PER_STEP:
            raise StepTooLarge(f"||H|| dz = {norm * dz:.3g} > {MAX_PHASE_PER_STEP}; use more steps")
        psi = ux @ psi @ uy.T if factored else u @ psi
        if snapshot_every and (k + 1) % snapshot_every == 0:
            out = psi.astype(complex).ravel()
            drift = max(drift, abs(float(np.sqrt(np.sum(np.abs(psi) ** 2))) - 1.0))
            snaps.append(((k + 1) * dz, FieldState(out, shape)))
    drift = max(drift, abs(float(np.sqrt(np.sum(np.abs(psi) ** 2))) - 1.0))
    final = FieldState(psi.astype(complex).ravel(), shape)
    intensity = final.intensity
    return PumpResult(final, intensity, pump_metrics(intensity, shape, edge_depth, corner_block),
                      snaps, drift, steps)


def adiabatic_track(H_of_z: Callable[[float], object], v0, z_points: Sequence[float]):
    """Follow the instantaneous eigenstate continuously connected to ``v0``.

    Returns (vectors, energies) with one row per z point; at each point the
    eigenvector of largest overlap with the previous one is chosen.
    """
    prev = np.asarray(v0, dtype=complex)
    prev = prev / np.linalg.norm(prev)
    vecs, energies = [], []
    for z in z_points:
        e, v = np.linalg.eigh(np.asarray(H_of_z(z)))
        ov = v.conj().T @ prev
        i = int(np.argmax(np.abs(ov)))
        cur = v[:, i] * np.exp(1j * np.angle(ov[i]))
        vecs.append(cur)
        energies.append(e[i])
        prev = cur
    return np.array(vecs), np.array(energies)


def nearest_hamiltonian(spec: LatticeSpec, schedule: PumpSchedule) -> Callable[[float], DirectSumOperator]:
    def h(z):
        return direct_sum_operator(spec, *schedule.phases(z))

    return h


def geometric_hamiltonian(spec: LatticeSpec, schedule: PumpSchedule, law: CouplingLaw,
                          wavelength: float, design_wavelength: float = DESIGN_WAVELENGTH,
                          cutoff: float = DEFAULT_CUTOFF, eta: float = 1.0) -> Callable[[float], np.ndarray]:
    """H(z) of the fabricated layout (designed at ``design_wavelength``) seen at ``wavelength``."""
    law.parameters(wavelength)

    def h(z):
        xc, yc = lattice_positions(spec, law, design_wavelength, *schedule.phases(z))
        xs, ys = flat_positions(xc, yc)
        return geometric_matrix(xs, ys, law, wavelength, cutoff=cutoff, eta=eta)

    return h


def _layout_hamiltonian(layout: WaveguideLayout, law: CouplingLaw, wavelength: float,
                        cutoff: float, eta: float) -> Callable[[float], np.ndarray]:
    law.parameters(wavelength)

    def h(z):
        return build_geometric_model(layout, law, wavelength, z, cutoff, eta).matrix

    return h


def norm_bound(spec: LatticeSpec) -> float:
    """Gershgorin bound on ||H|| of the nearest-neighbour model."""
    bound = 0.0
    for axis in ("x", "y"):
        size, tbar, lam, _ = spec.axis(axis)
        if size > 1:
            bound += 2 * (abs(tbar) + abs(lam))
    return bound


def auto_steps(z_total: float, bound: float, max_phase: float = MAX_PHASE_PER_STEP) -> int:
    return max(1, math.ceil(z_total * bound / max_phase))


def run_pump(spec: LatticeSpec, schedule: PumpSchedule, injection, model: str = "nearest",
             wavelengths: Sequence[float] = (DESIGN_WAVELENGTH,), law: CouplingLaw | None = None,
             steps: int | None = None, design_wavelength: float = DESIGN_WAVELENGTH,
             cutoff: float = DEFAULT_CUTOFF, eta: float = 1.0, edge_depth: int = 2,
             corner_block: int = 2, threads: int | None = None,
             layout: WaveguideLayout | None = None) -> PumpResult:
    """Evolve an injected beam through the pumped array, averaging intensity over wavelengths.

    The nearest-neighbour model is wavelength independent and is evolved
    once. The geometric model re-derives the couplings of one fixed layout at
    every wavelength; it is derived from ``schedule`` at ``design_wavelength``
    unless a prebuilt ``layout`` is given. ``final`` holds the state at the
    first wavelength.
    """
    psi0 = injection if isinstance(injection, FieldState) else inject(spec, injection)
    wavelengths = [float(w) for w in wavelengths]
    if not wavelengths:
        raise InvalidInput("need at least one wavelength")
    if model == "nearest":
        builders = {wavelengths[0]: nearest_hamiltonian(spec, schedule)}
        bound = norm_bound(spec)
    elif model == "geometric":
        if law is None:
            raise InvalidInput("the geometric model needs a coupling law")
        if layout is not None:
            if layout.shape != spec.shape:
                raise InvalidInput(f"layout shape {layout.shape} does not match lattice {spec.shape}")
            builders = {w: _layout_hamiltonian(layout, law, w, cutoff, eta) for w in wavelengths}
        else:
            builders = {w: geometric_hamiltonian(spec, schedule, law, w, design_wavelength, cutoff, eta)
                        for w in wavelengths}
        zs = np.linspace(0.0, schedule.z_total, 9)
        bound = 1.25 * max(np.abs(h(z)).sum(axis=1).max() for h in builders.values() for z in zs)
    else:
        raise InvalidInput(f"model must be 'nearest' or 'geometric', got {model!r}")
    n_steps = steps or auto_steps(schedule.z_total, bound)

    def work(w):
        return evolve(builders[w], psi0, schedule.z_total, n_steps,
                      edge_depth=edge_depth, corner_block=corner_block)

    keys = list(builders)
    if threads == 1 or len(keys) == 1:
        results = [work(w) for w in keys]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, keys))
    if len(results) == 1:
        results[0].per_wavelength = {w: results[0].intensity for w in wavelengths}
        return results[0]
    intensity = np.mean([r.intensity for r in results], axis=0)
    return PumpResult(
        final=results[0].final,
        intensity=intensity,
        metrics=pump_metrics(intensity, spec, edge_depth, corner_block),
        norm_drift=max(r.norm_drift for r in results),
        steps=n_steps,
        per_wavelength={w: r.intensity for w, r in zip(keys, results)},
    )


def write_intensity_csv(intensity: np.ndarray, path) -> None:
    nx, ny = intensity.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ix", "iy", "intensity"])
        for ix in range(nx):
            for iy in range(ny):
                w.writerow([ix, iy, repr(float(intensity[ix, iy]))])


def pgm_bytes(intensity: np.ndarray) -> bytes:
    """Binary 8-bit graymap of an (nx, ny) map, top row first, scaled to its maximum."""
    nx, ny = intensity.shape
    peak = float(intensity.max())
    scaled = np.zeros_like(intensity) if peak <= 0 else np.rint(255 * intensity / peak)
    pixels = np.clip(scaled, 0, 255).astype(np.uint8).T[::-1]  # rows: iy = ny-1 .. 0
    return f"P5\n{nx} {ny}\n255\n".encode("ascii") + pixels.tobytes()


def write_pgm(intensity: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(intensity))


def read_pgm(path) -> np.ndarray:
    """Pixel values of a file written by write_pgm, as an (nx, ny) array."""
    data = open(path, "rb").read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise InvalidInput(f"{path}: not a binary PGM")
    nx, ny = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos + 1: pos + 1 + nx * ny], dtype=np.uint8).reshape(ny, nx)
    return pixels[::-1].T.copy()


def write_metrics_json(metrics: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(metrics, fh, sort_keys=True, indent=2)
        fh.write("\n")
