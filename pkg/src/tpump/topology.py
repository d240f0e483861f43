"""First and second Chern numbers of the Harper pump family.

Bloch families are callables returning Hamiltonian matrices. They are called
with broadcastable arrays and should return a stack ``(..., n, n)``; callables
that only accept scalars are evaluated point by point.

Orientation conventions: the 2-torus is ordered (phi, k). The 4-torus is
oriented (phi_x, k_x, phi_y, k_y), each pump phase paired with its own
momentum, so that the second Chern number of a direct sum equals the sum of
products of the factors' first Chern numbers.
"""

from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import GapClosure, GridTooCoarse, InvalidInput

TWO_PI = 2.0 * math.pi
GAP_TOL = 1e-6
# positions of (phi_x, k_x, phi_y, k_y) in the bloch4(phi_x, phi_y, k_x, k_y) signature
ORIENTATION_4D = (0, 2, 1, 3)


@dataclass(frozen=True)
class ParamGrid:
    counts: tuple[int, ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) not in (2, 4):
            raise InvalidInput("parameter grids are 2D or 4D")
        if min(counts) < 4:
            raise InvalidInput("need at least 4 samples per dimension")
        labels = self.labels
        if labels is None:
            labels = ("phi", "k") if len(counts) == 2 else ("phi_x", "phi_y", "k_x", "k_y")
        if len(labels) != len(counts):
            raise InvalidInput("one label per grid dimension")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "labels", tuple(labels))

    @classmethod
    def square(cls, n: int, dim: int = 2) -> "ParamGrid":
        return cls((n,) * dim)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(0.0, TWO_PI, n, endpoint=False) for n in self.counts]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")

    @property
    def cell_volume(self) -> float:
        return math.prod(TWO_PI / n for n in self.counts)


@dataclass(frozen=True)
class ChernReport:
    quantity: str
    band_or_gap: str
    grid: ParamGrid
    raw: float
    value: int

    def to_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "band_or_gap": self.band_or_gap,
            "grid": list(self.grid.counts),
            "raw": self.raw,
            "value": self.value,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def evaluate_family(family: Callable, *coords) -> np.ndarray:
    """Stack of matrices ``family(*coords)`` over broadcast coordinate arrays."""
    coords = np.broadcast_arrays(*[np.asarray(c, dtype=float) for c in coords])
    shape = coords[0].shape
    try:
        out = np.asarray(family(*coords))
        if out.ndim == len(shape) + 2 and out.shape[: len(shape)] == shape:
            return out
    except (TypeError, ValueError):
        pass
    flat = [c.ravel() for c in coords]
    mats = [np.asarray(family(*(float(f[i]) for f in flat))) for i in range(flat[0].size)]
    n = mats[0].shape[-1]
    return np.array(mats).reshape(shape + (n, n))


def _check_band_gap(energies: np.ndarray, band_set: Sequence[int], tol: float):
    n = energies.shape[-1]
    inside = sorted(set(band_set))
    if not inside or inside[0] < 0 or inside[-1] >= n:
        raise InvalidInput(f"band set {band_set} not within 0..{n - 1}")
    outside = [i for i in range(n) if i not in inside]
    if not outside:
        return
    sep = np.abs(energies[..., inside][..., :, None] - energies[..., outside][..., None, :])
    if sep.min() <= tol:
        raise GapClosure(f"bands {inside} touch the rest of the spectrum (min separation {sep.min():.3g})")


def _projectors(vectors: np.ndarray, band_set: Sequence[int]) -> np.ndarray:
    v = vectors[..., list(band_set)]
    return v @ np.swapaxes(v.conj(), -1, -2)


def berry_curvature(bloch: Callable, band_set: Sequence[int], point: Sequence[float],
                    delta: float = 1e-4) -> float:
    """Chern density Im Tr P[d_phi P, d_k P] at ``point`` = (phi, k)."""
    phi, k = point
    shifts = [(0, 0), (delta, 0), (-delta, 0), (0, delta), (0, -delta)]
    mats = evaluate_family(bloch, [phi + a for a, _ in shifts], [k + b for _, b in shifts])
    e, v = np.linalg.eigh(mats)
    _check_band_gap(e, band_set, GAP_TOL * max(1.0, np.abs(e).max()))
    p = _projectors(v, band_set)
    d_phi = (p[1] - p[2]) / (2 * delta)
    d_k = (p[3] - p[4]) / (2 * delta)
    c = np.trace(p[0] @ (d_phi @ d_k - d_k @ d_phi))
    return float(c.imag)


def link_field_strength(vectors: np.ndarray) -> np.ndarray:
    """Lattice field strength on each plaquette of a periodic (n1, n2) grid.

    ``vectors`` has shape (n1, n2, dim, m): the m occupied states at each
    point. Links are determinants of overlap matrices between neighbours and
    the plaquette phase is the principal-branch log of their product.
    """
    def link(axis):
        nb = np.roll(vectors, -1, axis=axis)
        u = np.linalg.det(np.swapaxes(vectors.conj(), -1, -2) @ nb)
        return u / np.abs(u)

    u1, u2 = link(0), link(1)
    plaquette = u1 * np.roll(u2, -1, axis=0) * np.conj(np.roll(u1, -1, axis=1)) * np.conj(u2)
    return np.angle(plaquette)


def chern_from_vectors(vectors: np.ndarray) -> tuple[float, float]:
    """(raw Chern sum, largest |plaquette phase|) for occupied ``vectors``."""
    f = link_field_strength(vectors)
    return math.fsum(f.ravel()) / TWO_PI, float(np.abs(f).max())


def chern_1(bloch: Callable, band_set: Sequence[int], grid: ParamGrid | None = None,
            label: str | None = None) -> ChernReport:
    """First Chern number of ``band_set`` over the (phi, k) torus."""
    grid = grid or ParamGrid.square(48)
    if len(grid.counts) != 2:
        raise InvalidInput("chern_1 needs a 2D grid")
    mats = evaluate_family(bloch, *grid.mesh())
    e, v = np.linalg.eigh(mats)
    _check_band_gap(e, band_set, GAP_TOL * max(1.0, np.abs(e).max()))
    raw, fmax = chern_from_vectors(v[..., sorted(set(band_set))])
    if fmax > math.pi / 2:
        raise GridTooCoarse(f"plaquette phase {fmax:.3f} exceeds pi/2; refine the grid")
    name = label or "bands-" + "-".join(str(b) for b in sorted(set(band_set)))
    return ChernReport("chern1", name, grid, raw, int(round(raw)))


def chern_2_product(nu_x: Sequence[int], nu_y: Sequence[int], pairs_below_gap) -> int:
    """Sum of nu_x[m] * nu_y[n] over the (zero-based) band pairs below a gap."""
    return int(sum(nu_x[m] * nu_y[n] for m, n in pairs_below_gap))


def band_ranges(bloch: Callable, n: int = 64) -> list[tuple[float, float]]:
    """(min, max) of every band of a (phi, k) family over an n x n torus grid."""
    g = np.linspace(0.0, TWO_PI, n, endpoint=False)
    e = np.linalg.eigvalsh(evaluate_family(bloch, *np.meshgrid(g, g, indexing="ij")))
    e = e.reshape(-1, e.shape[-1])
    return [(float(lo), float(hi)) for lo, hi in zip(e.min(axis=0), e.max(axis=0))]


def minkowski_gaps(bands_x, bands_y) -> list[tuple[float, float]]:
    """Open gaps of the union of all pairwise band sums, ascending."""
    sums = sorted((ax + bx, ay + by) for (ax, ay), (bx, by) in itertools.product(bands_x, bands_y))
    merged = []
    for lo, hi in sums:
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [(a[1], b[0]) for a, b in zip(merged, merged[1:])]


def pairs_below_gap(bands_x, bands_y, gap_energy: float) -> list[tuple[int, int]]:
    """Band pairs whose summed band lies below ``gap_energy``; GapClosure if one straddles it."""
    pairs = []
    for (m, (ax, ay)), (n, (bx, by)) in itertools.product(enumerate(bands_x), enumerate(bands_y)):
        lo, hi = ax + bx, ay + by
        if hi < gap_energy:
            pairs.append((m, n))
        elif lo <= gap_energy:
            raise GapClosure(f"band pair ({m}, {n}) spans energy {gap_energy}")
    return pairs


def _second_chern_density(p: np.ndarray, dp: Sequence[np.ndarray]) -> np.ndarray:
    """eps_{abcd} tr(P dP_a dP_b P dP_c dP_d) at each point, derivatives in oriented order."""
    a = [[p @ dp[i] @ dp[j] for j in range(4)] for i in range(4)]
    f = {(i, j): a[i][j] - a[j][i] for i in range(4) for j in range(i + 1, 4)}

    def tr(x, y):
        return np.einsum("...ij,...ji->...", x, y)

    return 2 * (tr(f[0, 1], f[2, 3]) - tr(f[0, 2], f[1, 3]) + tr(f[0, 3], f[1, 2]))


def chern_2_direct(bloch4: Callable, gap_energy: float, grid: ParamGrid | None = None,
                   delta: float = 1e-4, label: str | None = None, threads: int | None = None,
                   chunk: int = 2048) -> ChernReport:
    """Second Chern number of the states below ``gap_energy`` on the 4-torus.

    ``bloch4`` takes (phi_x, phi_y, k_x, k_y). Projector derivatives are
    central differences with step ``delta`` at each grid point, and the
    integral is a compensated Riemann sum over the periodic grid.
    """
    grid = grid or ParamGrid.square(12, 4)
    if len(grid.counts) != 4:
        raise InvalidInput("chern_2_direct needs a 4D grid")
    pts = np.stack([m.ravel() for m in grid.mesh()])
    blocks = [pts[:, i:i + chunk] for i in range(0, pts.shape[1], chunk)]
    n_below: set[int] = set()

    def projector(coords):
        e, v = np.linalg.eigh(evaluate_family(bloch4, *coords))
        dist = np.abs(e - gap_energy).min()
        if dist <= GAP_TOL * max(1.0, np.abs(e).max()):
            raise GapClosure(f"an eigenvalue reaches the gap energy {gap_energy}")
        below = (e < gap_energy).sum(axis=-1)
        n_below.update(np.unique(below).tolist())
        if len(n_below) != 1:
            raise GapClosure(f"number of states below {gap_energy} changes over the torus")
        m = int(below.flat[0])
        return _projectors(v, range(m))

    def work(block):
        p = projector(block)
        dp = []
        for axis in ORIENTATION_4D:
            step = np.zeros((4, 1))
            step[axis] = delta
            dp.append((projector(block + step) - projector(block - step)) / (2 * delta))
        return _second_chern_density(p, dp)

    if threads == 1:
        dens = [work(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            dens = list(pool.map(work, blocks))
    dens = np.concatenate(dens)
    total = math.fsum(dens.real) * grid.cell_volume
    raw = -total / (8 * math.pi**2)
    value = int(round(raw))
    if abs(raw - value) >= 0.05:
        raise GridTooCoarse(f"second Chern sum {raw:.4f} is not within 0.05 of an integer")
    return ChernReport("chern2", label or f"gap@{gap_energy:g}", grid, raw, value)
