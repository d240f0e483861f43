"""Diagonalisation, band scans along pump paths, gap detection and state classification."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidInput, NotHermitian
from .model import LatticeSpec, PumpParams

SIDES = ("left", "right", "bottom", "top")
CORNERS = ("BL", "BR", "TL", "TR")


def eig_hermitian(h, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and orthonormal eigenvector columns of a Hermitian matrix."""
    m = np.asarray(h)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInput(f"expected a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if check and m.size and np.max(np.abs(m - m.conj().T)) > 1e-12 * scale:
        raise NotHermitian("matrix differs from its conjugate transpose")
    return np.linalg.eigh(m)


@dataclass(frozen=True)
class StateClass:
    kind: str  # bulk | edge | corner | mixed
    where: str | None = None

    def __str__(self) -> str:
        return self.kind if self.where is None else f"{self.kind}:{self.where}"

    @classmethod
    def parse(cls, text: str) -> "StateClass":
        kind, _, where = text.partition(":")
        return cls(kind, where or None)

    @property
    def is_boundary(self) -> bool:
        return self.kind in ("edge", "corner")


BULK = StateClass("bulk")
MIXED = StateClass("mixed")


def Edge(side: str) -> StateClass:
    if side not in SIDES:
        raise InvalidInput(f"unknown side {side!r}")
    return StateClass("edge", side)


def Corner(which: str) -> StateClass:
    if which not in CORNERS:
        raise InvalidInput(f"unknown corner {which!r}")
    return StateClass("corner", which)


def region_weights(weights: np.ndarray, edge_depth: int = 2, corner_block: int = 2):
    """Probability in each side strip and corner block of an (nx, ny) weight map.

    Strips are omitted along an axis of length 1, corner blocks unless both
    axes are longer than 1.
    """
    nx, ny = weights.shape
    d, c = edge_depth, corner_block
    sides, corners = {}, {}
    if nx > 1:
        sides["left"] = float(weights[:d, :].sum())
        sides["right"] = float(weights[-d:, :].sum())
    if ny > 1:
        sides["bottom"] = float(weights[:, :d].sum())
        sides["top"] = float(weights[:, -d:].sum())
    if nx > 1 and ny > 1:
        corners["BL"] = float(weights[:c, :c].sum())
        corners["BR"] = float(weights[-c:, :c].sum())
        corners["TL"] = float(weights[:c, -c:].sum())
        corners["TR"] = float(weights[-c:, -c:].sum())
    return sides, corners


def classify_state(vector, spec: LatticeSpec | tuple[int, int], edge_depth: int = 2,
                   threshold: float = 0.5, corner_block: int = 2) -> StateClass:
    """Label a state bulk, edge, corner or mixed from its boundary weights."""
    shape = spec.shape if isinstance(spec, LatticeSpec) else tuple(spec)
    v = np.asarray(vector).ravel()
    if v.size != shape[0] * shape[1]:
        raise DimensionMismatch(f"vector of length {v.size} does not fit lattice {shape}")
    w = np.abs(v) ** 2
    w = (w / w.sum()).reshape(shape)
    sides, corners = region_weights(w, edge_depth, corner_block)
    if corners:
        which = max(corners, key=corners.get)
        if corners[which] >= threshold:
            return Corner(which)
    heavy = [s for s, val in sides.items() if val >= threshold]
    if len(heavy) == 1:
        return Edge(heavy[0])
    if not heavy:
        return BULK
    return MIXED


@dataclass(frozen=True, eq=False)
class BandScan:
    path: tuple[PumpParams, ...]
    energies: np.ndarray  # (samples, states), ascending per sample
    vectors: np.ndarray | None = None  # (samples, sites, states)
    labels: tuple[tuple[StateClass, ...], ...] | None = None
    continuity: np.ndarray | None = None  # max |dE| between adjacent samples

    @property
    def n_samples(self) -> int:
        return self.energies.shape[0]

    @property
    def n_states(self) -> int:
        return self.energies.shape[1]


def scan_bands(builder: Callable[[PumpParams], object], path: Sequence[PumpParams],
               keep_vectors: bool = False, spec: LatticeSpec | tuple[int, int] | None = None,
               edge_depth: int = 2, threshold: float = 0.5, corner_block: int = 2,
               threads: int | None = None) -> BandScan:
    """Diagonalise ``builder(p)`` for every ``p`` in ``path``.

    When ``spec`` is given every eigenstate is classified. Samples are
    independent; the result does not depend on ``threads``.
    """
    path = tuple(path)
    if not path:
        raise InvalidInput("empty pump path")

    def one(p):
        return eig_hermitian(builder(p))

    if threads == 1:
        results = [one(p) for p in path]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, path))
    sizes = {r[0].size for r in results}
    if len(sizes) != 1:
        raise DimensionMismatch("state count changes along the path")
    energies = np.array([r[0] for r in results])
    labels = None
    if spec is not None:
        labels = tuple(
            tuple(classify_state(vecs[:, i], spec, edge_depth, threshold, corner_block)
                  for i in range(vecs.shape[1]))
            for _, vecs in results
        )
    vectors = np.array([r[1] for r in results]) if keep_vectors else None
    continuity = np.abs(np.diff(energies, axis=0)).max(axis=1) if len(path) > 1 else np.zeros(0)
    return BandScan(path, energies, vectors, labels, continuity)


class Gap(NamedTuple):
    low: float
    high: float
    is_global: bool

    @property
    def width(self) -> float:
        return self.high - self.low


def _merge(intervals):
    out = []
    for lo, hi in sorted(intervals):
        if out and lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return out


def bulk_energies(scan: BandScan, sample: int) -> np.ndarray:
    e = scan.energies[sample]
    if scan.labels is None:
        return e
    mask = np.array([lab.kind == "bulk" for lab in scan.labels[sample]])
    return e[mask]


def find_gaps(scan: BandScan, resolution: float = 0.5) -> list[Gap]:
    """Gaps between consecutive bulk energies wider than ``resolution``.

    Global gaps are energy windows free of bulk states at every sample.
    Windows gapped only at some samples are merged and reported as local.
    """
    bands, local = [], []
    for s in range(scan.n_samples):
        e = np.sort(bulk_energies(scan, s))
        if e.size == 0:
            continue
        split = np.nonzero(np.diff(e) > resolution)[0]
        starts = np.concatenate([[0], split + 1])
        ends = np.concatenate([split, [e.size - 1]])
        bands.extend((e[a], e[b]) for a, b in zip(starts, ends))
        local.extend((e[i], e[i + 1]) for i in split)
    if not bands:
        return []
    union = _merge(bands)
    gaps = [Gap(float(a[1]), float(b[0]), True) for a, b in zip(union, union[1:])
            if b[0] - a[1] > resolution]
    for lo, hi in _merge(local):
        if not any(lo < g.high and g.low < hi for g in gaps):
            gaps.append(Gap(float(lo), float(hi), False))
    return sorted(gaps)


def diagonal_path(samples: int) -> list[PumpParams]:
    """phi_x = phi_y over [0, 2 pi) with ``samples`` points."""
    phis = np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
    return [PumpParams(p, p) for p in phis]


def write_scan_csv(scan: BandScan, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "phi_x", "phi_y", "state_index", "energy_per_cm", "class"])
        for s, p in enumerate(scan.path):
            for i, e in enumerate(scan.energies[s]):
                label = str(scan.labels[s][i]) if scan.labels is not None else ""
                w.writerow([s, repr(p.phi_x), repr(p.phi_y), i, repr(float(e)), label])
