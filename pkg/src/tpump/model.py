"""Lattice Hamiltonians of the off-diagonal Harper pump and its waveguide realisation.

Sites are flattened x-major: ``flat = ix * size_y + iy``. With that order the
2D nearest-neighbour model is ``kron(Hx, Iy) + kron(Ix, Hy)``.

Units: couplings in 1/cm, transverse distances in um, wavelengths in nm.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

from .errors import (
    InvalidInput,
    IrrationalFrequency,
    NotHermitian,
    SizeTooSmall,
)

if TYPE_CHECKING:
    from .design import CouplingLaw, WaveguideLayout

TWO_PI = 2.0 * math.pi
HERMITIAN_TOL = 1e-12
DEFAULT_CUTOFF = 0.01  # 1/cm

Frequency = Fraction | float


def as_fraction(b: Frequency, max_denominator: int = 10_000) -> Fraction:
    """Return ``b`` as a reduced fraction, or raise IrrationalFrequency."""
    if isinstance(b, Fraction):
        return b
    if isinstance(b, int):
        return Fraction(b)
    approx = Fraction(float(b)).limit_denominator(max_denominator)
    if abs(float(approx) - float(b)) > 1e-12:
        raise IrrationalFrequency(f"modulation frequency {b!r} is not a rational p/q")
    return approx


def _parse_frequency(b) -> Frequency:
    if isinstance(b, str):
        try:
            return Fraction(b.strip())
        except ValueError as exc:
            raise InvalidInput(f"bad modulation frequency {b!r}") from exc
    if isinstance(b, (Fraction, int)):
        return Fraction(b)
    return float(b)


@dataclass(frozen=True)
class LatticeSpec:
    size_x: int = 13
    size_y: int = 7
    b_x: Frequency = Fraction(1, 3)
    b_y: Frequency = Fraction(1, 3)
    tbar_x: float = 1.94
    tbar_y: float = 1.94
    lam_x: float = 1.06
    lam_y: float = 1.06
    boundary: str = "open"

    def __post_init__(self):
        object.__setattr__(self, "b_x", _parse_frequency(self.b_x))
        object.__setattr__(self, "b_y", _parse_frequency(self.b_y))
        for name in ("size_x", "size_y"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise SizeTooSmall(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        for name in ("tbar_x", "tbar_y", "lam_x", "lam_y"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.boundary not in ("open", "periodic"):
            raise InvalidInput(f"boundary must be 'open' or 'periodic', got {self.boundary!r}")

    @property
    def n_sites(self) -> int:
        return self.size_x * self.size_y

    @property
    def shape(self) -> tuple[int, int]:
        return (self.size_x, self.size_y)

    def axis(self, axis: str) -> tuple[int, float, float, Frequency]:
        """(size, tbar, lam, b) for ``axis`` in {"x", "y"}."""
        if axis == "x":
            return self.size_x, self.tbar_x, self.lam_x, self.b_x
        if axis == "y":
            return self.size_y, self.tbar_y, self.lam_y, self.b_y
        raise InvalidInput(f"axis must be 'x' or 'y', got {axis!r}")

    def index(self, ix: int, iy: int) -> int:
        return ix * self.size_y + iy

    def site(self, flat: int) -> tuple[int, int]:
        return divmod(flat, self.size_y)

    def is_realizable(self) -> bool:
        """True when every modulated coupling stays strictly positive."""
        return self.tbar_x - abs(self.lam_x) > 0 and self.tbar_y - abs(self.lam_y) > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["b_x"] = _format_frequency(self.b_x)
        d["b_y"] = _format_frequency(self.b_y)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LatticeSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInput(f"unknown LatticeSpec keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LatticeSpec":
        return cls.from_dict(json.loads(text))


def _format_frequency(b: Frequency) -> str:
    if isinstance(b, Fraction):
        return f"{b.numerator}/{b.denominator}"
    return repr(float(b))


@dataclass(frozen=True)
class PumpParams:
    phi_x: float = 0.0
    phi_y: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "phi_x", float(self.phi_x) % TWO_PI)
        object.__setattr__(self, "phi_y", float(self.phi_y) % TWO_PI)


@dataclass(frozen=True)
class PumpSchedule:
    """Linear ramps of both pump phases over a propagation length ``z_total`` (cm).

    A frozen axis has ``start == end``.
    """

    phi_x_start: float
    phi_x_end: float
    phi_y_start: float
    phi_y_end: float
    z_total: float
    shape: str = "linear"

    def __post_init__(self):
        if not self.z_total > 0:
            raise InvalidInput(f"z_total must be positive, got {self.z_total!r}")
        if self.shape != "linear":
            raise InvalidInput(f"unsupported schedule shape {self.shape!r}")

    @classmethod
    def frozen(cls, phi_x: float, phi_y: float, z_total: float) -> "PumpSchedule":
        return cls(phi_x, phi_x, phi_y, phi_y, z_total)

    def phases(self, z: float) -> tuple[float, float]:
        """Unreduced (phi_x, phi_y) at ``z``."""
        s = z / self.z_total
        return (
            self.phi_x_start + s * (self.phi_x_end - self.phi_x_start),
            self.phi_y_start + s * (self.phi_y_end - self.phi_y_start),
        )

    def at(self, z: float) -> PumpParams:
        return PumpParams(*self.phases(z))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PumpSchedule":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInput(f"unknown PumpSchedule keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    """Immutable single-particle Hamiltonian over a rectangular site basis.

    ``shape`` is (n_x, n_y) for the site map; a 1D chain has n_y == 1 and a
    magnetic-cell Bloch matrix uses (q_x, q_y).
    """

    matrix: np.ndarray
    shape: tuple[int, int] | None = None

    def __post_init__(self):
        m = np.array(self.matrix, copy=True)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidInput(f"operator must be a square matrix, got shape {m.shape}")
        shape = self.shape if self.shape is not None else (m.shape[0], 1)
        if shape[0] * shape[1] != m.shape[0]:
            raise InvalidInput(f"site map {shape} does not match dimension {m.shape[0]}")
        if m.size and np.max(np.abs(m - m.conj().T)) > HERMITIAN_TOL:
            raise NotHermitian("matrix differs from its conjugate transpose")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "shape", (int(shape[0]), int(shape[1])))

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def index(self, ix: int, iy: int) -> int:
        return ix * self.shape[1] + iy

    def site(self, flat: int) -> tuple[int, int]:
        return divmod(flat, self.shape[1])

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


def _modulation_phase(b: Frequency, index):
    # exact reduction mod q keeps the modulation strictly periodic in the index
    index = np.asarray(index)
    if isinstance(b, Fraction):
        return TWO_PI * ((b.numerator * index) % b.denominator) / b.denominator
    return TWO_PI * float(b) * index


def hopping_amplitude(spec: LatticeSpec, axis: str, index, phi: float):
    """Coupling of the bond between sites ``index`` and ``index + 1`` along ``axis``."""
    _, tbar, lam, b = spec.axis(axis)
    return _coupling(tbar, lam, b, index, phi)


def _coupling(tbar, lam, b, index, phi):
    return tbar + lam * np.cos(_modulation_phase(b, index) + phi)


def _chain(size: int, tbar: float, lam: float, b: Frequency, phi: float, boundary: str) -> np.ndarray:
    h = np.zeros((size, size))
    if size < 2:
        return h
    bonds = np.arange(size - 1)
    t = _coupling(tbar, lam, b, bonds, phi)
    h[bonds, bonds + 1] = t
    h[bonds + 1, bonds] = t
    if boundary == "periodic":
        tw = _coupling(tbar, lam, b, size - 1, phi)
        h[size - 1, 0] += tw
        h[0, size - 1] += tw
    return h


def build_1d_harper(size: int, tbar: float, lam: float, b: Frequency, phi: float,
                    boundary: str = "open") -> HermitianOperator:
    """Off-diagonal Harper chain with zero on-site energy."""
    if size < 2:
        raise SizeTooSmall(f"a chain needs at least 2 sites, got {size}")
    if boundary not in ("open", "periodic"):
        raise InvalidInput(f"bad boundary {boundary!r}")
    return HermitianOperator(_chain(size, tbar, lam, _parse_frequency(b), phi, boundary), (size, 1))


def axis_matrix(spec: LatticeSpec, axis: str, phi: float) -> np.ndarray:
    size, tbar, lam, b = spec.axis(axis)
    return _chain(size, tbar, lam, b, phi, spec.boundary)


def direct_sum_matrix(spec: LatticeSpec, phi_x: float, phi_y: float) -> np.ndarray:
    hx = axis_matrix(spec, "x", phi_x)
    hy = axis_matrix(spec, "y", phi_y)
    return np.kron(hx, np.eye(spec.size_y)) + np.kron(np.eye(spec.size_x), hy)


@dataclass(frozen=True, eq=False)
class DirectSumOperator:
    """H = Hx (x) 1 + 1 (x) Hy kept in factored form.

    Converts to the full x-major matrix on demand; propagation uses the
    factors directly.
    """

    hx: np.ndarray
    hy: np.ndarray

    def __post_init__(self):
        for name in ("hx", "hy"):
            m = np.array(getattr(self, name), copy=True)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise InvalidInput(f"{name} must be a square matrix, got shape {m.shape}")
            if np.max(np.abs(m - m.conj().T)) > HERMITIAN_TOL:
                raise NotHermitian(f"{name} differs from its conjugate transpose")
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.hx.shape[0], self.hy.shape[0])

    @property
    def matrix(self) -> np.ndarray:
        nx, ny = self.shape
        return np.kron(self.hx, np.eye(ny)) + np.kron(np.eye(nx), self.hy)

    def __array__(self, dtype=None, copy=None):
        m = self.matrix
        return m if dtype is None else m.astype(dtype)


def direct_sum_operator(spec: LatticeSpec, phi_x: float, phi_y: float) -> DirectSumOperator:
    return DirectSumOperator(axis_matrix(spec, "x", phi_x), axis_matrix(spec, "y", phi_y))


def build_2d_direct_sum(spec: LatticeSpec, pump: PumpParams) -> HermitianOperator:
    if spec.n_sites < 2:
        raise SizeTooSmall("lattice has a single site")
    return HermitianOperator(direct_sum_matrix(spec, pump.phi_x, pump.phi_y), spec.shape)


def harper_bloch(tbar: float, lam: float, b: Frequency, phi, k) -> np.ndarray:
    """Magnetic-cell Bloch matrices of the off-diagonal Harper chain.

    ``phi`` and ``k`` broadcast; the result has shape ``broadcast + (q, q)``.
    The bond leaving the cell picks up ``exp(i k)``.
    """
    frac = as_fraction(b)
    q = frac.denominator
    phi, k = np.broadcast_arrays(np.asarray(phi, dtype=float), np.asarray(k, dtype=float))
    h = np.zeros(phi.shape + (q, q), dtype=complex)
    for j in range(q):
        t = _coupling(tbar, lam, frac, j, phi)
        hop = t * np.exp(1j * k) if j == q - 1 else t.astype(complex)
        h[..., (j + 1) % q, j] += hop
        h[..., j, (j + 1) % q] += np.conj(hop)
    return h


def harper_bloch_family(spec: LatticeSpec, axis: str) -> Callable:
    """Vectorised ``(phi, k) -> (..., q, q)`` for one axis of ``spec``."""
    _, tbar, lam, b = spec.axis(axis)
    as_fraction(b)

    def family(phi, k):
        return harper_bloch(tbar, lam, b, phi, k)

    return family


def direct_sum_bloch_family(spec: LatticeSpec) -> Callable:
    """Vectorised ``(phi_x, phi_y, k_x, k_y) -> (..., q_x q_y, q_x q_y)``."""
    fx = harper_bloch_family(spec, "x")
    fy = harper_bloch_family(spec, "y")

    def family(phi_x, phi_y, k_x, k_y):
        hx = fx(phi_x, k_x)
        hy = fy(phi_y, k_y)
        qx, qy = hx.shape[-1], hy.shape[-1]
        batch = np.broadcast_shapes(hx.shape[:-2], hy.shape[:-2])
        hx = np.broadcast_to(hx, batch + (qx, qx))
        hy = np.broadcast_to(hy, batch + (qy, qy))
        out = np.einsum("...ij,kl->...ikjl", hx, np.eye(qy))
        out = out + np.einsum("ij,...kl->...ikjl", np.eye(qx), hy)
        return out.reshape(batch + (qx * qy, qx * qy))

    return family


def build_bloch(spec: LatticeSpec, k: Sequence[float], pump: PumpParams) -> HermitianOperator:
    """Bloch Hamiltonian on the q_x * q_y magnetic unit cell."""
    qx = as_fraction(spec.b_x).denominator
    qy = as_fraction(spec.b_y).denominator
    m = direct_sum_bloch_family(spec)(pump.phi_x, pump.phi_y, k[0], k[1])
    return HermitianOperator(m, (qx, qy))


def geometric_matrix(xs: np.ndarray, ys: np.ndarray, law: "CouplingLaw", wavelength: float,
                     cutoff: float = DEFAULT_CUTOFF, eta: float = 1.0,
                     extrapolate: bool = False) -> np.ndarray:
    """All-pairs coupling matrix for waveguides at flat positions ``xs``, ``ys`` (um).

    Pairs are coupled by ``A exp(-gamma s)`` with ``s = sqrt(dx^2 + (eta dy)^2)``;
    couplings below ``cutoff`` are dropped.
    """
    amp, gamma = law.parameters(wavelength, extrapolate=extrapolate)
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    dist = np.hypot(xs[:, None] - xs[None, :], eta * (ys[:, None] - ys[None, :]))
    t = amp * np.exp(-gamma * dist)
    np.fill_diagonal(t, 0.0)
    t[t < cutoff] = 0.0
    return t


def build_geometric_model(layout: "WaveguideLayout", law: "CouplingLaw", wavelength: float,
                          z: float, cutoff: float = DEFAULT_CUTOFF, eta: float = 1.0,
                          extrapolate: bool = False) -> HermitianOperator:
    """Long-range Hamiltonian of ``layout`` at propagation distance ``z`` (cm)."""
    xs, ys = layout.positions_at(z)
    m = geometric_matrix(xs, ys, law, wavelength, cutoff=cutoff, eta=eta, extrapolate=extrapolate)
    return HermitianOperator(m, layout.shape)
