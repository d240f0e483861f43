import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tpump.design import flat_positions, lattice_positions
from tpump.errors import IrrationalFrequency, NotHermitian, SizeTooSmall, WavelengthOutOfRange
from tpump.model import (
    DirectSumOperator,
    HermitianOperator,
    LatticeSpec,
    PumpParams,
    build_1d_harper,
    build_2d_direct_sum,
    build_bloch,
    build_geometric_model,
    direct_sum_matrix,
    geometric_matrix,
    harper_bloch,
    hopping_amplitude,
)
from tpump.design import WaveguideLayout

DEFAULT = LatticeSpec()


def test_defaults():
    assert DEFAULT.shape == (13, 7)
    assert DEFAULT.b_x == Fraction(1, 3) and DEFAULT.b_y == Fraction(1, 3)
    assert (DEFAULT.tbar_x, DEFAULT.lam_x) == (1.94, 1.06)
    assert DEFAULT.is_realizable()


def test_hopping_examples():
    assert hopping_amplitude(DEFAULT, "x", 0, 0.0) == pytest.approx(3.00, abs=1e-12)
    assert hopping_amplitude(DEFAULT, "x", 0, math.pi / 2) == pytest.approx(1.94, abs=1e-12)
    for phi in np.linspace(0, 2 * np.pi, 7):
        assert hopping_amplitude(DEFAULT, "y", 3, phi) == pytest.approx(hopping_amplitude(DEFAULT, "y", 0, phi), abs=1e-12)
        assert hopping_amplitude(DEFAULT, "x", 1, phi + 2 * np.pi) == pytest.approx(
            hopping_amplitude(DEFAULT, "x", 1, phi), abs=1e-12)


def test_1d_small_spectra():
    h = build_1d_harper(2, 1.0, 0.0, Fraction(1, 3), 0.0)
    assert np.allclose(np.linalg.eigvalsh(h), [-1, 1])
    t = 0.7
    h = build_1d_harper(3, t, 0.0, Fraction(1, 3), 0.0, boundary="periodic")
    assert np.allclose(np.linalg.eigvalsh(h), [-t, -t, 2 * t])
    with pytest.raises(SizeTooSmall):
        build_1d_harper(1, 1.0, 0.0, Fraction(1, 3), 0.0)


def test_1d_structure():
    h = np.asarray(build_1d_harper(13, 1.94, 1.06, Fraction(1, 3), 0.3))
    assert np.all(np.diag(h) == 0)
    assert np.allclose(h, h.T)
    assert np.count_nonzero(np.triu(h, 2)) == 0
    assert h[1, 0] == pytest.approx(1.94 + 1.06 * math.cos(0.3))


def test_1d_three_bands_with_boundary_modes():
    # three bulk bands from the magnetic-cell spectrum, open chain has in-gap states
    phis = np.linspace(0, 2 * np.pi, 60, endpoint=False)
    k = np.linspace(0, 2 * np.pi, 60, endpoint=False)
    bulk = np.linalg.eigvalsh(harper_bloch(1.94, 1.06, Fraction(1, 3), *np.meshgrid(phis, k)))
    lo, hi = bulk.min(axis=(0, 1)), bulk.max(axis=(0, 1))
    gaps = [(hi[0], lo[1]), (hi[1], lo[2])]
    assert all(b > a + 0.5 for a, b in gaps)
    in_gap = 0
    for phi in phis:
        e = np.linalg.eigvalsh(build_1d_harper(13, 1.94, 1.06, Fraction(1, 3), phi))
        in_gap += sum(((e > a) & (e < b)).sum() for a, b in gaps)
    assert in_gap > 0


def test_2x2_uniform():
    spec = LatticeSpec(2, 2, tbar_x=0.8, tbar_y=0.8, lam_x=0.0, lam_y=0.0)
    e = np.linalg.eigvalsh(build_2d_direct_sum(spec, PumpParams()))
    assert np.allclose(e, [-1.6, 0, 0, 1.6])


@settings(max_examples=100, deadline=None)
@given(
    nx=st.integers(1, 6), ny=st.integers(1, 6),
    tx=st.floats(0.1, 3), ty=st.floats(0.1, 3),
    lx=st.floats(-2, 2), ly=st.floats(-2, 2),
    q=st.integers(1, 5), phx=st.floats(0, 7), phy=st.floats(0, 7),
    periodic=st.booleans(),
)
def test_direct_sum_hermitian_and_minkowski(nx, ny, tx, ty, lx, ly, q, phx, phy, periodic):
    if nx * ny < 2:
        return
    spec = LatticeSpec(nx, ny, Fraction(1, q), Fraction(1, q), tx, ty, lx, ly,
                       "periodic" if periodic else "open")
    op = build_2d_direct_sum(spec, PumpParams(phx, phy))
    m = op.matrix
    assert np.max(np.abs(m - m.conj().T)) <= 1e-12
    ex = np.linalg.eigvalsh(direct_sum_matrix(LatticeSpec(nx, 1, Fraction(1, q), Fraction(1, q), tx, ty, lx, ly,
                                                          spec.boundary), phx, 0.0))
    ey = np.linalg.eigvalsh(direct_sum_matrix(LatticeSpec(1, ny, Fraction(1, q), Fraction(1, q), tx, ty, lx, ly,
                                                          spec.boundary), 0.0, phy))
    sums = np.sort((ex[:, None] + ey[None, :]).ravel())
    assert np.allclose(np.linalg.eigvalsh(m), sums, atol=1e-9, rtol=0)


def test_hermitian_operator_rejects():
    with pytest.raises(NotHermitian):
        HermitianOperator(np.array([[0, 1], [2, 0]]))
    op = HermitianOperator(np.eye(6), (3, 2))
    assert op.index(2, 1) == 5 and op.site(5) == (2, 1)
    with pytest.raises(ValueError):
        op.matrix[0, 0] = 3


def test_direct_sum_operator_matches_dense():
    op = DirectSumOperator(np.asarray(build_1d_harper(4, 1, 0.5, Fraction(1, 3), 0.2)),
                           np.asarray(build_1d_harper(3, 1, 0.5, Fraction(1, 3), 1.1)))
    spec = LatticeSpec(4, 3, tbar_x=1, tbar_y=1, lam_x=0.5, lam_y=0.5)
    assert np.array_equal(np.asarray(op), direct_sum_matrix(spec, 0.2, 1.1))


def test_pump_params_reduced():
    p = PumpParams(-0.5, 7.0)
    assert 0 <= p.phi_x < 2 * np.pi and p.phi_y == pytest.approx(7.0 - 2 * np.pi)


def test_spec_json_roundtrip():
    spec = LatticeSpec(5, 4, Fraction(2, 5), "1/3", 1.5, 1.2, 0.3, 0.2, "periodic")
    d = json.loads(spec.to_json())
    assert d["b_x"] == "2/5"
    assert set(d) == {"size_x", "size_y", "b_x", "b_y", "tbar_x", "tbar_y", "lam_x", "lam_y", "boundary"}
    assert LatticeSpec.from_json(spec.to_json()) == spec
    with pytest.raises(ValueError):
        LatticeSpec.from_dict({"size_x": 3, "colour": 1})


def test_bloch_block_examples():
    e = np.linalg.eigvalsh(harper_bloch(1.3, 0.0, Fraction(1, 3), 0.4, 0.0))
    assert abs(e.sum()) < 1e-12
    expect = sorted(2 * 1.3 * np.cos(0.0 / 3 + 2 * np.pi * n / 3) for n in range(3))
    assert np.allclose(e, expect)
    pump, k = PumpParams(0.3, 1.7), (0.9, -0.4)
    big = build_bloch(DEFAULT, k, pump)
    assert big.dimension == 9
    ex = np.linalg.eigvalsh(harper_bloch(1.94, 1.06, Fraction(1, 3), 0.3, 0.9))
    ey = np.linalg.eigvalsh(harper_bloch(1.94, 1.06, Fraction(1, 3), 1.7, -0.4))
    assert np.allclose(np.linalg.eigvalsh(big), np.sort((ex[:, None] + ey).ravel()), atol=1e-12)
    shifted = build_bloch(DEFAULT, (0.9 + 2 * np.pi, -0.4), PumpParams(0.3 + 2 * np.pi, 1.7))
    assert np.allclose(np.linalg.eigvalsh(shifted), np.linalg.eigvalsh(big), atol=1e-12)


def test_irrational_frequency():
    spec = LatticeSpec(b_x=1 / math.sqrt(2))
    with pytest.raises(IrrationalFrequency):
        build_bloch(spec, (0, 0), PumpParams())


def test_geometric_trivial(law):
    xs, ys = np.array([0.0, 15.0]), np.zeros(2)
    assert not np.any(geometric_matrix(xs, ys, law, 1550, cutoff=1e3))
    m = geometric_matrix(xs, ys, law, 1550, cutoff=0.0)
    amp, gamma = law.parameters(1550)
    assert m[0, 1] == pytest.approx(amp * math.exp(-15 * gamma), rel=1e-12)
    assert m[0, 0] == 0 and m[1, 0] == m[0, 1]
    with pytest.raises(WavelengthOutOfRange):
        geometric_matrix(xs, ys, law, 1700)


def test_geometric_default_layout(law):
    phi = (0.477 * np.pi, 1.3)
    xc, yc = lattice_positions(DEFAULT, law, 1550, *phi)
    layout = WaveguideLayout(np.zeros(1), xc[None], yc[None])
    op = build_geometric_model(layout, law, 1550, 0.0, cutoff=0.0)
    nn = direct_sum_matrix(DEFAULT, *phi)
    mask = nn != 0
    assert np.abs(op.matrix[mask] - nn[mask]).max() < 1e-6
    rest = op.matrix[~mask & ~np.eye(DEFAULT.n_sites, dtype=bool)]
    ix, iy = DEFAULT.index(0, 0), DEFAULT.index(1, 1)
    assert op.matrix[ix, iy] > 0
    assert rest.max() < nn[mask].min()
    # cutoff between the two keeps only the nearest-neighbour bonds
    cut = 0.5 * (rest.max() + nn[mask].min())
    xs, ys = flat_positions(xc, yc)
    assert np.allclose(geometric_matrix(xs, ys, law, 1550, cutoff=cut), nn, atol=1e-6)
