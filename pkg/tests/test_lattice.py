import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peierls_lab.lattice import (
    BrillouinGrid,
    centered_cells,
    character,
    pairing,
    torus_fourier,
    torus_synthesis,
    wrap_and_split,
)


def test_pairing_examples():
    assert pairing((1, 0), (1, 0)) == pytest.approx(2 * np.pi)
    assert pairing((0, 0), (3.7, -2.1)) == 0.0
    assert pairing((0.25, 0), (1, 0)) == pytest.approx(np.pi / 2)


def test_wrap_and_split_examples():
    iota, hat = wrap_and_split((0.75, -0.25))
    assert tuple(iota) == (1, 0)
    assert hat == pytest.approx([-0.25, -0.25])
    iota, hat = wrap_and_split((0.0, 0.0))
    assert tuple(iota) == (0, 0) and tuple(hat) == (0.0, 0.0)
    # half-open convention: -1/2 stays, +1/2 wraps up
    iota, hat = wrap_and_split((-0.5, 0.5))
    assert tuple(iota) == (0, 1)
    assert hat == pytest.approx([-0.5, -0.5])


@given(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)))
@settings(max_examples=200, deadline=None)
def test_wrap_roundtrip_exact(xi):
    iota, hat = wrap_and_split(xi)
    assert iota[0] + hat[0] == xi[0]
    assert iota[1] + hat[1] == xi[1]
    assert -0.5 <= hat[0] < 0.5 and -0.5 <= hat[1] < 0.5


def test_character_examples():
    assert character((0.25, 0), (1, 0)) == pytest.approx(-1j)
    assert character((0.123, -0.4), (0, 0)) == 1.0
    assert character((0.5, 0), (2, 0)) == pytest.approx(1.0)


@given(st.integers(-8, 8), st.integers(-8, 8), st.integers(-8, 8), st.integers(-8, 8),
       st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
@settings(max_examples=150, deadline=None)
def test_character_multiplicative(a1, a2, b1, b2, t1, t2):
    lhs = character((t1, t2), (a1 + b1, a2 + b2))
    rhs = character((t1, t2), (a1, a2)) * character((t1, t2), (b1, b2))
    assert abs(lhs - rhs) < 1e-12


def test_grid_nodes_and_weight():
    grid = BrillouinGrid(8)
    assert grid.nodes[0] == -0.5 and 0.0 in grid.nodes
    assert np.all(grid.nodes < 0.5)
    assert grid.weight * grid.m_pts**2 == pytest.approx(1.0)
    with pytest.raises(ValueError):
        BrillouinGrid(7)


def test_torus_fourier_examples():
    grid = BrillouinGrid(8)
    ones = np.ones((8, 8))
    assert torus_fourier(ones, (0, 0), grid) == pytest.approx(1.0)
    assert abs(torus_fourier(ones, (1, 0), grid)) < 1e-14
    t1, t2 = grid.mesh()
    f = np.exp(-1j * 2 * np.pi * t1)  # e^{-i <theta, (1,0)>}
    assert torus_fourier(f, (1, 0), grid) == pytest.approx(1.0)


def test_torus_fourier_inverts_synthesis():
    grid = BrillouinGrid(16)
    rng = np.random.default_rng(0)
    coeffs = {(a, b): complex(*rng.standard_normal(2))
              for a in range(-7, 8) for b in range(-7, 8)}
    samples = torus_synthesis(coeffs, grid)
    for g in [(0, 0), (3, -5), (-7, 7), (1, 2)]:
        assert torus_fourier(samples, g, grid) == pytest.approx(coeffs[g], abs=1e-12)


def test_matrix_valued_fourier():
    grid = BrillouinGrid(8)
    m = np.zeros((8, 8, 2, 2), dtype=complex)
    t1, _ = grid.mesh()
    m[..., 0, 1] = np.exp(-1j * 2 * np.pi * t1)
    out = torus_fourier(m, (1, 0), grid)
    assert out.shape == (2, 2)
    assert out[0, 1] == pytest.approx(1.0)
    assert abs(out[0, 0]) < 1e-14


def test_centered_cells():
    assert list(centered_cells(4)) == [-2, -1, 0, 1]
