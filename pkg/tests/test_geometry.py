import numpy as np
import pytest

from peierls_lab.errors import ConfigError
from peierls_lab.geometry import (
    GaugePotential,
    MagneticFieldSpec,
    constant_line_phase,
    flux_moment_phi,
    flux_moment_phi2,
    fluctuation_line_phase,
    line_phase,
    omega,
    periodic_potential_from_field,
    perturbing_line_phase,
    signed_area,
    triangle_flux,
    zak_translate,
    PhaseCache,
)
from peierls_lab.supercell import SupercellGrid


def mixed_spec(eps=0.2, c=0.5):
    return MagneticFieldSpec.make(
        epsilon=eps, constant_b=0.8, fluctuation_c=c,
        fluctuation_modes={(1, 0): 0.4, (-1, 0): 0.4,
                           (2, 1): 0.15 - 0.2j, (-2, -1): 0.15 + 0.2j})


class TestPotentialFromField:
    def test_single_mode_antiderivative(self):
        # B12 = cos(2 pi x1) -> A = (0, sin(2 pi x1) / (2 pi))
        a1, a2 = periodic_potential_from_field({(1, 0): 0.5, (-1, 0): 0.5})
        assert not any(abs(v) > 1e-15 for v in a1.values())
        assert a2[(1, 0)] == pytest.approx(-0.5j / (2 * np.pi))
        assert a2[(-1, 0)] == pytest.approx(0.5j / (2 * np.pi))
        x = np.linspace(0, 1, 7)
        vals = sum(c * np.exp(1j * 2 * np.pi * (k[0] * x)) for k, c in a2.items())
        assert np.allclose(vals.imag, 0, atol=1e-15)
        assert np.allclose(vals.real, np.sin(2 * np.pi * x) / (2 * np.pi), atol=1e-14)

    def test_zero_field(self):
        a1, a2 = periodic_potential_from_field({})
        assert a1 == {} and a2 == {}

    def test_nonzero_flux_rejected(self):
        with pytest.raises(ConfigError):
            periodic_potential_from_field({(0, 0): 1.0})

    def test_exterior_derivative_reproduces_field_modewise(self):
        modes = {(1, 0): 0.5, (-1, 0): 0.5, (1, 2): 0.3j, (-1, -2): -0.3j}
        pot = GaugePotential.from_periodic_field(modes)
        recovered = pot.field_modes()
        for k, c in modes.items():
            assert recovered[k] == pytest.approx(c, abs=1e-12)


class TestLinePhase:
    def test_degenerate_segment(self):
        pot = GaugePotential.perturbing(mixed_spec())
        assert complex(line_phase(pot, (0.3, -1.2), (0.3, -1.2))) == pytest.approx(1.0)

    def test_symmetric_gauge_radial(self):
        pot = GaugePotential.make(linear_b=2.5)
        assert complex(line_phase(pot, (0.0, 0.0), (1.0, 0.0))) == pytest.approx(1.0)

    def test_quadrature_refinement(self):
        pot = GaugePotential.perturbing(mixed_spec())
        x, y = (0.37, -0.81), (2.14, 1.03)
        coarse = pot.segment_integral(x, y, order=8)
        fine = pot.segment_integral(x, y, order=80)
        assert abs(coarse - fine) < 1e-12

    def test_unit_modulus_and_antisymmetry(self):
        spec = mixed_spec()
        rng = np.random.default_rng(1)
        for _ in range(50):
            x, y = rng.uniform(-4, 4, 2), rng.uniform(-4, 4, 2)
            lam = complex(perturbing_line_phase(spec, x, y))
            assert abs(abs(lam) - 1) < 1e-14
            assert abs(lam * complex(perturbing_line_phase(spec, y, x)) - 1) < 1e-13


class TestTriangleFlux:
    def test_constant_field_unit_triangle(self):
        spec = MagneticFieldSpec.make(epsilon=1.0, constant_b=1.0)
        fl = float(triangle_flux(spec, (0, 0), (1, 0), (0, 1)))
        assert fl == pytest.approx(0.5)
        assert complex(omega(spec, (0, 0), (1, 0), (0, 1))) == pytest.approx(
            np.exp(-0.5j))

    def test_degenerate_triangle(self):
        spec = mixed_spec()
        fl = float(triangle_flux(spec, (0, 0), (1, 1), (2, 2)))
        assert abs(fl) < 1e-12
        assert complex(omega(spec, (0, 0), (1, 1), (2, 2))) == pytest.approx(1.0)

    def test_stokes_identity(self):
        spec = mixed_spec(eps=0.3)
        rng = np.random.default_rng(2)
        for _ in range(100):
            x, y, z = rng.uniform(-5, 5, (3, 2))
            lhs = complex(omega(spec, x, y, z))
            rhs = complex(perturbing_line_phase(spec, x, y)
                          * perturbing_line_phase(spec, y, z)
                          * perturbing_line_phase(spec, z, x))
            assert abs(lhs - rhs) < 1e-10

    def test_orientation_antisymmetry(self):
        spec = mixed_spec()
        x, y, z = (0.1, 0.2), (1.3, -0.4), (-0.7, 0.9)
        assert float(triangle_flux(spec, x, y, z)) == pytest.approx(
            -float(triangle_flux(spec, x, z, y)), abs=1e-12)


class TestFluxMoments:
    def test_constant_field_half(self):
        spec = MagneticFieldSpec.make(epsilon=0.1, constant_b=3.0)
        val = float(flux_moment_phi(spec, (0.2, -0.3), (1.0, 2.0), (0.5, 0.5)))
        assert val == pytest.approx(1.5)
        # degenerate x = y = alpha keeps the constant value
        val = float(flux_moment_phi(spec, (0.2, -0.3), (0.2, -0.3), (0.2, -0.3)))
        assert val == pytest.approx(1.5)

    def test_refinement_oracle(self):
        spec = MagneticFieldSpec.make(
            epsilon=0.1, constant_b=0.0, fluctuation_c=1.0,
            fluctuation_modes={(1, 0): 0.5, (-1, 0): 0.5})
        a, x, y = (0.1, 0.0), (1.7, 0.4), (-0.6, 1.1)
        v8 = float(flux_moment_phi(spec, a, x, y, order=8))
        v16 = float(flux_moment_phi(spec, a, x, y, order=16))
        assert abs(v8 - v16) < 1e-12

    def test_moment_times_wedge_is_flux(self):
        spec = mixed_spec()
        a, x, y = (0.3, -0.2), (1.2, 0.7), (-0.9, 1.4)
        we = (x[0] - a[0]) * (y[1] - a[1]) - (x[1] - a[1]) * (y[0] - a[0])
        assert we * float(flux_moment_phi(spec, a, x, y)) == pytest.approx(
            float(triangle_flux(spec, a, x, y)), abs=1e-12)

    def test_phi2_edge_pattern(self):
        spec = mixed_spec()
        a, b, y = (0.0, 0.0), (1.0, 0.0), (0.3, 1.2)
        assert float(flux_moment_phi2(spec, a, b, y)) == pytest.approx(
            float(flux_moment_phi(spec, a, b, y)))


class TestZakTranslate:
    def grid_and_state(self):
        # compactly supported state: translations by |a|+|b| <= 6 never wrap
        grid = SupercellGrid(16, 4)
        rng = np.random.default_rng(5)
        f = np.zeros((grid.n_grid, grid.n_grid), dtype=complex)
        sl = grid.cell_block((0, 0))
        f[sl] = rng.standard_normal((grid.n_s, grid.n_s)) \
            + 1j * rng.standard_normal((grid.n_s, grid.n_s))
        return grid, f.ravel()

    def test_eps_zero_plain_translation(self):
        grid, f = self.grid_and_state()
        spec = MagneticFieldSpec.make(epsilon=0.0, constant_b=1.0)
        out = zak_translate(f, (1, -2), spec, grid)
        assert np.allclose(out, grid.translate(f, (1, -2)))

    def test_norm_preserved(self):
        grid, f = self.grid_and_state()
        spec = MagneticFieldSpec.make(epsilon=0.07, constant_b=1.0)
        out = zak_translate(f, (2, 1), spec, grid)
        assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(f), abs=1e-13)

    def test_cocycle_example(self):
        # T_a T_b = exp(-i (eps b / 2) (b ^ a)) T_{a+b}; for a=(1,0), b=(0,1)
        # the factor is e^{+i eps b / 2}
        grid, f = self.grid_and_state()
        eps, b = 0.05, 1.0
        spec = MagneticFieldSpec.make(epsilon=eps, constant_b=b)
        lhs = zak_translate(zak_translate(f, (0, 1), spec, grid), (1, 0), spec, grid)
        rhs = np.exp(1j * eps * b / 2) * zak_translate(f, (1, 1), spec, grid)
        assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_cocycle_general(self):
        grid, f = self.grid_and_state()
        spec = MagneticFieldSpec.make(epsilon=0.04, constant_b=1.7)
        for a in [(1, 0), (2, -1), (-3, 2)]:
            for b in [(0, 1), (-1, -1), (3, 0)]:
                lhs = zak_translate(zak_translate(f, b, spec, grid), a, spec, grid)
                coc = complex(perturbing_line_phase(
                    spec, (float(b[0]), float(b[1])), (float(a[0]), float(a[1]))))
                rhs = coc * zak_translate(f, (a[0] + b[0], a[1] + b[1]), spec, grid)
                assert np.max(np.abs(lhs - rhs)) < 1e-11


def test_composite_phase_product():
    """Full perturbing phase = fluctuation phase times constant phase."""
    spec = mixed_spec(eps=0.15)
    rng = np.random.default_rng(3)
    for _ in range(20):
        x, y = rng.uniform(-3, 3, 2), rng.uniform(-3, 3, 2)
        full = complex(perturbing_line_phase(spec, x, y))
        split = complex(fluctuation_line_phase(spec, x, y)) * complex(
            constant_line_phase(spec, x, y))
        assert abs(full - split) < 1e-12


def test_phase_cache_consistency():
    spec = mixed_spec(eps=0.1)
    cache = PhaseCache(spec)
    val = cache((1, 2), (-1, 0))
    direct = complex(perturbing_line_phase(spec, (1.0, 2.0), (-1.0, 0.0)))
    assert val == pytest.approx(direct)
    assert cache((1, 2), (-1, 0)) is not None  # memoized path
    assert abs(abs(val) - 1) < 1e-14


def test_flux_expansion_bound():
    spec = mixed_spec(eps=0.05)
    rng = np.random.default_rng(4)
    for _ in range(100):
        x, y, z = rng.uniform(-3, 3, (3, 2))
        flux = float(triangle_flux(spec, x, y, z))
        om = complex(omega(spec, x, y, z))
        assert abs(om - 1 + 1j * spec.epsilon * flux) <= 0.5 * (
            spec.epsilon * flux) ** 2 + 1e-12


def test_signed_area():
    assert signed_area((0, 0), (1, 0), (0, 1)) == pytest.approx(0.5)
    assert signed_area((0, 0), (0, 1), (1, 0)) == pytest.approx(-0.5)
