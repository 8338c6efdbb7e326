import numpy as np
import pytest

from peierls_lab.errors import MarginError, NumericalError
from peierls_lab.fibers import compute_bands, detect_isolated_family, eigenprojection
from peierls_lab.frames import (
    build_fiber_frame,
    default_trials,
    flat_quantization,
    frame_analysis,
    frame_bounds,
    frame_synthesis,
    hopping_from_bands,
    band_symbol,
    synthesize_wannier,
    tighten_frame,
)
from peierls_lab.lattice import BrillouinGrid, torus_fourier
from peierls_lab.model import Backend, cosine_model
from peierls_lab.supercell import SupercellGrid


class TestTightenFrame:
    def test_duplicated_vector(self):
        v = np.array([[1.0, 1.0], [0.0, 0.0]], dtype=complex)
        w, _, rank = tighten_frame(v)
        assert rank == 1
        expect = np.array([[1 / np.sqrt(2), 1 / np.sqrt(2)], [0, 0]])
        assert np.allclose(w, expect)
        g = w.conj().T @ w
        assert np.allclose(g, [[0.5, 0.5], [0.5, 0.5]])
        assert np.max(np.abs(g @ g - g)) < 1e-14

    def test_orthonormal_fixed_point(self):
        q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((5, 3)))
        w, _, rank = tighten_frame(q)
        assert rank == 3
        assert np.max(np.abs(w - q)) < 1e-12

    def test_three_vectors_spanning_c2(self):
        rng = np.random.default_rng(1)
        v = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
        w, _, rank = tighten_frame(v)
        g = w.conj().T @ w
        assert rank == 2
        assert np.max(np.abs(g @ g - g)) < 1e-12
        assert np.trace(g).real == pytest.approx(2.0, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(NumericalError):
            tighten_frame(np.zeros((3, 0)))


class TestFrameBounds:
    def test_orthonormal(self):
        a, b = frame_bounds(np.eye(4))
        assert a == pytest.approx(1.0) and b == pytest.approx(1.0)

    def test_doubled_vector(self):
        v = np.array([[1.0, 1.0], [0.0, 0.0]])
        a, b = frame_bounds(v)
        assert a == pytest.approx(2.0) and b == pytest.approx(2.0)

    def test_tightened_is_parseval(self):
        rng = np.random.default_rng(2)
        v = rng.standard_normal((4, 7)) + 1j * rng.standard_normal((4, 7))
        w, _, _ = tighten_frame(v)
        a, b = frame_bounds(w)
        assert abs(a - 1) < 1e-12 and abs(b - 1) < 1e-12


@pytest.fixture(scope="module")
def deep_bands():
    model = cosine_model(48.0, Backend("grid", 6), energy_shift=230.0)
    bands = compute_bands(model, BrillouinGrid(8), 5, resolution_guard=False)
    family = detect_isolated_family(bands, 1, 0)
    return bands, family


@pytest.fixture(scope="module")
def excited_pair():
    """Bands 2..3 of the deep model form an isolated N=1 family (crossing pair)."""
    model = cosine_model(48.0, Backend("grid", 6), energy_shift=230.0)
    bands = compute_bands(model, BrillouinGrid(8), 5, resolution_guard=False)
    family = detect_isolated_family(bands, 2, 1)
    return bands, family


class TestFiberFrame:
    def test_rank_one_normalized_projection(self, deep_bands):
        bands, family = deep_bands
        trials = default_trials(bands, family)
        frame = build_fiber_frame(bands, family, trials)
        for node in [(0, 0), (3, 5)]:
            P = eigenprojection(bands, node, (1, 1))
            w = P @ trials[:, 0]
            expect = w / np.linalg.norm(w)
            got = frame.sections[node[0], node[1], :, 0]
            phase = np.vdot(got, expect)
            assert abs(abs(phase) - 1) < 1e-10
            assert np.linalg.norm(got * phase - expect) < 1e-10

    def test_duplicated_trials(self, deep_bands):
        bands, family = deep_bands
        t = default_trials(bands, family)
        trials = np.concatenate([t, t], axis=1)
        frame = build_fiber_frame(bands, family, trials)
        s = frame.sections[2, 4]
        assert np.linalg.norm(s[:, 0] - s[:, 1]) < 1e-12
        # duplicated-vector tight frame: each column has norm 1/sqrt(2)
        assert np.linalg.norm(s[:, 0]) == pytest.approx(1 / np.sqrt(2), abs=1e-10)
        S = s @ s.conj().T
        P = eigenprojection(bands, (2, 4), (1, 1))
        assert np.max(np.abs(S - P)) < 1e-10

    def test_fiber_parseval_n1_family(self, excited_pair):
        bands, family = excited_pair
        rng = np.random.default_rng(3)
        trials = rng.standard_normal((36, 3)) + 1j * rng.standard_normal((36, 3))
        frame = build_fiber_frame(bands, family, trials)
        worst = 0.0
        for (i, j), _ in bands.grid:
            S = frame.sections[i, j] @ frame.sections[i, j].conj().T
            P = eigenprojection(bands, (i, j), (2, 3))
            worst = max(worst, np.max(np.abs(S - P)))
        assert worst < 1e-10

    def test_too_few_trials_rejected(self, excited_pair):
        bands, family = excited_pair
        with pytest.raises(NumericalError):
            build_fiber_frame(bands, family, default_trials(bands, family)[:, :1])


@pytest.fixture(scope="module")
def wannier(deep_bands):
    bands, family = deep_bands
    frame = build_fiber_frame(bands, family, default_trials(bands, family))
    return synthesize_wannier(frame, bands.grid, SupercellGrid(8, 6), 2)


class TestWannier:
    def test_margin_guard(self, deep_bands):
        bands, family = deep_bands
        frame = build_fiber_frame(bands, family, default_trials(bands, family))
        with pytest.raises(MarginError):
            synthesize_wannier(frame, bands.grid, SupercellGrid(8, 6), 3)

    def test_plancherel(self, wannier):
        # ||psi_p||^2 over the supercell = (1/M^2) sum_theta ||psi_hat_p(theta)||^2
        lhs = np.sum(np.abs(wannier.samples[0]) ** 2)
        sec = wannier.fiber.sections[..., 0]
        rhs = np.sum(np.abs(sec) ** 2) / wannier.cell.m_cells**2
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_phase_shift_translates(self, deep_bands, wannier):
        """Multiplying sections by e^{i<theta,alpha>} synthesizes tau_{-alpha} psi."""
        from peierls_lab.fibers import inverse_bloch_floquet
        bands, _ = deep_bands
        frame = wannier.fiber
        t1, _ = bands.grid.mesh()
        cell = wannier.cell
        sec = frame.sections[..., 0].reshape(8, 8, cell.n_s, cell.n_s)
        shifted = sec * np.exp(1j * 2 * np.pi * t1)[:, :, None, None]
        out = inverse_bloch_floquet(shifted, bands.grid, cell)
        expect = cell.translate(wannier.samples[0], (-1, 0))
        assert np.max(np.abs(out - expect)) < 1e-12

    def test_decay_profile(self, wannier):
        prof = wannier.decay_profile
        assert prof[0] == 1.0
        assert np.all(np.diff(prof[1:]) < 0)  # strictly decreasing past shell 1
        assert prof[2] < 1e-4


class TestAnalysisSynthesis:
    def test_reproduce_frame_vector(self, wannier):
        f = wannier.cell.translate(wannier.samples[0], (2, -1))
        coords = frame_analysis(f, wannier)
        rec = frame_synthesis(coords, wannier)
        assert np.linalg.norm(rec - f) < 1e-10 * np.linalg.norm(f)

    def test_orthogonal_band_annihilated(self, deep_bands, wannier):
        bands, family = deep_bands
        # build f from the band above the family (k = 2 section)
        from peierls_lab.fibers import inverse_bloch_floquet
        sec = bands.eigenvectors[:, :, :, 1].reshape(8, 8, 6, 6)
        f = inverse_bloch_floquet(sec, bands.grid, wannier.cell)
        coords = frame_analysis(f, wannier)
        assert np.max(np.abs(coords)) < 1e-8 * np.linalg.norm(f)

    def test_parseval_equals_projected_norm(self, deep_bands, wannier):
        bands, family = deep_bands
        rng = np.random.default_rng(4)
        f = rng.standard_normal(wannier.cell.n_points) + 1j * rng.standard_normal(
            wannier.cell.n_points)
        coords = frame_analysis(f, wannier)
        # || P_B f ||^2 via the eigenprojection route
        from peierls_lab.fibers import bloch_floquet_transform
        fhat = bloch_floquet_transform(f, bands.grid, wannier.cell)
        norm2 = 0.0
        for (i, j), _ in bands.grid:
            E = bands.eigenvectors[i, j][:, :1]
            norm2 += np.sum(np.abs(E.conj().T @ fhat[i, j].ravel()) ** 2)
        norm2 /= bands.grid.m_pts**2
        assert np.sum(np.abs(coords) ** 2) == pytest.approx(norm2, rel=1e-10)


@pytest.fixture(scope="module")
def hopping(deep_bands):
    bands, family = deep_bands
    frame = build_fiber_frame(bands, family, default_trials(bands, family))
    return bands, family, frame, hopping_from_bands(bands, family, frame, 2)


class TestHopping:
    def test_hermitian_symmetry(self, hopping):
        _, _, _, seq = hopping
        for g, m in seq.entries.items():
            mg = seq.block((-g[0], -g[1]))
            assert np.max(np.abs(m - mg.conj().T)) < 1e-12

    def test_trace_matches_band_integral(self, hopping):
        bands, family, _, seq = hopping
        avg = float(np.mean(bands.eigenvalues[:, :, 0]))
        assert np.trace(seq.block((0, 0))).real == pytest.approx(avg, abs=1e-10)

    def test_flat_band_reduces_to_section_overlaps(self, deep_bands):
        """With H_B(theta) := c * P_B(theta) the hopping equals c times the
        Fourier coefficients of the section Gram (identity-operator matrix)."""
        bands, family = deep_bands
        frame = build_fiber_frame(bands, family, default_trials(bands, family))
        c = 3.7
        sym = band_symbol(bands, family, frame)
        overlaps = np.einsum("tuxp,tuxq->tupq", np.conj(frame.sections),
                             frame.sections)
        flat = c * overlaps
        for g in [(0, 0), (1, 0), (1, 1)]:
            lhs = torus_fourier(flat, g, bands.grid)
            # same construction with lambda_k replaced by the constant c
            rhs = c * torus_fourier(overlaps, g, bands.grid)
            assert np.max(np.abs(lhs - rhs)) < 1e-12
        del sym

    def test_decay_bound_fit(self, hopping):
        _, _, _, seq = hopping
        norms = seq.norms()
        assert norms[(2, 2)] < norms[(1, 0)] < norms[(0, 0)]


class TestFlatQuantization:
    def test_block_diagonal_case(self):
        from peierls_lab.frames import HoppingSequence
        m0 = np.array([[2.0, 1j], [-1j, 1.0]])
        seq = HoppingSequence({(0, 0): m0}, 2)
        T = flat_quantization(seq, 1)
        assert T.shape == (18, 18)
        off = T.copy()
        for i in range(9):
            off[2 * i:2 * i + 2, 2 * i:2 * i + 2] = 0
        assert np.max(np.abs(off)) == 0
        assert np.allclose(T[:2, :2], m0)

    def test_hermitian(self, hopping):
        _, _, _, seq = hopping
        T = flat_quantization(seq, 3)
        assert np.max(np.abs(T - T.conj().T)) < 1e-13

    def test_spectrum_vs_symbol_range(self, hopping):
        bands, family, frame, seq = hopping
        sym = band_symbol(bands, family, frame)
        sym_vals = np.linalg.eigvalsh(sym).ravel()
        T = flat_quantization(seq, 3)
        w = np.linalg.eigvalsh(T)
        # interior weighting: keep Ritz vectors with bulk support
        from peierls_lab.effective import MagneticMatrix, window_cells, window_spectrum
        from peierls_lab.geometry import MagneticFieldSpec
        mat = MagneticMatrix(T, window_cells(3), seq.block_size,
                             MagneticFieldSpec.make(0.0))
        wv, wgt, bulk = window_spectrum(mat, 2)
        wb = wv[bulk]
        tail = 2.0 * sum(n for g, n in seq.norms().items()
                         if max(abs(g[0]), abs(g[1])) > seq.radius)
        d1 = max(np.min(np.abs(sym_vals - x)) for x in wb)
        assert d1 < max(2.0 * tail, 0.02)
        assert wb.min() > sym_vals.min() - 1e-9
        assert wb.max() < sym_vals.max() + 1e-9
        del w


def test_window_guard(hopping):
    _, _, _, seq = hopping
    with pytest.raises(NumericalError):
        flat_quantization(seq, 1)
