import numpy as np
import pytest

from peierls_lab.errors import ClusterSeparationError
from peierls_lab.geometry import (
    MagneticFieldSpec,
    constant_line_phase,
    omega,
    perturbing_line_phase,
)
from peierls_lab.magframe import (
    build_magnetic_frame,
    gram_spectrum,
    projector_commutator_norm,
    spectral_flattening_check,
    tighten_magnetic_frame,
)


class TestBuildMagneticFrame:
    def test_eps_zero_plain_translates(self, small_lab):
        frame = small_lab.stage(0.0).frame
        wan = small_lab.wannier
        for gamma in [(0, 0), (2, -1)]:
            col = frame.vectors[:, frame.column(gamma, 0)]
            expect = wan.cell.translate(wan.samples[0], gamma)
            assert np.max(np.abs(col - expect)) < 1e-14

    def test_norms_preserved(self, small_lab):
        frame = small_lab.stage(0.04).frame
        norms = np.linalg.norm(frame.vectors, axis=0)
        base = np.linalg.norm(small_lab.wannier.samples[0])
        assert np.max(np.abs(norms - base)) < 1e-13

    def test_overlap_identity_split(self, small_lab):
        """<psi~_a, psi~_b> = Lambda(a,b) <tau_a psi, Omega-weighted tau_b psi>."""
        lab = small_lab
        eps = 0.04
        st = lab.stage(eps)
        frame, wan = st.frame, lab.wannier
        grid = wan.cell
        x1, x2 = grid.coords()
        for a, b in [((1, 0), (0, 1)), ((2, 1), (-1, 0))]:
            ca = frame.vectors[:, frame.column(a, 0)]
            cb = frame.vectors[:, frame.column(b, 0)]
            lhs = np.vdot(ca, cb)
            om = omega(st.spec, (float(a[0]), float(a[1])), (x1, x2),
                       (float(b[0]), float(b[1]))).ravel()
            ta = grid.translate(wan.samples[0], a)
            tb = grid.translate(wan.samples[0], b)
            lam = complex(perturbing_line_phase(
                st.spec, (float(a[0]), float(a[1])), (float(b[0]), float(b[1]))))
            rhs = lam * np.sum(np.conj(ta) * om * tb)
            assert abs(lhs - rhs) < 1e-10

    def test_fluctuation_frame_phases(self, small_lab):
        """c>0 member at gamma equals fluct-phase times constant-field member."""
        lab = small_lab
        spec = MagneticFieldSpec.make(0.04, 1.0, 0.6, {(1, 0): 0.3, (-1, 0): 0.3})
        frame_c = build_magnetic_frame(lab.wannier, spec)
        # manual two-step reference for one cell
        from peierls_lab.geometry import fluctuation_line_phase
        const = lab.stage(0.04)
        central = const.correction.vectors[:, const.frame.column((0, 0), 0)]
        grid = lab.cell
        x1, x2 = grid.coords()
        gamma = (1, -2)
        ph_f = fluctuation_line_phase(spec, (x1, x2),
                                      (float(gamma[0]), float(gamma[1]))).ravel()
        ph_c = perturbing_line_phase(
            MagneticFieldSpec.make(0.04, 1.0), (x1, x2),
            (float(gamma[0]), float(gamma[1]))).ravel()
        expect = ph_f * ph_c * grid.translate(central, gamma)
        got = frame_c.vectors[:, frame_c.column(gamma, 0)]
        assert np.max(np.abs(got - expect)) < 1e-12


class TestGramSpectrum:
    def test_eps_zero_projection(self, small_lab):
        g = small_lab.stage(0.0).gram
        assert g.idempotency_defect < 1e-9
        w = g.eigenvalues
        assert np.all((np.abs(w) < 1e-9) | (np.abs(w - 1) < 1e-9))

    def test_eps_small_clusters(self, small_lab):
        g = small_lab.stage(0.04).gram
        assert g.separated()
        assert g.c_q < 0.25

    def test_cluster_separation_failure_raises(self, small_lab):
        """Strongly overlapping frame vectors put Gram eigenvalues into the
        forbidden mid band; the check must name the failure."""
        import dataclasses
        from peierls_lab.magframe import MagneticFrame
        st = small_lab.stage(0.04).frame
        rng = np.random.default_rng(0)
        mix = st.vectors @ (np.eye(st.vectors.shape[1])
                            + 0.9 * rng.standard_normal((st.vectors.shape[1],) * 2)
                            / np.sqrt(st.vectors.shape[1]))
        bad = dataclasses.replace(st, vectors=mix)
        with pytest.raises(ClusterSeparationError):
            gram_spectrum(bad)


class TestTighten:
    def test_eps_zero_identity(self, small_lab):
        corr = small_lab.stage(0.0).correction
        assert corr.max_column_shift() < 1e-10

    def test_corrected_gram_idempotent(self, small_lab):
        for eps in (0.02, 0.04):
            corr = small_lab.stage(eps).correction
            assert corr.corrected_gram_defect < 5e-9
            vc = corr.vectors
            g = vc.conj().T @ vc
            assert np.max(np.abs(g @ g - g)) < 5e-9

    def test_column_shift_order_eps(self, small_lab):
        shifts = [small_lab.stage(e).correction.max_column_shift()
                  for e in (0.02, 0.04)]
        assert shifts[1] > shifts[0]
        assert shifts[1] < 10 * shifts[0]


class TestCommutator:
    def test_eps_zero_floor(self, small_lab):
        val = small_lab.commutator_norm(0.0)
        assert val < 1e-8

    def test_monotone_in_eps(self, small_lab):
        v1 = small_lab.commutator_norm(0.02)
        v2 = small_lab.commutator_norm(0.04)
        assert v2 > v1 > 0


class TestFlattening:
    def test_eps_zero_and_negative_control(self, small_lab):
        lab = small_lab
        st = lab.stage(0.0)
        w, U = lab.window_states(0.0)
        lo, hi = lab.comparison_window
        sel = (w > lo) & (w < hi)
        # phi = 1 on the family inside the window (bump evaluated at eigenvalues)
        lamc = 0.5 * (lab.family.e_prime_minus + lab.family.e_prime_plus)
        width = max(lab.family.e_prime_plus - lab.family.e_prime_minus, 0.5)
        phi = np.exp(-((w[sel] - lamc) / (4 * width)) ** 2)
        defect = spectral_flattening_check(st.correction, (w[sel], U[:, sel]), phi)
        # the production-scale floor is 1e-8; the small box has a 2-cell
        # interior margin so its truncation floor sits slightly higher
        assert defect < 1e-7
        # negative control: a window function supported on the band above the
        # family leaks entirely: defect at the || phi(H) || level
        from peierls_lab.reduction import window_eigenpairs
        bands = lab.bands
        sigma2 = 0.5 * (float(bands.eigenvalues[:, :, 1].min())
                        + float(bands.eigenvalues[:, :, 1].max()))
        w2, U2 = window_eigenpairs(st.reference.matrix, sigma2, 40, seed=11)
        sel2 = np.abs(w2 - sigma2) < 3.0
        phi2 = np.ones(int(sel2.sum()))
        defect2 = spectral_flattening_check(st.correction,
                                            (w2[sel2], U2[:, sel2]), phi2)
        # masked baseline || mask phi(H) mask ||: the defect must be at that level
        mask = lab.cell.interior_mask(lab.cell.m_cells // 4)[:, None]
        X = U2[:, sel2] * mask
        r = np.linalg.qr(X, mode="r")
        baseline = float(np.linalg.norm(r @ r.conj().T, 2))
        assert defect2 > 0.8 * baseline

    def test_eps_scaling(self, small_lab):
        lab = small_lab
        vals = []
        for eps in (0.02, 0.04):
            st = lab.stage(eps)
            w, U = lab.window_states(eps)
            lo, hi = lab.comparison_window
            sel = (w > lo) & (w < hi)
            phi = np.ones(int(sel.sum()))
            vals.append(spectral_flattening_check(st.correction,
                                                  (w[sel], U[:, sel]), phi))
        assert vals[0] < vals[1]


class TestZakCovariance:
    def test_interior_gram_covariance(self, small_lab):
        st = small_lab.stage(0.04)
        cells = st.frame.cells
        g = st.gram.gram
        groups = {}
        inside = (np.abs(cells[:, 0]) <= 2) & (np.abs(cells[:, 1]) <= 2)
        for i in np.where(inside)[0]:
            for j in np.where(inside)[0]:
                d = (int(cells[i, 0] - cells[j, 0]), int(cells[i, 1] - cells[j, 1]))
                lam = complex(constant_line_phase(st.spec, cells[i].astype(float),
                                                  cells[j].astype(float)))
                groups.setdefault(d, []).append(np.conj(lam) * g[i, j])
        worst = 0.0
        for blocks in groups.values():
            arr = np.array(blocks)
            worst = max(worst, float(np.max(np.abs(arr - arr.mean()))))
        assert worst < 1e-9
