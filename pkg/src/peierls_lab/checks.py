"""Programmatic invariant suite: every module-level property as a named check.

Each check returns a :class:`CheckResult`; the ``validate`` CLI command runs
all of them and fails (exit code 4) when any is violated.  The pytest suite
reuses the same functions so there is a single source of truth for the
thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import frames, geometry, lattice, reduction
from .effective import assemble_peierls, identity_sequence, twisted_product, window_spectrum
from .fibers import (
    assemble_fiber,
    compute_bands,
    detect_isolated_family,
    eigenprojection,
)
from .frames import HoppingSequence, frame_analysis, tighten_frame
from .geometry import (
    GaugePotential,
    MagneticFieldSpec,
    line_phase,
    omega,
    perturbing_line_phase,
    triangle_flux,
    zak_translate,
)
from .lattice import BrillouinGrid, character, pairing, torus_fourier, wrap_and_split
from .magframe import build_magnetic_frame, gram_spectrum, tighten_magnetic_frame
from .model import Backend, cosine_model


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float
    detail: str = ""
    ok: bool = field(init=False)

    def __post_init__(self):
        self.ok = bool(self.value <= self.threshold)


# ---------------------------------------------------------------------------
# lattice / torus conventions
# ---------------------------------------------------------------------------

def check_character_multiplicative(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(50):
        theta = rng.uniform(-0.5, 0.5, 2)
        a = rng.integers(-8, 9, 2)
        b = rng.integers(-8, 9, 2)
        lhs = character(theta, a + b)
        rhs = character(theta, a) * character(theta, b)
        worst = max(worst, abs(lhs - rhs))
    return CheckResult("lattice.character_multiplicative", worst, 1e-12)


def check_fourier_roundtrip(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    grid = BrillouinGrid(8)
    coeffs = {(int(a), int(b)): complex(*rng.standard_normal(2))
              for a in range(-3, 4) for b in range(-3, 4)}
    samples = lattice.torus_synthesis(coeffs, grid)
    worst = max(abs(torus_fourier(samples, g, grid) - c) for g, c in coeffs.items())
    return CheckResult("lattice.fourier_roundtrip", float(worst), 1e-12)


def check_wrap_roundtrip(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    xi = rng.uniform(-1e3, 1e3, (200, 2))
    worst = 0.0
    for row in xi:
        iota, hat = wrap_and_split(row)
        worst = max(worst, float(np.max(np.abs(iota + hat - row))))
        if not (np.all(hat >= -0.5) and np.all(hat < 0.5)):
            worst = max(worst, 1.0)
    return CheckResult("lattice.wrap_roundtrip", worst, 0.0)


# ---------------------------------------------------------------------------
# fibers
# ---------------------------------------------------------------------------

def check_fiber_commutation(lab) -> CheckResult:
    bands = lab.bands
    fam = lab.family
    worst = 0.0
    for (i, j), theta in bands.grid:
        H = assemble_fiber(lab.model, theta)
        P = eigenprojection(bands, (i, j), (fam.k0, fam.k0 + fam.n_above))
        worst = max(worst, float(np.max(np.abs(H @ P - P @ H))))
    return CheckResult("fibers.commutation", worst, 1e-10 * max(1.0, lab.family.e_plus))


def check_projector_gauge_independence(lab, seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    bands = lab.bands
    fam = lab.family
    worst = 0.0
    for node in [(0, 0), (bands.grid.m_pts // 2, bands.grid.m_pts // 2), (1, 3)]:
        theta = bands.grid.node(*node)
        H = assemble_fiber(lab.model, theta)
        q, _ = np.linalg.qr(rng.standard_normal((H.shape[0], H.shape[0]))
                            + 1j * rng.standard_normal((H.shape[0], H.shape[0])))
        w, v = np.linalg.eigh(q.conj().T @ H @ q)
        lo, hi = fam.k0 - 1, fam.k0 + fam.n_above
        p2 = q @ v[:, lo:hi] @ v[:, lo:hi].conj().T @ q.conj().T
        p1 = eigenprojection(bands, node, (fam.k0, fam.k0 + fam.n_above))
        worst = max(worst, float(np.max(np.abs(p1 - p2))))
    return CheckResult("fibers.projector_gauge_independence", worst, 1e-10)


def check_band_continuity() -> CheckResult:
    """Adjacent-node jumps halve (within 20%) when the grid doubles."""
    model = cosine_model(2.0, Backend("grid", 6), energy_shift=9.0)
    jumps = []
    for m in (8, 16):
        bands = compute_bands(model, BrillouinGrid(m), 3)
        ev = bands.eigenvalues
        j = max(np.max(np.abs(np.diff(ev, axis=0))), np.max(np.abs(np.diff(ev, axis=1))))
        jumps.append(float(j))
    ratio = jumps[1] / jumps[0]
    return CheckResult("fibers.band_continuity", abs(ratio - 0.5), 0.2,
                       detail=f"jump ratio {ratio:.3f}")


# ---------------------------------------------------------------------------
# frames
# ---------------------------------------------------------------------------

def check_fiber_parseval(lab) -> CheckResult:
    bands = lab.bands
    fam = lab.family
    sec = lab.fiber_frame.sections
    worst = 0.0
    for (i, j), _ in bands.grid:
        S = sec[i, j] @ sec[i, j].conj().T
        P = eigenprojection(bands, (i, j), (fam.k0, fam.k0 + fam.n_above))
        worst = max(worst, float(np.max(np.abs(S - P))))
    return CheckResult("frames.fiber_parseval", worst, 1e-10)


def random_band_states(lab, count, seed=0) -> np.ndarray:
    """Random vectors in the range of the family projection on the supercell."""
    rng = np.random.default_rng(seed)
    out = np.empty((count, lab.cell.n_points), dtype=complex)
    frame = lab.stage(0.0).frame
    for i in range(count):
        c = rng.standard_normal(frame.vectors.shape[1]) + 1j * rng.standard_normal(
            frame.vectors.shape[1])
        v = frame.vectors @ c
        out[i] = v / np.linalg.norm(v)
    return out

def check_supercell_parseval(lab, count=100, seed=0) -> CheckResult:
    states = random_band_states(lab, count, seed)
    worst = 0.0
    for v in states:
        coords = frame_analysis(v, lab.wannier)
        worst = max(worst, abs(np.sum(np.abs(coords) ** 2) - 1.0))
    return CheckResult("frames.supercell_parseval", float(worst), 1e-9)


def check_weak_reconstruction(lab) -> CheckResult:
    """Residual of windowed kernel sums decreases monotonically to P_B f."""
    v = random_band_states(lab, 1, seed=3)[0]
    coords = frame_analysis(v, lab.wannier)
    cell = lab.cell
    cells = cell.cells
    residuals = []
    for L in (1, 2, 3, 4, 6, cell.m_cells // 2):
        masked = coords.copy()
        for a, g1 in enumerate(cells):
            for b, g2 in enumerate(cells):
                if max(abs(g1), abs(g2)) > L:
                    masked[a, b, :] = 0.0
        rec = frames.frame_synthesis(masked, lab.wannier)
        residuals.append(float(np.linalg.norm(rec - v)))
    bad = max((residuals[i + 1] - residuals[i] for i in range(len(residuals) - 1)),
              default=0.0)
    return CheckResult("frames.weak_reconstruction", max(bad, residuals[-1]), 1e-9,
                       detail=f"residuals {['%.2e' % r for r in residuals]}")


def check_kernel_consistency(lab, seed=1) -> CheckResult:
    """Frame-synthesized projection matches the eigenprojection route on test vectors."""
    rng = np.random.default_rng(seed)
    cell = lab.cell
    v = rng.standard_normal(cell.n_points) + 1j * rng.standard_normal(cell.n_points)
    v /= np.linalg.norm(v)
    p_frame = frames.frame_synthesis(frame_analysis(v, lab.wannier), lab.wannier)
    # eigenprojection route through the Bloch-Floquet transform
    from .fibers import bloch_floquet_transform, inverse_bloch_floquet
    fam = lab.family
    bands = lab.bands
    fhat = bloch_floquet_transform(v, bands.grid, cell)
    lo, hi = fam.k0 - 1, fam.k0 + fam.n_above
    out = np.zeros_like(fhat)
    for (i, j), _ in bands.grid:
        E = bands.eigenvectors[i, j][:, lo:hi]
        out[i, j] = (E @ (E.conj().T @ fhat[i, j].ravel())).reshape(out[i, j].shape)
    p_eig = inverse_bloch_floquet(out, bands.grid, cell)
    mask = cell.interior_mask(cell.m_cells // 2 - 2)
    worst = float(np.max(np.abs((p_frame - p_eig)[mask])))
    return CheckResult("frames.kernel_consistency", worst, 1e-8)


def check_tighten_idempotent(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n, m in [(6, 9), (4, 4), (10, 17)]:
        V = rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
        W, _, _ = tighten_frame(V)
        G = W.conj().T @ W
        worst = max(worst, float(np.max(np.abs(G @ G - G))))
    return CheckResult("frames.tighten_idempotent", worst, 1e-12)


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def _mixed_spec(eps=1.0) -> MagneticFieldSpec:
    return MagneticFieldSpec.make(
        epsilon=eps, constant_b=0.7, fluctuation_c=0.5,
        fluctuation_modes={(1, 0): 0.3, (-1, 0): 0.3,
                           (0, 2): 0.2 + 0.1j, (0, -2): 0.2 - 0.1j})


def check_unit_modulus(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    spec = _mixed_spec(0.3)
    pot = GaugePotential.perturbing(spec)
    worst = 0.0
    for _ in range(100):
        x, y = rng.uniform(-5, 5, 2), rng.uniform(-5, 5, 2)
        lam = complex(line_phase(pot, x, y))
        worst = max(worst, abs(abs(lam) - 1.0))
    return CheckResult("geometry.unit_modulus", worst, 1e-14)


def check_phase_antisymmetry(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    spec = _mixed_spec(0.3)
    worst = 0.0
    for _ in range(100):
        x, y = rng.uniform(-5, 5, 2), rng.uniform(-5, 5, 2)
        val = complex(perturbing_line_phase(spec, x, y)
                      * perturbing_line_phase(spec, y, x))
        worst = max(worst, abs(val - 1.0))
    return CheckResult("geometry.phase_antisymmetry", worst, 1e-13)


def check_stokes(seed=0, n_triangles=1000) -> CheckResult:
    rng = np.random.default_rng(seed)
    spec = _mixed_spec(0.25)
    pts = rng.uniform(-5, 5, (n_triangles, 3, 2))
    worst = 0.0
    for x, y, z in pts:
        lhs = complex(omega(spec, x, y, z))
        rhs = complex(perturbing_line_phase(spec, x, y)
                      * perturbing_line_phase(spec, y, z)
                      * perturbing_line_phase(spec, z, x))
        worst = max(worst, abs(lhs - rhs))
    return CheckResult("geometry.stokes", worst, 1e-10)


def check_zak_cocycle(lab=None, seed=0) -> CheckResult:
    """T_a T_b = Lambda(b, a) T_{a+b} for constant fields, on sampled functions."""
    from .supercell import SupercellGrid
    grid = SupercellGrid(16, 6)
    spec = MagneticFieldSpec.make(epsilon=0.05, constant_b=1.3)
    rngl = np.random.default_rng(seed)
    f = np.zeros((grid.n_grid, grid.n_grid), dtype=complex)
    sl = grid.cell_block((0, 0))
    f[sl] = rngl.standard_normal((grid.n_s, grid.n_s)) \
        + 1j * rngl.standard_normal((grid.n_s, grid.n_s))
    f = f.ravel()
    worst = 0.0
    for a1 in range(-3, 4):
        for b1 in range(-3, 4):
            a = (a1, (a1 + 1) % 3 - 1)
            b = (b1, (1 - b1) % 3 - 1)
            lhs = zak_translate(zak_translate(f, b, spec, grid), a, spec, grid)
            coc = complex(perturbing_line_phase(
                spec, (float(b[0]), float(b[1])), (float(a[0]), float(a[1]))))
            rhs = coc * zak_translate(f, (a[0] + b[0], a[1] + b[1]), spec, grid)
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return CheckResult("geometry.zak_cocycle", worst, 1e-11)


def check_flux_expansion(seed=0) -> CheckResult:
    """|Omega - 1 + i eps flux| <= (eps flux)^2 / 2 pointwise."""
    rng = np.random.default_rng(seed)
    spec = _mixed_spec(0.1)
    worst = 0.0
    for _ in range(200):
        x, y, z = rng.uniform(-3, 3, (3, 2))
        flux = float(triangle_flux(spec, x, y, z))
        om = complex(omega(spec, x, y, z))
        lhs = abs(om - 1.0 + 1j * spec.epsilon * flux)
        bound = 0.5 * (spec.epsilon * flux) ** 2
        worst = max(worst, lhs - bound)
    return CheckResult("geometry.flux_expansion", worst, 1e-12)


# ---------------------------------------------------------------------------
# magnetic frame
# ---------------------------------------------------------------------------

def check_gram_positivity(lab) -> CheckResult:
    eps = max(lab.config["field"]["epsilons"])
    g = lab.stage(eps).gram
    return CheckResult("magframe.gram_positivity",
                       max(0.0, -float(g.eigenvalues.min())), 1e-11)


def check_rank_stability(lab) -> CheckResult:
    """Near-1 cluster count on sub-windows: defect per window cell shrinks with L."""
    eps = min(e for e in lab.config["field"]["epsilons"] if e > 0)
    spec = lab.spec(eps)
    fracs = []
    for L in (4, 6):
        fr = build_magnetic_frame(lab.wannier, spec, window_radius=L)
        g = gram_spectrum(fr)
        n_window = (2 * L + 1) ** 2
        expected = n_window * lab.family.size
        defect = abs(int(g.near_one.sum()) - expected)
        fracs.append(defect / n_window)
    bad = max(fracs[-1] - fracs[0], 0.0) if fracs[0] > 0 else fracs[-1]
    return CheckResult("magframe.rank_stability", float(bad), 0.5,
                       detail=f"defect fractions {fracs}")


def check_zak_covariance_gram(lab) -> CheckResult:
    """Interior Gram entries factor through Lambda(alpha,beta) g(alpha-beta)."""
    eps = max(lab.config["field"]["epsilons"])
    st = lab.stage(eps)
    cells = st.frame.cells
    n = st.frame.n_frame
    g = st.gram.gram
    radius = lab.config["run"]["mask_radius"]
    inside = (np.abs(cells[:, 0]) <= radius) & (np.abs(cells[:, 1]) <= radius)
    idx = np.where(inside)[0]
    groups: dict = {}
    from .geometry import constant_line_phase
    for i in idx:
        for j in idx:
            d = (int(cells[i, 0] - cells[j, 0]), int(cells[i, 1] - cells[j, 1]))
            if max(abs(d[0]), abs(d[1])) > 3:
                continue
            lam = complex(constant_line_phase(st.spec, cells[i].astype(float),
                                              cells[j].astype(float)))
            groups.setdefault(d, []).append(
                np.conj(lam) * g[i * n:(i + 1) * n, j * n:(j + 1) * n])
    worst = 0.0
    for blocks in groups.values():
        stack = np.stack(blocks)
        worst = max(worst, float(np.max(np.abs(stack - stack.mean(axis=0)))))
    return CheckResult("magframe.zak_covariance_gram", worst, 1e-9)


def check_eps_zero_reduction(lab) -> CheckResult:
    stats = lab.gram_stats(0.0)
    worst = max(stats["idempotency"], stats["column_shift"])
    return CheckResult("magframe.eps_zero_reduction", float(worst), 1e-12)


# ---------------------------------------------------------------------------
# effective matrices
# ---------------------------------------------------------------------------

def _random_sequence(rng, n, radius) -> HoppingSequence:
    entries = {}
    for g1 in range(-radius, radius + 1):
        for g2 in range(-radius, radius + 1):
            scale = np.exp(-2.0 * max(abs(g1), abs(g2)))
            entries[(g1, g2)] = scale * (rng.standard_normal((n, n))
                                         + 1j * rng.standard_normal((n, n)))
    # hermitian symmetrization m(-g) = m(g)^dagger
    out = {}
    for g, m in entries.items():
        mg = entries[(-g[0], -g[1])]
        out[g] = 0.5 * (m + mg.conj().T)
    return HoppingSequence(out, n)


def check_algebra_closure(seed=0) -> CheckResult:
    """assemble(twisted_product(S,T)) equals assemble(S) @ assemble(T) on the interior."""
    rng = np.random.default_rng(seed)
    spec = MagneticFieldSpec.make(epsilon=0.2, constant_b=1.1)
    s = _random_sequence(rng, 2, 2)
    t = _random_sequence(rng, 2, 2)
    from .effective import window_cells
    cells = window_cells(8)
    st = twisted_product(s, t, spec)
    lhs = assemble_peierls(st, spec, cells)
    rhs = assemble_peierls(s, spec, cells).data @ assemble_peierls(t, spec, cells).data
    inner = (np.abs(cells[:, 0]) <= 3) & (np.abs(cells[:, 1]) <= 3)
    sel = np.repeat(inner, 2)
    worst = float(np.max(np.abs((lhs.data - rhs)[np.ix_(sel, sel)])))
    scale = float(np.max(np.abs(rhs))) or 1.0
    return CheckResult("effective.algebra_closure", worst / scale, 1e-10)


def check_gauge_covariance_spectra(seed=0) -> CheckResult:
    """A lattice gauge shift m_g -> e^{i<theta,g>} m_g leaves bulk spectra invariant."""
    rng = np.random.default_rng(seed)
    spec = MagneticFieldSpec.make(epsilon=0.15, constant_b=1.0)
    s = _random_sequence(rng, 1, 2)
    theta = (0.3, -0.7)
    shifted = HoppingSequence(
        {g: np.exp(1j * pairing(theta, g)) * m for g, m in s.entries.items()}, 1)
    from .effective import window_cells
    cells = window_cells(8)
    w1 = np.sort(np.linalg.eigvalsh(assemble_peierls(s, spec, cells).data))
    w2 = np.sort(np.linalg.eigvalsh(assemble_peierls(shifted, spec, cells).data))
    return CheckResult("effective.gauge_covariance", float(np.max(np.abs(w1 - w2))),
                       1e-10 * max(1.0, float(np.max(np.abs(w1)))))


def check_peierls_chain(lab) -> CheckResult:
    """At eps=0 the hopping -> Peierls -> spectrum chain reproduces the band range."""
    mat = lab.peierls_matrix(0.0)
    w, weights, bulk = window_spectrum(mat, lab.config["run"]["interior_radius"])
    wb = w[bulk]
    fam = lab.family
    over = max(0.0, float(fam.e_prime_minus - wb.min()),
               float(wb.max() - fam.e_prime_plus))
    return CheckResult("effective.peierls_chain", over, 0.02)


# ---------------------------------------------------------------------------
# reduction
# ---------------------------------------------------------------------------

def _random_projection_instance(rng, n, k, spread=3.0):
    w = np.concatenate([rng.uniform(0.0, 1.0, k) + 2.0,
                        rng.uniform(0.0, 1.0, n - k) + 2.0 + spread])
    q, _ = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    H = (q * w) @ q.conj().T
    pi = q[:, :k] @ q[:, :k].conj().T
    return H, pi


def check_feshbach_identity(seed=0, count=50) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        n = int(rng.integers(5, 11))
        k = int(rng.integers(2, n - 1))
        H, pi = _random_projection_instance(rng, n, k)
        lam = complex(rng.uniform(2.2, 2.8), rng.uniform(0.2, 1.0))
        blocks = reduction.schur_resolvent(H, pi, lam)
        direct = np.linalg.inv(H - lam * np.eye(n))
        worst = max(worst, float(np.max(np.abs(blocks.inverse - direct))))
    return CheckResult("reduction.feshbach_identity", worst, 1e-12)


def check_schur_singularities(seed=1) -> CheckResult:
    rng = np.random.default_rng(seed)
    H, pi = _random_projection_instance(rng, 10, 4)
    w = np.linalg.eigvalsh(H)
    window = (2.05, 3.1)
    inside = np.sort(w[(w > window[0]) & (w < window[1])])
    roots = reduction.schur_singularities(H, pi, window)
    if len(roots) != len(inside):
        return CheckResult("reduction.schur_singularities", 1.0, 1e-6,
                           detail=f"{len(roots)} roots vs {len(inside)} eigenvalues")
    worst = float(np.max(np.abs(np.sort(roots) - inside))) if len(roots) else 0.0
    return CheckResult("reduction.schur_singularities", worst, 1e-6)


def check_reference_vs_bands(lab) -> CheckResult:
    """eps=0 interior window states lie within 0.02 of the band union."""
    w, wgt = lab.bulk_filter_reference(0.0)
    fam = lab.family
    sel = (w > lab.comparison_window[0]) & (w < lab.comparison_window[1]) & (wgt >= 0.9)
    if not np.any(sel):
        return CheckResult("reduction.reference_vs_bands", 1.0, 0.02, detail="empty")
    over = max(0.0, float(fam.e_prime_minus - w[sel].min()),
               float(w[sel].max() - fam.e_prime_plus))
    return CheckResult("reduction.reference_vs_bands", over, 0.02)


def check_propagator_unitarity(lab, seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    st = lab.stage(0.0)
    v = rng.standard_normal(st.reference.dim) + 1j * rng.standard_normal(st.reference.dim)
    v /= np.linalg.norm(v)
    out = reduction.propagate(st.reference.matrix, v, 3.7,
                              bounds=(0.0, st.reference.norm_bound()))
    return CheckResult("reduction.propagator_unitarity",
                       abs(float(np.linalg.norm(out)) - 1.0), 1e-10)


STANDALONE_CHECKS = [
    check_character_multiplicative,
    check_fourier_roundtrip,
    check_wrap_roundtrip,
    check_band_continuity,
    check_tighten_idempotent,
    check_unit_modulus,
    check_phase_antisymmetry,
    check_stokes,
    check_zak_cocycle,
    check_flux_expansion,
    check_algebra_closure,
    check_gauge_covariance_spectra,
    check_feshbach_identity,
    check_schur_singularities,
]

LAB_CHECKS = [
    check_fiber_commutation,
    check_projector_gauge_independence,
    check_fiber_parseval,
    check_supercell_parseval,
    check_weak_reconstruction,
    check_kernel_consistency,
    check_gram_positivity,
    check_rank_stability,
    check_zak_covariance_gram,
    check_eps_zero_reduction,
    check_peierls_chain,
    check_reference_vs_bands,
    check_propagator_unitarity,
]


def run_all_checks(lab=None, seed: int = 0, workers: int = 1):
    """Run the full invariant suite; lab-dependent checks are skipped without a lab."""
    results = [fn() for fn in STANDALONE_CHECKS]
    if lab is not None:
        results += [fn(lab) for fn in LAB_CHECKS]
    return results
