"""Magnetically phased frames, Gram clustering and the tight-frame repair.

The frame vectors are Zak-phased translates of the localized frame functions;
their Gram matrix is an orthogonal projection at eps = 0 and acquires an
O(eps) deviation under the field.  The repair multiplies by ``f(G)`` with
``f(z) = z**-0.5`` on the near-1 cluster, realizing the inverse-square-root
correction through the transfer identity between the frame operator and its
Gram; the corrected Gram is the spectral projection onto the near-1 cluster.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ClusterSeparationError, NumericalError
from .frames import WannierFrame
from .geometry import MagneticFieldSpec, fluctuation_line_phase, perturbing_line_phase
from .supercell import SupercellGrid

CLUSTER_BAND = (0.25, 0.75)


@dataclass
class MagneticFrame:
    """Phased translate family: one column per (cell, channel), row-major cells x channels."""

    vectors: np.ndarray              # (Ng*Ng, n_cells * n_B)
    cells: np.ndarray                # (n_cells, 2)
    n_frame: int
    spec: MagneticFieldSpec
    wannier: WannierFrame

    @property
    def grid(self) -> SupercellGrid:
        return self.wannier.cell

    def column(self, gamma, p: int) -> int:
        idx = {(int(a), int(b)): i for i, (a, b) in enumerate(self.cells)}
        return idx[(int(gamma[0]), int(gamma[1]))] * self.n_frame + p


def _phased_translates(base: np.ndarray, cells, spec: MagneticFieldSpec,
                       grid: SupercellGrid, phase_fn) -> np.ndarray:
    n_frame = base.shape[0]
    x1, x2 = grid.coords()
    cols = np.empty((grid.n_points, len(cells) * n_frame), dtype=complex)
    for i, gamma in enumerate(cells):
        g = (float(gamma[0]), float(gamma[1]))
        ph = phase_fn(spec, (x1, x2), g).ravel()
        for p in range(n_frame):
            shifted = grid.translate(base[p], gamma)
            cols[:, i * n_frame + p] = ph * shifted
    return cols


def build_magnetic_frame(wannier: WannierFrame, spec: MagneticFieldSpec,
                         window_radius: int | None = None) -> MagneticFrame:
    """Phased frame psi~_{gamma p} = Lambda~(x, gamma) (tau_{-gamma} psi_p).

    With fluctuations (c > 0) the two-step construction applies: the
    constant-field pipeline is corrected first and its central functions are
    then phased by the fluctuation-only factor.  ``window_radius=None`` uses
    every cell of the supercell (the torus window).
    """
    grid = wannier.cell
    half = grid.m_cells // 2
    if window_radius is None or window_radius >= half:
        cells = np.array([(a, b) for a in grid.cells for b in grid.cells])
    else:
        r = np.arange(-window_radius, window_radius + 1)
        cells = np.array([(a, b) for a in r for b in r])
    if spec.fluctuation_c != 0.0 and spec.fluctuation_modes:
        const_spec = MagneticFieldSpec.make(spec.epsilon, spec.constant_b)
        base_frame = build_magnetic_frame(wannier, const_spec, window_radius)
        corr = tighten_magnetic_frame(base_frame, gram_spectrum(base_frame))
        central = np.stack([
            corr.vectors[:, base_frame.column((0, 0), p)] for p in range(wannier.n_frame)
        ])
        cols = _phased_translates_two_step(central, cells, spec, grid)
        return MagneticFrame(cols, cells, wannier.n_frame, spec, wannier)
    cols = _phased_translates(wannier.samples, cells, spec, grid, perturbing_line_phase)
    return MagneticFrame(cols, cells, wannier.n_frame, spec, wannier)


def _phased_translates_two_step(central: np.ndarray, cells, spec: MagneticFieldSpec,
                                grid: SupercellGrid) -> np.ndarray:
    """Fluctuation phases times constant-field Zak translates of corrected functions."""
    const_spec = MagneticFieldSpec.make(spec.epsilon, spec.constant_b)
    n_frame = central.shape[0]
    x1, x2 = grid.coords()
    cols = np.empty((grid.n_points, len(cells) * n_frame), dtype=complex)
    for i, gamma in enumerate(cells):
        g = (float(gamma[0]), float(gamma[1]))
        ph_const = perturbing_line_phase(const_spec, (x1, x2), g).ravel()
        ph_fluct = fluctuation_line_phase(spec, (x1, x2), g).ravel()
        for p in range(n_frame):
            shifted = grid.translate(central[p], gamma)
            cols[:, i * n_frame + p] = ph_fluct * ph_const * shifted
    return cols


@dataclass
class GramSpectrum:
    gram: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)
    cluster_threshold: float = 0.5

    @property
    def near_one(self) -> np.ndarray:
        return self.eigenvalues > self.cluster_threshold

    @property
    def c_q(self) -> float:
        """Max distance of the Gram spectrum to {0, 1} (cluster half-width)."""
        w = self.eigenvalues
        return float(np.max(np.minimum(np.abs(w), np.abs(w - 1.0))))

    @property
    def idempotency_defect(self) -> float:
        w = self.eigenvalues
        return float(np.max(np.abs(w * w - w)))

    def separated(self, band=CLUSTER_BAND) -> bool:
        w = self.eigenvalues
        return not np.any((w >= band[0]) & (w <= band[1]))


def gram_spectrum(frame: MagneticFrame) -> GramSpectrum:
    """Hermitian eigendecomposition of the frame Gram with cluster diagnostics."""
    g = frame.vectors.conj().T @ frame.vectors
    g = 0.5 * (g + g.conj().T)
    w, u = np.linalg.eigh(g)
    if w.min() < -1e-11:
        raise NumericalError(f"Gram lost positivity: min eigenvalue {w.min():.2e}")
    out = GramSpectrum(g, w, u)
    if not out.separated():
        raise ClusterSeparationError(
            f"Gram eigenvalues entered {CLUSTER_BAND}: epsilon={frame.spec.epsilon} "
            "too large for this window"
        )
    return out


@dataclass
class TightFrameCorrection:
    """Corrected Parseval frame psi^eps = psi~ f(G) and its projection data."""

    vectors: np.ndarray              # corrected columns
    coefficients: np.ndarray         # f(G)
    frame: MagneticFrame
    corrected_gram_defect: float
    rank: int

    @property
    def cells(self) -> np.ndarray:
        return self.frame.cells

    @property
    def n_frame(self) -> int:
        return self.frame.n_frame

    def project(self, w: np.ndarray) -> np.ndarray:
        """Apply P^eps = sum |psi^eps><psi^eps| (the near-1 spectral projection)."""
        return self.vectors @ (self.vectors.conj().T @ w)

    def max_column_shift(self) -> float:
        """max_{gamma,p} || psi^eps - psi~ ||; O(eps) by the tightening estimate."""
        return float(np.max(np.linalg.norm(self.vectors - self.frame.vectors, axis=0)))


def tighten_magnetic_frame(frame: MagneticFrame,
                           gram: GramSpectrum) -> TightFrameCorrection:
    """Apply Theta = f(Q~), f(z) = z**-0.5 1_{near 1}(z), through the Gram transfer identity.

    The corrected Gram ``f(G) G f(G)`` is the spectral projection of G onto
    its near-1 cluster, hence idempotent; its defect is reported for the
    record.
    """
    if not gram.separated():
        raise ClusterSeparationError("cluster separation lost; cannot tighten")
    w, u = gram.eigenvalues, gram.eigenvectors
    near = gram.near_one
    vals = np.where(near, np.abs(w) ** -0.5, 0.0)
    fg = (u * vals) @ u.conj().T
    corrected = frame.vectors @ fg
    proj_vals = np.where(near, 1.0, 0.0)
    gp = (u * proj_vals) @ u.conj().T
    defect = float(np.max(np.abs(gp @ gp - gp)))
    return TightFrameCorrection(corrected, fg, frame, defect, int(near.sum()))


def projector_commutator_norm(correction: TightFrameCorrection, h_eps,
                              mask_radius: int, iters: int = 60,
                              tol: float = 1e-4, seed: int = 0) -> float:
    """Interior-masked operator norm of [H^eps, P^eps] by power iteration.

    The commutator of two Hermitian operators is anti-Hermitian, so the power
    iteration runs on ``-K^2`` with ``K = mask [H, P] mask`` and returns the
    largest singular value.
    """
    grid = correction.frame.grid
    mask = grid.interior_mask(mask_radius)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(grid.n_points) + 1j * rng.standard_normal(grid.n_points)
    v *= mask
    v /= np.linalg.norm(v)

    def commutator(w):
        w = w * mask
        out = h_eps @ correction.project(w) - correction.project(h_eps @ w)
        return out * mask

    lam_prev, lam = 0.0, 0.0
    for _ in range(iters):
        w2 = -commutator(commutator(v))
        nrm = float(np.linalg.norm(w2))
        if nrm < 1e-300:
            return 0.0
        v = w2 / nrm
        lam_prev, lam = lam, nrm
        if lam_prev > 0 and abs(lam - lam_prev) < tol * lam:
            break
    return float(np.sqrt(lam))


def spectral_flattening_check(correction: TightFrameCorrection, window_states,
                              phi_values: np.ndarray,
                              mask_radius: int | None = None) -> float:
    """Interior-masked norm defect || mask (P^eps - 1) phi(H^eps) mask ||.

    ``window_states`` is the pair (eigenvalues, eigenvectors) of H^eps inside
    a window containing supp(phi); ``phi_values`` are phi at those
    eigenvalues, so phi(H^eps) = U diag(phi) U*.  The mask restricts both
    sides to interior-supported directions, suppressing the open-boundary
    truncation mismatch that would otherwise swamp the O(eps) law.
    """
    lam, U = window_states
    if len(lam) == 0:
        raise NumericalError("empty spectral window")
    grid = correction.frame.grid
    if mask_radius is None:
        mask_radius = grid.m_cells // 4
    mask = grid.interior_mask(mask_radius)[:, None]
    X = (correction.project(U) - U) * mask * phi_values
    Y = U * mask
    rx = np.linalg.qr(X, mode="r")
    ry = np.linalg.qr(Y, mode="r")
    return float(np.linalg.norm(rx @ ry.conj().T, 2))
