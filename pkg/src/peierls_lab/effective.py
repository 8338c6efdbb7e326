"""Twisted (magnetic) matrix algebra: Peierls assembly, products, covariance.

A magnetic matrix over a finite window of cells has blocks
``M[alpha, beta] = Lambda(alpha, beta) * m[alpha - beta]`` where ``Lambda`` is
the lattice-restricted perturbing phase and ``m`` a rapidly decaying block
sequence.  For a constant field these matrices form an algebra under the
twisted convolution ``(S T)[delta] = sum_g Lambda(g, delta) S[g] T[delta-g]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import NumericalError
from .frames import HoppingSequence, WannierFrame
from .geometry import (
    MagneticFieldSpec,
    PhaseCache,
    constant_line_phase,
    fluctuation_line_phase,
    triangle_flux,
)
from .supercell import cell_interior_weight


def window_cells(radius: int) -> np.ndarray:
    """Centered square window of cells, row-major over (-L..L)^2."""
    r = np.arange(-radius, radius + 1)
    a, b = np.meshgrid(r, r, indexing="ij")
    return np.stack([a.ravel(), b.ravel()], axis=1)


@dataclass
class MagneticMatrix:
    """Dense Hermitian matrix over (cell, channel) indices of a finite window."""

    data: np.ndarray                 # (n_cells * n, n_cells * n)
    cells: np.ndarray                # (n_cells, 2)
    block_size: int
    spec: MagneticFieldSpec

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def block(self, i: int, j: int) -> np.ndarray:
        n = self.block_size
        return self.data[i * n:(i + 1) * n, j * n:(j + 1) * n]

    def cell_index(self) -> dict:
        return {(int(a), int(b)): i for i, (a, b) in enumerate(self.cells)}

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.data - self.data.conj().T)))


def assemble_peierls(seq: HoppingSequence, spec: MagneticFieldSpec,
                     cells: np.ndarray) -> MagneticMatrix:
    """Peierls matrix M[alpha, beta] = Lambda(alpha, beta) * m[alpha - beta]."""
    phase = PhaseCache(spec)
    n = seq.block_size
    nc = len(cells)
    out = np.zeros((nc * n, nc * n), dtype=complex)
    R = seq.radius
    for i, al in enumerate(cells):
        for j, be in enumerate(cells):
            d = (int(al[0] - be[0]), int(al[1] - be[1]))
            if max(abs(d[0]), abs(d[1])) > R:
                continue
            out[i * n:(i + 1) * n, j * n:(j + 1) * n] = phase(al, be) * seq.block(d)
    return MagneticMatrix(out, np.asarray(cells), n, spec)


def twisted_product(s: HoppingSequence, t: HoppingSequence,
                    spec: MagneticFieldSpec) -> HoppingSequence:
    """Twisted convolution (s t)[delta] = sum_g Lambda(g, delta) s[g] t[delta - g]."""
    if s.block_size != t.block_size:
        raise NumericalError("block sizes differ")
    phase = PhaseCache(spec)
    out: dict = {}
    for g, sg in s.entries.items():
        for h, th in t.entries.items():
            d = (g[0] + h[0], g[1] + h[1])
            term = phase(g, d) * (sg @ th)
            out[d] = out.get(d, 0.0) + term
    return HoppingSequence(out, s.block_size)


def identity_sequence(n: int) -> HoppingSequence:
    return HoppingSequence({(0, 0): np.eye(n, dtype=complex)}, n)


def direct_matrix_elements(corrected_vectors: np.ndarray, h_eps, cells: np.ndarray,
                           block_size: int, spec: MagneticFieldSpec) -> MagneticMatrix:
    """Matrix elements <psi^eps_{alpha p}, H^eps psi^eps_{beta q}> of the corrected frame.

    ``corrected_vectors`` has one column per (cell, channel) in the row-major
    (cells x channels) order used throughout; ``h_eps`` is the sparse
    reference operator on the same supercell.
    """
    hv = h_eps @ corrected_vectors
    data = corrected_vectors.conj().T @ hv
    return MagneticMatrix(data, np.asarray(cells), block_size, spec)


def covariance_extract(mat: MagneticMatrix, interior_radius: int):
    """Constant-field covariance: strip phases and average over interior pairs.

    Returns ``(HoppingSequence, residual)`` where the residual is the maximal
    interior deviation from the per-difference average.
    """
    if mat.spec.fluctuation_c != 0.0 and mat.spec.fluctuation_modes:
        raise NumericalError("covariance extraction requires a constant-field spec")
    cells = mat.cells
    inside = (np.abs(cells[:, 0]) <= interior_radius) & (np.abs(cells[:, 1]) <= interior_radius)
    idx = np.where(inside)[0]
    groups: dict = {}
    for i in idx:
        for j in idx:
            d = (int(cells[i, 0] - cells[j, 0]), int(cells[i, 1] - cells[j, 1]))
            lam = constant_line_phase(mat.spec, cells[i].astype(float), cells[j].astype(float))
            groups.setdefault(d, []).append(np.conj(lam) * mat.block(i, j))
    entries = {}
    residual = 0.0
    for d, blocks in groups.items():
        stack = np.stack(blocks)
        mean = stack.mean(axis=0)
        entries[d] = mean
        residual = max(residual, float(np.max(np.abs(stack - mean))))
    return HoppingSequence(entries, mat.block_size), residual


def assemble_fluctuation(seq_eps: HoppingSequence, spec: MagneticFieldSpec,
                         cells: np.ndarray) -> MagneticMatrix:
    """Fluctuation composite M[alpha,beta] = Lam^{eps,c}(a,b) Lam^{eps,0}(a,b) m^eps[a-b].

    The order-(c*eps) remainder of the true matrix against this model is
    measured by callers, not modeled here.
    """
    if not (0.0 < spec.fluctuation_c <= 1.0):
        raise NumericalError("fluctuation assembly needs c in (0, 1]")
    n = seq_eps.block_size
    nc = len(cells)
    out = np.zeros((nc * n, nc * n), dtype=complex)
    R = seq_eps.radius
    for i, al in enumerate(cells):
        a = (float(al[0]), float(al[1]))
        for j, be in enumerate(cells):
            d = (int(al[0] - be[0]), int(al[1] - be[1]))
            if max(abs(d[0]), abs(d[1])) > R:
                continue
            b = (float(be[0]), float(be[1]))
            lam = complex(fluctuation_line_phase(spec, a, b)) * complex(
                constant_line_phase(spec, a, b))
            out[i * n:(i + 1) * n, j * n:(j + 1) * n] = lam * seq_eps.block(d)
    return MagneticMatrix(out, np.asarray(cells), n, spec)


def window_spectrum(mat: MagneticMatrix, interior_radius: int,
                    bulk_threshold: float = 0.9):
    """Eigenvalues with per-eigenvector interior weights; 'bulk' = weight >= threshold.

    The interior weight is area normalized (1 for a uniformly spread
    eigenvector), so the threshold separates boundary-localized states from
    genuinely extended ones.  Returns ``(eigenvalues, weights, bulk_mask)``.
    """
    defect = mat.hermiticity_defect()
    if defect > 1e-10 * max(1.0, float(np.max(np.abs(mat.data)))):
        raise NumericalError(f"matrix not Hermitian (defect {defect:.2e})")
    try:
        w, u = np.linalg.eigh(mat.data)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("dense eigensolver failed on the window matrix") from exc
    per_entry_cells = np.repeat(mat.cells, mat.block_size, axis=0)
    weights = np.array([
        cell_interior_weight(u[:, k], per_entry_cells, interior_radius)
        for k in range(u.shape[1])
    ])
    return w, weights, weights >= bulk_threshold


def first_order_correction(wannier: WannierFrame, spec: MagneticFieldSpec,
                           alpha, beta, h0: sp.spmatrix) -> np.ndarray:
    """First-order flux-moment correction block of the Peierls approximation.

    Exact first derivative in eps of the phase-stripped sandwich
    ``conj(Lambda(alpha,beta)) <psi~_{alpha p}, H^eps psi~_{beta q}>``::

        -i * sum_{x,y} [flux(alpha,x,y) + flux(alpha,y,beta)]
             * conj(psi_p(x-alpha)) K0(x,y) psi_q(y-beta)

    with ``flux`` the normalized triangle flux of the perturbing field and
    ``K0`` the kernel of the unperturbed supercell operator ``h0``.  The two
    triangle fluxes expand into the three flux-moment pairings
    (``Phi_alpha``-weighted ``Q (x) Q``, ``(beta-alpha)``-weighted ``Q (x) 1``
    and ``Phi_{alpha,beta}``-weighted ``1 (x) Q``); here they are evaluated
    directly on the sparse kernel's support.
    """
    grid = wannier.cell
    coo = h0.tocoo()
    coord = np.arange(grid.n_grid) / grid.n_s - grid.m_cells // 2
    x1 = coord[coo.row // grid.n_grid]
    x2 = coord[coo.row % grid.n_grid]
    y1 = coord[coo.col // grid.n_grid]
    y2 = coord[coo.col % grid.n_grid]
    a = (float(alpha[0]), float(alpha[1]))
    bpt = (float(beta[0]), float(beta[1]))
    flux = (triangle_flux(spec, a, (x1, x2), (y1, y2))
            + triangle_flux(spec, a, (y1, y2), bpt))
    n = wannier.n_frame
    out = np.zeros((n, n), dtype=complex)
    for p in range(n):
        tp = wannier.translate(p, alpha).ravel()[coo.row]
        for q in range(n):
            tq = wannier.translate(q, beta).ravel()[coo.col]
            out[p, q] = -1j * np.sum(flux * coo.data * np.conj(tp) * tq)
    return out
