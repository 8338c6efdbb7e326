"""Parseval frames for an isolated Bloch family and the hopping sequence.

The canonical tight-frame recipe replaces Gram-Schmidt: given spanning
vectors ``v_p`` with Gram ``g``, the corrected family ``psi_j = sum_i
[f(g)]_{ij} v_i`` with ``f(z) = z**-0.5`` on the nonzero spectrum is a
Parseval frame for the same span.  Applied fiber-by-fiber to projected trial
vectors this yields global frame sections that are gauge invariant (they
depend only on the family projection and the fixed trials).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MarginError, NumericalError
from .fibers import BandStructure, IsolatedFamily, bloch_floquet_transform, inverse_bloch_floquet
from .lattice import BrillouinGrid, torus_fourier
from .supercell import SupercellGrid

WRAP_DECAY_TOL = 1e-8


def inverse_sqrt_on_range(gram: np.ndarray, rank: int | None = None,
                          rank_tol: float = 1e-12):
    """Coefficients f(G) with f(z) = z**-0.5 on the nonzero spectrum of G.

    When ``rank`` is given, exactly the top-``rank`` eigenvalues count as
    nonzero; otherwise the cut is ``rank_tol`` relative to the largest one.
    Returns ``(f(G), rank, smallest kept eigenvalue)``.
    """
    w, u = np.linalg.eigh(0.5 * (gram + gram.conj().T))
    if rank is None:
        keep = w > rank_tol * max(w.max(initial=0.0), 1e-300)
        rank = int(np.count_nonzero(keep))
    if rank == 0:
        raise NumericalError("Gram matrix is numerically zero")
    vals = np.zeros_like(w)
    vals[-rank:] = w[-rank:] ** -0.5
    return (u * vals) @ u.conj().T, rank, float(w[-rank])


def tighten_frame(vectors: np.ndarray, rank_tol: float = 1e-12):
    """Canonical tight frame for the span of the given vectors (columns).

    Returns ``(new_vectors, coeffs, rank)`` where ``new_vectors = vectors @
    coeffs`` is a Parseval frame for the span: its Gram is the orthogonal
    projection onto the row space.  Null directions of the Gram are dropped
    by the spectral cut; the number of columns is preserved.
    """
    V = np.asarray(vectors)
    if V.ndim != 2 or V.shape[1] == 0:
        raise NumericalError("need at least one vector")
    g = V.conj().T @ V
    coeffs, rank, _ = inverse_sqrt_on_range(g, rank_tol=rank_tol)
    return V @ coeffs, coeffs, rank


def frame_bounds(vectors: np.ndarray, rank_tol: float = 1e-12):
    """Frame bounds (A, B): smallest and largest nonzero Gram eigenvalue."""
    V = np.asarray(vectors)
    w = np.linalg.eigvalsh(V.conj().T @ V)
    keep = w > rank_tol * max(w.max(initial=0.0), 1e-300)
    if not np.any(keep):
        raise NumericalError("all vectors are numerically zero")
    wk = w[keep]
    return float(wk.min()), float(wk.max())


@dataclass
class FiberFrame:
    """Per-node Parseval frame sections of the family sub-bundle."""

    sections: np.ndarray             # (M, M, dim, n_B)
    n_frame: int                     # n_B
    family: IsolatedFamily
    conditioning: float              # min over nodes of smallest kept S-eigenvalue
    trials: np.ndarray               # (dim, n_B), the fixed trial vectors

    @property
    def grid_size(self) -> int:
        return self.sections.shape[0]


def build_fiber_frame(bands: BandStructure, family: IsolatedFamily,
                      trials: np.ndarray, cond_tol: float = 1e-6) -> FiberFrame:
    """Canonical tight frame sections psi_hat_p(theta) from fixed trial vectors.

    Per node: project the trials onto the family range, then apply the
    inverse square root of the frame operator on that range.  The smallest
    kept eigenvalue over all nodes is the conditioning; below ``cond_tol``
    the trial set is declared degenerate (the numerical shadow of the bundle
    obstruction; add a trial vector or change trials).
    """
    trials = np.asarray(trials, dtype=complex)
    if trials.ndim != 2:
        raise NumericalError("trials must be a (dim, n_B) matrix")
    n_frame = trials.shape[1]
    if n_frame < family.size:
        raise NumericalError(
            f"need at least N+1 = {family.size} trial vectors, got {n_frame}")
    M = bands.grid.m_pts
    lo, hi = family.k0 - 1, family.k0 + family.n_above
    sections = np.zeros((M, M, bands.fiber_dim, n_frame), dtype=complex)
    cond = np.inf
    for i in range(M):
        for j in range(M):
            E = bands.eigenvectors[i, j][:, lo:hi]
            Wp = E @ (E.conj().T @ trials)          # projected trials
            g = Wp.conj().T @ Wp
            coeffs, _, smallest = inverse_sqrt_on_range(g, rank=family.size)
            cond = min(cond, smallest)
            if smallest < cond_tol:
                raise NumericalError(
                    f"trial set degenerate at node ({i},{j}): smallest frame "
                    f"eigenvalue {smallest:.3e} < {cond_tol:.0e}; increase n_B "
                    "or change trials"
                )
            sections[i, j] = Wp @ coeffs
    return FiberFrame(sections, n_frame, family, float(cond), trials)


def default_trials(bands: BandStructure, family: IsolatedFamily, extra: int = 0,
                   seed: int = 0) -> np.ndarray:
    """Family eigenvectors at theta = 0, plus ``extra`` seeded random unit vectors."""
    i0 = bands.grid.m_pts // 2  # node (M/2, M/2) is theta = (0, 0)
    lo, hi = family.k0 - 1, family.k0 + family.n_above
    cols = [bands.eigenvectors[i0, i0][:, k] for k in range(lo, hi)]
    rng = np.random.default_rng(seed)
    for _ in range(extra):
        v = rng.standard_normal(bands.fiber_dim) + 1j * rng.standard_normal(bands.fiber_dim)
        cols.append(v / np.linalg.norm(v))
    return np.stack(cols, axis=1)


@dataclass
class WannierFrame:
    """Localized real-space frame functions and their translation lattice.

    ``samples[p]`` is the flat supercell sample array of psi_p (periodic on
    the M x M supercell).  ``decay_profile[s]`` is the maximal amplitude on
    the cells of the l-infinity shell ``s``, normalized by shell 0.
    """

    samples: np.ndarray              # (n_B, Ng*Ng)
    fiber: FiberFrame
    cell: SupercellGrid
    window_radius: int
    decay_profile: np.ndarray        # (M/2 + 1,)

    @property
    def n_frame(self) -> int:
        return self.samples.shape[0]

    def translate(self, p: int, gamma) -> np.ndarray:
        return self.cell.translate(self.samples[p], gamma)


def synthesize_wannier(fiber_frame: FiberFrame, grid: BrillouinGrid,
                       cell: SupercellGrid, window_radius: int) -> WannierFrame:
    """Inverse Bloch-Floquet synthesis psi_p(x_hat + gamma) = (1/M^2) sum_theta e^{i<theta,gamma>} psi_hat_p.

    Requires M >= 2L + 4 and checks that the measured decay reaches
    ``1e-8`` within radius ``min(M - 2L, M/2)`` so that wrap-around images of
    windowed translates stay negligible.
    """
    M = grid.m_pts
    L = window_radius
    if M < 2 * L + 4:
        raise MarginError(f"periodization margin violated: M={M} < 2L+4={2 * L + 4}")
    n_frame = fiber_frame.n_frame
    samples = np.zeros((n_frame, cell.n_points), dtype=complex)
    for p in range(n_frame):
        sec = fiber_frame.sections[..., p].reshape(M, M, cell.n_s, cell.n_s)
        samples[p] = inverse_bloch_floquet(sec, grid, cell)
    # per-shell maximal amplitude over all p
    prof = np.zeros(M // 2 + 1)
    cells = cell.cells
    for p in range(n_frame):
        g = samples[p].reshape(M, cell.n_s, M, cell.n_s)
        amp = np.max(np.abs(g), axis=(1, 3))
        for a in range(M):
            for b_ in range(M):
                s = min(max(abs(cells[a]), abs(cells[b_])), M // 2)
                prof[s] = max(prof[s], amp[a, b_])
    profile = prof / prof[0]
    s_check = min(M - 2 * L, M // 2)
    if profile[s_check] > WRAP_DECAY_TOL:
        raise MarginError(
            f"frame decay {profile[s_check]:.2e} at radius {s_check} exceeds "
            f"{WRAP_DECAY_TOL:.0e}; increase the supercell or reduce the window"
        )
    return WannierFrame(samples, fiber_frame, cell, L, profile)


def frame_analysis(f: np.ndarray, wannier: WannierFrame) -> np.ndarray:
    """Coordinates c[gamma1, gamma2, p] = <tau_{-gamma} psi_p, f> over the full supercell."""
    cell = wannier.cell
    grid = BrillouinGrid(cell.m_cells)
    fhat = bloch_floquet_transform(f, grid, cell)
    sec = wannier.fiber.sections.reshape(
        cell.m_cells, cell.m_cells, cell.n_s, cell.n_s, wannier.n_frame)
    ip = np.einsum("tuijp,tuij->tup", np.conj(sec), fhat)
    ph = np.exp(1j * 2.0 * np.pi * np.outer(grid.nodes, cell.cells))
    return np.einsum("ta,ub,tup->abp", ph, ph, ip) / grid.m_pts**2


def frame_synthesis(coords: np.ndarray, wannier: WannierFrame) -> np.ndarray:
    """Adjoint of analysis: f = sum_{gamma,p} c[gamma, p] tau_{-gamma} psi_p."""
    cell = wannier.cell
    grid = BrillouinGrid(cell.m_cells)
    ph = np.exp(-1j * 2.0 * np.pi * np.outer(grid.nodes, cell.cells))
    chat = np.einsum("ta,ub,abp->tup", ph, ph, coords)
    sec = wannier.fiber.sections.reshape(
        cell.m_cells, cell.m_cells, cell.n_s, cell.n_s, wannier.n_frame)
    fhat = np.einsum("tuijp,tup->tuij", sec, chat)
    return inverse_bloch_floquet(fhat, grid, cell)


@dataclass
class HoppingSequence:
    """Rapidly decaying matrix sequence gamma -> n x n block."""

    entries: dict                    # (g1, g2) -> (n, n) complex array
    block_size: int
    decay_exponent: float | None = None

    def block(self, gamma) -> np.ndarray:
        g = (int(gamma[0]), int(gamma[1]))
        if g in self.entries:
            return self.entries[g]
        return np.zeros((self.block_size, self.block_size), dtype=complex)

    @property
    def radius(self) -> int:
        return max((max(abs(g[0]), abs(g[1])) for g in self.entries), default=0)

    def norms(self) -> dict:
        return {g: float(np.linalg.norm(m, 2)) for g, m in self.entries.items()}


def band_symbol(bands: BandStructure, family: IsolatedFamily,
                fiber_frame: FiberFrame) -> np.ndarray:
    """m_hat(theta)[p, q] = <psi_hat_p(theta), H_B(theta) psi_hat_q(theta)> on the grid."""
    lo, hi = family.k0 - 1, family.k0 + family.n_above
    E = bands.eigenvectors[:, :, :, lo:hi]
    lam = bands.eigenvalues[:, :, lo:hi]
    proj = np.einsum("tuxk,tuxp->tukp", np.conj(E), fiber_frame.sections)
    return np.einsum("tukp,tuk,tukq->tupq", np.conj(proj), lam, proj)


def hopping_from_bands(bands: BandStructure, family: IsolatedFamily,
                       fiber_frame: FiberFrame, radius: int,
                       tail_tol: float = 1e-10) -> HoppingSequence:
    """Hopping blocks m_gamma = (1/M^2) sum_theta e^{i<theta,gamma>} m_hat(theta), |gamma|_inf <= radius.

    Requires M >= 2*radius + 4 so the discrete Fourier coefficients are not
    aliased; reports the decay-fit exponent of ||m_gamma|| against <gamma>.
    """
    M = bands.grid.m_pts
    if M < 2 * radius + 4:
        raise MarginError(f"hopping radius {radius} too large for M={M}")
    sym = band_symbol(bands, family, fiber_frame)
    entries = {}
    for g1 in range(-radius, radius + 1):
        for g2 in range(-radius, radius + 1):
            entries[(g1, g2)] = torus_fourier(sym, (g1, g2), bands.grid)
    seq = HoppingSequence(entries, fiber_frame.n_frame)
    norms = seq.norms()
    pts = [(np.log(np.hypot(*g) ** 2 + 1.0) / 2.0, np.log(n))
           for g, n in norms.items() if n > tail_tol and (g != (0, 0))]
    if len(pts) >= 3:
        xs, ys = np.array(pts).T
        seq.decay_exponent = float(np.polyfit(xs, ys, 1)[0])
    return seq


def flat_quantization(seq: HoppingSequence, window_radius: int) -> np.ndarray:
    """Block-Toeplitz matrix T_{alpha beta} = m_{alpha - beta} on the centered window."""
    if window_radius < seq.radius:
        raise NumericalError(
            f"window radius {window_radius} smaller than hopping radius {seq.radius}")
    side = 2 * window_radius + 1
    cells = [(a, b) for a in range(-window_radius, window_radius + 1)
             for b in range(-window_radius, window_radius + 1)]
    n = seq.block_size
    out = np.zeros((side * side * n, side * side * n), dtype=complex)
    for i, al in enumerate(cells):
        for j, be in enumerate(cells):
            d = (al[0] - be[0], al[1] - be[1])
            if max(abs(d[0]), abs(d[1])) <= seq.radius:
                out[i * n:(i + 1) * n, j * n:(j + 1) * n] = seq.block(d)
    return out
