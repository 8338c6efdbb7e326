"""Bloch fibers, band structures, eigenprojections and the three-block split.

Two discretization backends:

* ``planewave``: the continuum fiber in the truncated dual-mode basis
  ``|gamma*|_inf <= K``; kinetic term ``(2 pi (theta + gamma*) - A)^2`` with
  minimal coupling to the periodic background potential.
* ``grid``: ``n_s x n_s`` points per unit cell, 5-point Laplacian on the cell
  torus with Bloch phases ``e^{+-2 pi i theta_j}`` on boundary-crossing links
  and background link phases ``exp(-i int_edge A)``.

The grid backend is exactly consistent with the supercell operators used by
the magnetic pipeline: the union of fiber spectra over an M x M Brillouin
grid equals the spectrum of the periodic M x M supercell operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GapError, NumericalError, ResolutionError
from .geometry import GaugePotential
from .lattice import BrillouinGrid
from .model import PeriodicModel
from .supercell import SupercellGrid


def _background_potential(model: PeriodicModel) -> GaugePotential | None:
    bg = model.background()
    if not bg:
        return None
    return GaugePotential.from_periodic_field(bg)


def grid_fiber_sparse(model: PeriodicModel, theta):
    """Sparse grid-backend fiber H(theta) on the cell torus (csr)."""
    import scipy.sparse as sp

    n_s = model.backend.size
    h = 1.0 / n_s
    n = n_s * n_s
    W = model.sample_potential(n_s).ravel()
    idx = np.arange(n).reshape(n_s, n_s)
    pot = _background_potential(model)
    x = np.arange(n_s) / n_s
    x1, x2 = np.meshgrid(x, x, indexing="ij")
    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [(4.0 / h**2 + W + model.energy_shift).astype(complex)]
    for axis, th in enumerate(theta):
        nb = np.roll(idx, -1, axis=axis)
        wrapping = np.zeros((n_s, n_s), dtype=bool)
        if axis == 0:
            wrapping[-1, :] = True
        else:
            wrapping[:, -1] = True
        # Bloch phase on links that cross the cell boundary in +axis direction
        phase = np.where(wrapping, np.exp(1j * 2.0 * np.pi * th), 1.0 + 0j)
        if pot is not None:
            y1 = x1 + (h if axis == 0 else 0.0)
            y2 = x2 + (h if axis == 1 else 0.0)
            seg = pot.segment_integral((x1, x2), (y1, y2))
            phase = phase * np.exp(-1j * seg)
        amp = (-1.0 / h**2) * phase
        rows += [idx.ravel(), nb.ravel()]
        cols += [nb.ravel(), idx.ravel()]
        vals += [amp.ravel(), np.conj(amp.ravel())]
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n)).tocsr()


def _grid_fiber(model: PeriodicModel, theta) -> np.ndarray:
    return grid_fiber_sparse(model, theta).toarray()


def _planewave_modes(K: int):
    r = np.arange(-K, K + 1)
    g1, g2 = np.meshgrid(r, r, indexing="ij")
    return np.stack([g1.ravel(), g2.ravel()], axis=1)


def _planewave_fiber(model: PeriodicModel, theta) -> np.ndarray:
    K = model.backend.size
    modes = _planewave_modes(K)
    n = len(modes)
    diff1 = modes[:, 0][:, None] - modes[:, 0][None, :]
    diff2 = modes[:, 1][:, None] - modes[:, 1][None, :]
    Wm = model.potential()
    H = np.zeros((n, n), dtype=complex)
    for (k1, k2), c in Wm.items():
        H += np.where((diff1 == k1) & (diff2 == k2), c, 0.0)
    d1 = 2.0 * np.pi * (theta[0] + modes[:, 0])
    d2 = 2.0 * np.pi * (theta[1] + modes[:, 1])
    pot = _background_potential(model)
    if pot is None:
        H[np.arange(n), np.arange(n)] += d1**2 + d2**2
    else:
        # minimal coupling (P_j(theta) - A_j)^2 as matrices in mode space
        a1m, a2m = dict(pot.modes_a1), dict(pot.modes_a2)
        A1 = np.zeros((n, n), dtype=complex)
        A2 = np.zeros((n, n), dtype=complex)
        for (k1, k2), c in a1m.items():
            A1 += np.where((diff1 == k1) & (diff2 == k2), 2.0 * np.pi * c, 0.0)
        for (k1, k2), c in a2m.items():
            A2 += np.where((diff1 == k1) & (diff2 == k2), 2.0 * np.pi * c, 0.0)
        P1 = np.diag(d1.astype(complex)) - A1
        P2 = np.diag(d2.astype(complex)) - A2
        H += P1 @ P1 + P2 @ P2
    H[np.arange(n), np.arange(n)] += model.energy_shift
    return H


def assemble_fiber(model: PeriodicModel, theta) -> np.ndarray:
    """Hermitian fiber matrix H(theta) in the model's backend."""
    H = (_grid_fiber if model.backend.kind == "grid" else _planewave_fiber)(model, theta)
    hs = 0.5 * (H + H.conj().T)
    if np.max(np.abs(H - hs)) > 1e-13 * max(1.0, np.max(np.abs(H))):
        raise NumericalError(f"fiber at theta={theta} lost Hermiticity")
    return hs


def free_mode_energy_max(model: PeriodicModel) -> float:
    """Highest kinetic energy representable by the backend (resolution guard scale)."""
    if model.backend.kind == "grid":
        return 8.0 * model.backend.size**2
    return 2.0 * (2.0 * np.pi * model.backend.size) ** 2


@dataclass
class BandStructure:
    grid: BrillouinGrid
    eigenvalues: np.ndarray          # (M, M, n_bands), ascending per node
    eigenvectors: np.ndarray         # (M, M, dim, n_bands)
    model: PeriodicModel
    backend_tag: str = field(default="")

    @property
    def n_bands(self) -> int:
        return self.eigenvalues.shape[2]

    @property
    def fiber_dim(self) -> int:
        return self.eigenvectors.shape[2]


def compute_bands(model: PeriodicModel, grid: BrillouinGrid, n_bands: int,
                  resolution_guard: bool = True) -> BandStructure:
    """Eigen-decompose every fiber on the grid; sorted, orthonormal eigenvectors.

    The resolution guard flags backends whose highest resolvable free-mode
    energy is below four times the kinetic content of the requested bands
    (band top minus the potential floor); completeness checks that need the
    full fiber spectrum may disable it.
    """
    dim = model.backend.fiber_dim
    if n_bands > dim:
        raise NumericalError(f"n_bands={n_bands} exceeds fiber dimension {dim}")
    M = grid.m_pts
    evals = np.zeros((M, M, n_bands))
    evecs = np.zeros((M, M, dim, n_bands), dtype=complex)
    for (i, j), theta in grid:
        H = assemble_fiber(model, theta)
        try:
            w, v = np.linalg.eigh(H)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"eigensolver failed at grid node ({i},{j})") from exc
        evals[i, j] = w[:n_bands]
        evecs[i, j] = v[:, :n_bands]
    if resolution_guard:
        w_floor = float(np.min(model.sample_potential(16))) if model.potential_modes else 0.0
        kinetic_top = float(np.max(evals[:, :, -1])) - model.energy_shift - w_floor
        if 4.0 * kinetic_top > free_mode_energy_max(model):
            raise ResolutionError(
                f"backend resolution too small: requested bands carry kinetic "
                f"content up to {kinetic_top:.3g} but the backend resolves free "
                f"modes only up to {free_mode_energy_max(model):.3g}"
            )
    return BandStructure(grid, evals, evecs, model, model.backend.kind)


def eigenprojection(bands: BandStructure, node, k_range, gap_tol: float = 1e-8) -> np.ndarray:
    """Spectral projection onto bands ``k_range`` (1-indexed, inclusive) at one node.

    The requested cluster must be separated from the complement by more than
    ``gap_tol`` at that node; projectors are built from the subspace, never
    from individual (gauge-ambiguous) eigenvectors.
    """
    i, j = node
    k0, k1 = k_range
    w = bands.eigenvalues[i, j]
    lo, hi = k0 - 1, k1 - 1
    if not (0 <= lo <= hi < bands.n_bands):
        raise NumericalError(f"band range {k_range} outside computed bands")
    if lo > 0 and w[lo] - w[lo - 1] <= gap_tol:
        raise GapError(f"degeneracy straddles lower range boundary at node {node}")
    if hi + 1 < bands.n_bands and w[hi + 1] - w[hi] <= gap_tol:
        raise GapError(f"degeneracy straddles upper range boundary at node {node}")
    V = bands.eigenvectors[i, j][:, lo:hi + 1]
    return V @ V.conj().T


@dataclass(frozen=True)
class IsolatedFamily:
    k0: int
    n_above: int                     # N: family is bands k0 .. k0+N
    e_minus: float
    e_plus: float
    e_prime_minus: float
    e_prime_plus: float

    @property
    def d0(self) -> float:
        return self.e_plus - self.e_minus

    @property
    def size(self) -> int:
        return self.n_above + 1

    @property
    def window(self) -> tuple[float, float]:
        return (self.e_minus, self.e_plus)

    def window_delta(self, delta: float) -> tuple[float, float]:
        """Shrunk comparison window J^delta = (E- + 2 delta, E+ - 2 delta)."""
        return (self.e_minus + 2.0 * delta, self.e_plus - 2.0 * delta)

    def band_slice(self):
        return slice(self.k0 - 1, self.k0 + self.n_above)


def detect_isolated_family(bands: BandStructure, k0: int, n_above: int) -> IsolatedFamily:
    """Verify the isolated-family hypothesis on the grid and record its window.

    For ``k0 == 1`` there is no band below; the window bottom is the zero
    eigenvalue of the complement block, so ``E- = 0`` (the shifted operator
    must be strictly positive, which is also checked here).
    """
    if k0 < 1 or n_above < 0:
        raise NumericalError("need k0 >= 1 and N >= 0")
    if k0 + n_above + 1 > bands.n_bands:
        raise NumericalError(
            f"family bands {k0}..{k0 + n_above} need band {k0 + n_above + 1}; "
            f"only {bands.n_bands} computed"
        )
    w = bands.eigenvalues
    fam = w[:, :, k0 - 1:k0 + n_above]
    above = w[:, :, k0 + n_above]
    e_plus = float(above.min())
    if w[:, :, 0].min() <= 0.0:
        raise GapError(
            "shifted operator is not strictly positive (H >= E0 > 0 fails); "
            "increase the energy shift"
        )
    if k0 == 1:
        e_minus = 0.0
    else:
        below = w[:, :, k0 - 2]
        e_minus = float(below.max())
        bad = np.argwhere(fam[:, :, 0] - below <= 0)
        if bad.size:
            raise GapError(f"not isolated: lower gap closes at node(s) {bad[:4].tolist()}")
    bad = np.argwhere(above - fam[:, :, -1] <= 0)
    if bad.size:
        raise GapError(f"not isolated: upper gap closes at node(s) {bad[:4].tolist()}")
    if e_plus <= e_minus:
        raise GapError(
            f"not isolated: sup of lower bands {e_minus:.6g} >= inf of upper bands "
            f"{e_plus:.6g}"
        )
    return IsolatedFamily(k0, n_above, e_minus, e_plus,
                          float(fam.min()), float(fam.max()))


def family_projection(bands: BandStructure, family: IsolatedFamily, node) -> np.ndarray:
    return eigenprojection(bands, node, (family.k0, family.k0 + family.n_above))


def three_block_decomposition(bands: BandStructure, family: IsolatedFamily, node):
    """Fiber projectors (P0, PB, Pinf) and blocks (H0, HB) at one grid node."""
    i, j = node
    dim = bands.fiber_dim
    if bands.n_bands < dim:
        raise NumericalError(
            "three-block decomposition needs all bands of the fiber "
            f"(have {bands.n_bands} of {dim})"
        )
    V = bands.eigenvectors[i, j]
    w = bands.eigenvalues[i, j]
    lo = family.k0 - 1
    hi = family.k0 + family.n_above
    P0 = V[:, :lo] @ V[:, :lo].conj().T
    PB = V[:, lo:hi] @ V[:, lo:hi].conj().T
    Pinf = V[:, hi:] @ V[:, hi:].conj().T
    H0 = (V[:, :lo] * w[:lo]) @ V[:, :lo].conj().T
    HB = (V[:, lo:hi] * w[lo:hi]) @ V[:, lo:hi].conj().T
    return P0, PB, Pinf, H0, HB


def bloch_floquet_transform(f: np.ndarray, grid: BrillouinGrid, cell: SupercellGrid,
                            zak: bool = False) -> np.ndarray:
    """(U_BF f)(theta, x_hat) = sum_gamma e^{-i <theta, gamma>} f(x_hat + gamma).

    ``f`` is a supercell sample array (flat or (Ng, Ng)); the result has shape
    (M, M, n_s, n_s) indexed by grid node then cell offset.  The Zak variant
    multiplies by ``e^{-i <theta, x_hat>}``.  Unitary for the fiber norm with
    node weight 1/M^2.
    """
    M, n_s = cell.m_cells, cell.n_s
    if grid.m_pts != M:
        raise NumericalError("Brillouin grid and supercell sizes differ")
    g = f.reshape(M, n_s, M, n_s)
    cells = cell.cells
    ph = np.exp(-1j * 2.0 * np.pi * np.outer(grid.nodes, cells))  # [theta, gamma]
    out = np.einsum("ta,ub,aibj->tuij", ph, ph, g)
    if zak:
        x = np.arange(n_s) / n_s
        zph = np.exp(-1j * 2.0 * np.pi * (
            grid.nodes[:, None, None, None] * x[None, None, :, None]
            + grid.nodes[None, :, None, None] * x[None, None, None, :]))
        out = out * zph
    return out


def inverse_bloch_floquet(F: np.ndarray, grid: BrillouinGrid, cell: SupercellGrid,
                          zak: bool = False) -> np.ndarray:
    """Inverse of :func:`bloch_floquet_transform`; returns flat supercell samples."""
    M, n_s = cell.m_cells, cell.n_s
    if zak:
        x = np.arange(n_s) / n_s
        zph = np.exp(1j * 2.0 * np.pi * (
            grid.nodes[:, None, None, None] * x[None, None, :, None]
            + grid.nodes[None, :, None, None] * x[None, None, None, :]))
        F = F * zph
    ph = np.exp(1j * 2.0 * np.pi * np.outer(grid.nodes, cell.cells))
    g = np.einsum("ta,ub,tuij->aibj", ph, ph, F) / M**2
    return g.reshape(cell.n_points)
