"""Lattice Gamma ~ Z^2, its dual, unit cells and Fourier conventions.

All Fourier conventions are fixed here once: the dual pairing carries the
factor 2*pi inside the exponent and none in the measure, i.e.
``<xi, x> = 2*pi*(xi_1*x_1 + xi_2*x_2)``, characters are
``chi_theta(gamma) = exp(-i <theta, gamma>)`` and the Brillouin torus carries
total measure 1 (weight ``1/M**2`` per node of an ``M x M`` grid).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Pair = tuple[float, float]


def pairing(xi, x) -> float:
    """Dual pairing <xi, x> = 2*pi*sum_j xi_j x_j."""
    return 2.0 * np.pi * (xi[0] * x[0] + xi[1] * x[1])


def wrap_and_split(xi):
    """Split xi = iota*(xi) + xi_hat with integer part and xi_hat in [-1/2, 1/2)^2.

    Returns ``(iota, xi_hat)`` where ``iota`` has integer entries and the
    round trip ``iota + xi_hat == xi`` is exact in floating point.
    """
    xi = np.asarray(xi, dtype=float)
    iota = np.floor(xi + 0.5).astype(int)
    return iota, xi - iota


def character(theta, gamma) -> complex:
    """Character chi_theta(gamma) = exp(-i <theta, gamma>), multiplicative in gamma."""
    return complex(np.exp(-1j * pairing(theta, gamma)))


@dataclass(frozen=True)
class BrillouinGrid:
    """Uniform M x M sampling of the dual torus, nodes (j - M/2)/M in [-1/2, 1/2).

    ``M`` must be even (FFT friendly, half-open cell convention).  ``nodes``
    holds the per-axis coordinates; 2-D nodes are the tensor product in
    ``ij`` order.  Each node carries quadrature weight ``1/M**2`` so the
    total measure of the torus is 1.
    """

    m_pts: int
    nodes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.m_pts < 2 or self.m_pts % 2 != 0:
            raise ValueError(f"grid size must be even and >= 2, got {self.m_pts}")
        object.__setattr__(
            self, "nodes", (np.arange(self.m_pts) - self.m_pts // 2) / self.m_pts
        )

    @property
    def weight(self) -> float:
        return 1.0 / self.m_pts**2

    def mesh(self):
        """Node coordinate arrays (T1, T2), each of shape (M, M), 'ij' indexed."""
        return np.meshgrid(self.nodes, self.nodes, indexing="ij")

    def node(self, i: int, j: int) -> Pair:
        return (float(self.nodes[i]), float(self.nodes[j]))

    def __iter__(self):
        for i in range(self.m_pts):
            for j in range(self.m_pts):
                yield (i, j), self.node(i, j)


def torus_fourier(samples: np.ndarray, gamma, grid: BrillouinGrid):
    """Fourier coefficient (1/M^2) * sum_theta e^{i <theta, gamma>} f(theta).

    ``samples`` holds f on the grid, indexed ``[i, j, ...]`` over nodes; any
    trailing axes (e.g. matrix entries) are carried through.  Exact for
    band-limited f whose modes stay below M/2.
    """
    samples = np.asarray(samples)
    if samples.shape[:2] != (grid.m_pts, grid.m_pts):
        raise ValueError(
            f"samples shape {samples.shape} does not match grid M={grid.m_pts}"
        )
    ph1 = np.exp(1j * 2.0 * np.pi * grid.nodes * gamma[0])
    ph2 = np.exp(1j * 2.0 * np.pi * grid.nodes * gamma[1])
    return np.einsum("i,j,ij...->...", ph1, ph2, samples) * grid.weight


def torus_synthesis(coeffs: dict, grid: BrillouinGrid) -> np.ndarray:
    """Evaluate sum_gamma c_gamma e^{-i <theta, gamma>} on the grid nodes."""
    t1, t2 = grid.mesh()
    out = None
    for gamma, c in coeffs.items():
        ph = np.exp(-1j * 2.0 * np.pi * (t1 * gamma[0] + t2 * gamma[1]))
        term = ph[..., None] * np.asarray(c)[None, None, ...] if np.ndim(c) else c * ph
        out = term if out is None else out + term
    if out is None:
        raise ValueError("no coefficients given")
    return out


def centered_cells(m_cells: int) -> np.ndarray:
    """Cell indices {-M/2, ..., M/2 - 1} of the centered M x M supercell."""
    return np.arange(m_cells) - m_cells // 2
