"""Centered M x M supercell sampled with n_s points per cell edge.

Grid points carry global coordinates x = g/n_s - M/2 with g = 0..M*n_s-1 per
axis, so cells are indexed by gamma in {-M/2, ..., M/2-1}^2 and the cell
offsets are x_hat = i/n_s in [0, 1).  Vectors over the supercell are stored
flat in row-major (axis-0 fastest last) order of the (Ng, Ng) array.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SupercellGrid:
    m_cells: int
    n_s: int
    _coord: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.m_cells % 2 != 0:
            raise ValueError("supercell size must be even")
        g = np.arange(self.m_cells * self.n_s)
        object.__setattr__(self, "_coord", g / self.n_s - self.m_cells // 2)

    @property
    def n_grid(self) -> int:
        return self.m_cells * self.n_s

    @property
    def n_points(self) -> int:
        return self.n_grid**2

    @property
    def spacing(self) -> float:
        return 1.0 / self.n_s

    @property
    def cells(self) -> np.ndarray:
        return np.arange(self.m_cells) - self.m_cells // 2

    def coords(self):
        """Global coordinate meshes (X1, X2), each (Ng, Ng), 'ij' indexed."""
        return np.meshgrid(self._coord, self._coord, indexing="ij")

    def cell_of_points(self):
        """Integer cell index mesh (C1, C2) of every grid point."""
        c = np.floor(self._coord + 1e-12).astype(int)
        return np.meshgrid(c, c, indexing="ij")

    def translate(self, f: np.ndarray, gamma) -> np.ndarray:
        """Periodic translation (tau_{-gamma} f)(x) = f(x - gamma) by whole cells."""
        g = f.reshape(self.n_grid, self.n_grid)
        out = np.roll(np.roll(g, gamma[0] * self.n_s, axis=0), gamma[1] * self.n_s, axis=1)
        return out.reshape(f.shape)

    def interior_mask(self, radius: int) -> np.ndarray:
        """Flat boolean mask of points whose cell lies in the centered box |gamma|_inf <= radius."""
        c1, c2 = self.cell_of_points()
        return ((np.abs(c1) <= radius) & (np.abs(c2) <= radius)).ravel()

    def interior_weight(self, vec: np.ndarray, radius: int) -> float:
        """Area-normalized interior mass of a state: (mass inside / mass) / (area inside / area).

        Equals 1 for a uniformly spread state, ~0 for a boundary-localized
        one; values are clipped to [0, 1] so thresholds compare against the
        uniform baseline.
        """
        m = self.interior_mask(radius)
        p = np.abs(vec.ravel()) ** 2
        tot = p.sum()
        if tot == 0:
            return 0.0
        ratio = (p[m].sum() / tot) / (m.sum() / m.size)
        return float(min(ratio, 1.0))

    def cell_block(self, gamma):
        """Slice pair selecting the (n_s, n_s) block of cell gamma in a (Ng, Ng) array."""
        i = (gamma[0] + self.m_cells // 2) * self.n_s
        j = (gamma[1] + self.m_cells // 2) * self.n_s
        return slice(i, i + self.n_s), slice(j, j + self.n_s)


def cell_interior_weight(coeffs: np.ndarray, cells: np.ndarray, radius: int) -> float:
    """Same area-normalized weight for coefficient vectors indexed by cells.

    ``coeffs`` has one entry per (cell, channel) with ``cells`` the (n, 2)
    integer array listing each entry's cell.
    """
    p = np.abs(coeffs.ravel()) ** 2
    inside = (np.abs(cells[:, 0]) <= radius) & (np.abs(cells[:, 1]) <= radius)
    tot = p.sum()
    if tot == 0:
        return 0.0
    ratio = (p[inside].sum() / tot) / (inside.sum() / inside.size)
    return float(min(ratio, 1.0))
