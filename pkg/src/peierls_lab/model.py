"""The unperturbed Gamma-periodic model: potential, background field, backend."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

ModeMap = dict[tuple[int, int], complex]


def _check_hermitian_modes(modes: ModeMap, what: str, tol: float = 1e-13) -> None:
    for k, v in modes.items():
        w = modes.get((-k[0], -k[1]))
        if w is None or abs(np.conj(w) - v) > tol * max(1.0, abs(v)):
            raise ConfigError(
                f"{what} modes are not Hermitian-symmetric at k={k}: "
                f"need W(-k) == conj(W(k))"
            )


def sample_modes(modes: ModeMap, n_s: int) -> np.ndarray:
    """Evaluate sum_k c_k e^{i <k, x>} on the n_s x n_s cell grid x = i/n_s.

    The result is real for Hermitian-symmetric mode maps; the tiny imaginary
    residue is dropped.
    """
    x = np.arange(n_s) / n_s
    x1, x2 = np.meshgrid(x, x, indexing="ij")
    out = np.zeros((n_s, n_s), dtype=complex)
    for (k1, k2), c in modes.items():
        out += c * np.exp(1j * 2.0 * np.pi * (k1 * x1 + k2 * x2))
    return out.real


@dataclass(frozen=True)
class Backend:
    """Discretization backend: 'planewave' with mode cutoff K or 'grid' with n_s points per cell edge."""

    kind: str
    size: int

    def __post_init__(self):
        if self.kind not in ("planewave", "grid"):
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if self.size < 2:
            raise ConfigError("backend size must be >= 2")

    @property
    def fiber_dim(self) -> int:
        n = 2 * self.size + 1 if self.kind == "planewave" else self.size
        return n * n


@dataclass(frozen=True)
class PeriodicModel:
    """Gamma-periodic Hamiltonian H = -Laplace + W(x) + shift with optional zero-flux background field.

    ``potential_modes`` maps dual-lattice vectors k to Fourier coefficients of
    W (must be Hermitian-symmetric so W is real).  ``background_field_modes``
    holds the modes of the periodic field component B12 with vanishing zero
    mode (zero flux per cell), realized through a periodic vector potential.
    ``energy_shift`` is added to the operator; callers pick it so the shifted
    operator is strictly positive.
    """

    potential_modes: tuple = ()
    background_field_modes: tuple = ()
    backend: Backend = Backend("grid", 12)
    energy_shift: float = 0.0

    def __post_init__(self):
        _check_hermitian_modes(self.potential(), "potential")
        bg = self.background()
        if abs(bg.get((0, 0), 0.0)) > 1e-14:
            raise ConfigError(
                "background field has nonzero mean flux; the zero-flux property "
                "requires a vanishing (0,0) mode"
            )
        _check_hermitian_modes(bg, "background field")

    @staticmethod
    def make(potential_modes: ModeMap | None = None,
             background_field_modes: ModeMap | None = None,
             backend: Backend | None = None,
             energy_shift: float = 0.0) -> "PeriodicModel":
        def freeze(m):
            return tuple(sorted((tuple(k), complex(v)) for k, v in (m or {}).items()))
        return PeriodicModel(
            freeze(potential_modes),
            freeze(background_field_modes),
            backend or Backend("grid", 12),
            float(energy_shift),
        )

    def potential(self) -> ModeMap:
        return {tuple(k): v for k, v in self.potential_modes}

    def background(self) -> ModeMap:
        return {tuple(k): v for k, v in self.background_field_modes}

    def with_shift(self, shift: float) -> "PeriodicModel":
        return PeriodicModel(
            self.potential_modes, self.background_field_modes, self.backend, float(shift)
        )

    def sample_potential(self, n_s: int | None = None) -> np.ndarray:
        n = n_s if n_s is not None else self.backend.size
        return sample_modes(self.potential(), n)

    def content_hash(self) -> str:
        """Stable hash of the model content, used as cache key."""
        blob = {
            "potential": [[k[0], k[1], v.real, v.imag] for k, v in self.potential_modes],
            "background": [[k[0], k[1], v.real, v.imag] for k, v in self.background_field_modes],
            "backend": [self.backend.kind, self.backend.size],
            "shift": self.energy_shift,
        }
        data = json.dumps(blob, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(data.encode()).hexdigest()[:16]


def cosine_model(mu: float, backend: Backend | None = None,
                 energy_shift: float = 0.0) -> PeriodicModel:
    """Separable cosine potential W(x) = 2*mu*(cos 2pi x1 + cos 2pi x2)."""
    modes = {(1, 0): mu + 0j, (-1, 0): mu + 0j, (0, 1): mu + 0j, (0, -1): mu + 0j}
    return PeriodicModel.make(modes, None, backend, energy_shift)
