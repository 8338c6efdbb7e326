"""Magnetic fields, gauges, line phases, triangle fluxes and Zak translations.

Conventions (d = 2 throughout):

* a field spec describes the perturbing field ``B(x) = eps*(b + c*sum_k
  B_k e^{i<k,x>})``; the *normalized* field ``B^eps = b + c*...`` is what the
  flux helpers integrate, and phases multiply the exponent by ``eps``;
* the constant part is realized in the symmetric gauge ``A = (b/2)(-x2, x1)``
  whose segment integral has the closed form ``(b/2) (x ^ y)`` with
  ``x ^ y = x1*y2 - x2*y1``;
* periodic parts (background field and fluctuations) use the Fourier
  antiderivative ``A = (-d2 phi, d1 phi)``, ``Lap phi = B12``, and segment
  integrals by Gauss-Legendre quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre

from .errors import ConfigError
from .model import ModeMap
from .supercell import SupercellGrid

GAUSS_ORDER = 8


def _gl_nodes(order: int):
    x, w = roots_legendre(order)
    return 0.5 * (x + 1.0), 0.5 * w  # mapped to [0, 1]


def wedge(x, y):
    """Planar cross product x1*y2 - x2*y1 (supports broadcasting)."""
    return x[0] * y[1] - x[1] * y[0]


def signed_area(x, y, z):
    """Signed area of the oriented triangle <x, y, z>."""
    return 0.5 * ((y[0] - x[0]) * (z[1] - x[1]) - (y[1] - x[1]) * (z[0] - x[0]))


def periodic_potential_from_field(field_modes: ModeMap) -> tuple[ModeMap, ModeMap]:
    """Solve dA = B for a periodic zero-flux field, mode-wise.

    Returns the Fourier modes of the two components of ``A = (-d2 phi, d1 phi)``
    with ``Lap phi = B12``.  Raises when the zero mode (mean flux) is present.
    """
    if abs(field_modes.get((0, 0), 0.0)) > 1e-14:
        raise ConfigError(
            "field has nonzero flux per cell; no periodic vector potential exists "
            "(zero-flux property violated)"
        )
    a1, a2 = {}, {}
    for (k1, k2), c in field_modes.items():
        if (k1, k2) == (0, 0):
            continue
        n2 = 2.0 * np.pi * (k1 * k1 + k2 * k2)
        a1[(k1, k2)] = 1j * k2 * c / n2
        a2[(k1, k2)] = -1j * k1 * c / n2
    return a1, a2


def _eval_modes(modes: ModeMap, p1, p2):
    out = np.zeros(np.broadcast(p1, p2).shape, dtype=complex)
    for (k1, k2), c in modes.items():
        out += c * np.exp(1j * 2.0 * np.pi * (k1 * p1 + k2 * p2))
    return out.real


@dataclass(frozen=True)
class MagneticFieldSpec:
    """Perturbing magnetic field eps*(b + c * fluctuations)."""

    epsilon: float = 0.0
    constant_b: float = 1.0
    fluctuation_c: float = 0.0
    fluctuation_modes: tuple = ()
    gauge: str = "symmetric"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if not 0.0 <= self.fluctuation_c <= 1.0:
            raise ConfigError("fluctuation strength c must lie in [0, 1]")
        if self.gauge != "symmetric":
            raise ConfigError(f"unsupported gauge {self.gauge!r}")
        for k, v in self.fluct():
            w = dict(self.fluctuation_modes).get((-k[0], -k[1]))
            if w is None or abs(np.conj(w) - v) > 1e-13 * max(1.0, abs(v)):
                raise ConfigError(f"fluctuation modes not Hermitian-symmetric at k={k}")

    @staticmethod
    def make(epsilon=0.0, constant_b=1.0, fluctuation_c=0.0, fluctuation_modes=None,
             gauge="symmetric") -> "MagneticFieldSpec":
        frozen = tuple(sorted(
            (tuple(k), complex(v)) for k, v in (fluctuation_modes or {}).items()))
        return MagneticFieldSpec(float(epsilon), float(constant_b),
                                 float(fluctuation_c), frozen, gauge)

    def fluct(self):
        return self.fluctuation_modes

    def fluct_map(self) -> ModeMap:
        return {tuple(k): v for k, v in self.fluctuation_modes}

    def with_epsilon(self, eps: float) -> "MagneticFieldSpec":
        return MagneticFieldSpec(float(eps), self.constant_b, self.fluctuation_c,
                                 self.fluctuation_modes, self.gauge)

    def normalized_field_at(self, p1, p2):
        """B^eps(x) = b + c * fluctuations(x), without the factor eps."""
        out = np.full(np.broadcast(p1, p2).shape, self.constant_b, dtype=float)
        if self.fluctuation_c != 0.0 and self.fluctuation_modes:
            out = out + self.fluctuation_c * _eval_modes(self.fluct_map(), p1, p2)
        return out


@dataclass(frozen=True)
class GaugePotential:
    """A vector potential: linear (symmetric-gauge) part plus periodic Fourier parts.

    ``linear_b`` is the constant-field strength; the periodic part is given by
    per-component mode maps.  The exterior derivative reproduces the intended
    field exactly mode-wise (checked in tests, not here).
    """

    linear_b: float = 0.0
    modes_a1: tuple = ()
    modes_a2: tuple = ()

    @staticmethod
    def make(linear_b=0.0, modes_a1=None, modes_a2=None) -> "GaugePotential":
        def freeze(m):
            return tuple(sorted((tuple(k), complex(v)) for k, v in (m or {}).items()))
        return GaugePotential(float(linear_b), freeze(modes_a1), freeze(modes_a2))

    @staticmethod
    def from_periodic_field(field_modes: ModeMap) -> "GaugePotential":
        a1, a2 = periodic_potential_from_field(field_modes)
        return GaugePotential.make(0.0, a1, a2)

    @staticmethod
    def perturbing(spec: MagneticFieldSpec) -> "GaugePotential":
        """Potential of the normalized perturbing field b + c*fluct (factor eps applied by callers)."""
        if spec.fluctuation_c == 0.0 or not spec.fluctuation_modes:
            return GaugePotential.make(spec.constant_b)
        a1, a2 = periodic_potential_from_field(
            {k: spec.fluctuation_c * v for k, v in spec.fluct_map().items()})
        return GaugePotential.make(spec.constant_b, a1, a2)

    def has_periodic_part(self) -> bool:
        return bool(self.modes_a1 or self.modes_a2)

    def field_modes(self) -> ModeMap:
        """Modes of d(periodic part) = d1 A2 - d2 A1 (excludes the constant part)."""
        out: ModeMap = {}
        for (k1, k2), c in self.modes_a2:
            out[(k1, k2)] = out.get((k1, k2), 0.0) + 1j * 2.0 * np.pi * k1 * c
        for (k1, k2), c in self.modes_a1:
            out[(k1, k2)] = out.get((k1, k2), 0.0) - 1j * 2.0 * np.pi * k2 * c
        return out

    def max_mode(self) -> int:
        ks = [max(abs(k[0]), abs(k[1])) for k, _ in self.modes_a1]
        ks += [max(abs(k[0]), abs(k[1])) for k, _ in self.modes_a2]
        return max(ks, default=0)

    def segment_integral(self, x, y, order: int = GAUSS_ORDER):
        """int_[x,y] A along the straight segment; broadcasts over point arrays.

        ``x`` and ``y`` are pairs of scalars or arrays.  The constant part is
        exact; periodic parts use a composite ``order``-point Gauss-Legendre
        rule whose panel length shrinks with the highest mode frequency, so
        long segments stay accurate to ~1e-12.
        """
        x1, x2 = np.asarray(x[0], dtype=float), np.asarray(x[1], dtype=float)
        y1, y2 = np.asarray(y[0], dtype=float), np.asarray(y[1], dtype=float)
        out = 0.5 * self.linear_b * (x1 * y2 - x2 * y1)
        if self.has_periodic_part():
            s, w = _gl_nodes(order)
            d1, d2 = y1 - x1, y2 - x2
            length = float(np.max(np.hypot(d1, d2), initial=0.0))
            panels = max(1, int(np.ceil(length * (1 + self.max_mode()))))
            acc = np.zeros(np.broadcast(x1, y1).shape, dtype=float)
            a1m, a2m = dict(self.modes_a1), dict(self.modes_a2)
            for p in range(panels):
                lo = p / panels
                for sk, wk in zip(s, w):
                    sa = lo + sk / panels
                    p1, p2 = x1 + sa * d1, x2 + sa * d2
                    acc = acc + (wk / panels) * (_eval_modes(a1m, p1, p2) * d1
                                                 + _eval_modes(a2m, p1, p2) * d2)
            out = out + acc
        return out


def line_phase(pot: GaugePotential, x, y, order: int = GAUSS_ORDER):
    """Lambda^A(x, y) = exp(-i int_[x,y] A); broadcasts over endpoint arrays."""
    return np.exp(-1j * pot.segment_integral(x, y, order=order))


def flux_moment_phi(spec: MagneticFieldSpec, alpha, x, y, order: int = GAUSS_ORDER):
    """Phi_alpha[B^eps](x, y) = int_0^1 ds int_0^1 s du B^eps(alpha + s(x-alpha) + u s(y-x)).

    For d=2 this is the (1,2) moment; the triangle flux is
    ``wedge(x - alpha, y - alpha) * Phi_alpha`` (the constant-field value is
    b/2).  Broadcasts over arrays in ``x`` and ``y``; the composite rule
    keeps sub-unit panels against the highest fluctuation mode.
    """
    a1, a2 = float(alpha[0]), float(alpha[1])
    x1, x2 = np.asarray(x[0], dtype=float), np.asarray(x[1], dtype=float)
    y1, y2 = np.asarray(y[0], dtype=float), np.asarray(y[1], dtype=float)
    if spec.fluctuation_c == 0.0 or not spec.fluctuation_modes:
        return np.full(np.broadcast(x1, y1).shape, 0.5 * spec.constant_b)
    kmax = max((max(abs(k[0]), abs(k[1])) for k, _ in spec.fluct()), default=0)
    len_s = max(float(np.max(np.hypot(x1 - a1, x2 - a2), initial=0.0)),
                float(np.max(np.hypot(y1 - a1, y2 - a2), initial=0.0)))
    len_u = float(np.max(np.hypot(y1 - x1, y2 - x2), initial=0.0))
    pan_s = max(1, int(np.ceil(len_s * (1 + kmax))))
    pan_u = max(1, int(np.ceil(len_u * (1 + kmax))))
    g, w = _gl_nodes(order)
    s_nodes = np.concatenate([(p + g) / pan_s for p in range(pan_s)])
    s_wts = np.tile(w / pan_s, pan_s)
    u_nodes = np.concatenate([(p + g) / pan_u for p in range(pan_u)])
    u_wts = np.tile(w / pan_u, pan_u)
    acc = np.zeros(np.broadcast(x1, y1).shape, dtype=float)
    for sk, wk in zip(s_nodes, s_wts):
        for uk, vk in zip(u_nodes, u_wts):
            p1 = a1 + sk * (x1 - a1) + uk * sk * (y1 - x1)
            p2 = a2 + sk * (x2 - a2) + uk * sk * (y2 - x2)
            acc = acc + wk * vk * sk * spec.normalized_field_at(p1, p2)
    return acc


def flux_moment_phi2(spec: MagneticFieldSpec, alpha, beta, y, order: int = GAUSS_ORDER):
    """Phi_{alpha,beta}[B^eps](y): same moment along the edge pattern alpha -> beta -> y."""
    return flux_moment_phi(spec, alpha, beta, y, order=order)


def triangle_flux(spec: MagneticFieldSpec, x, y, z, order: int = GAUSS_ORDER):
    """Normalized flux int_<x,y,z> B^eps (multiply by eps for the physical flux)."""
    if spec.fluctuation_c == 0.0 or not spec.fluctuation_modes:
        return spec.constant_b * signed_area(x, y, z)
    we = wedge((np.asarray(y[0]) - x[0], np.asarray(y[1]) - x[1]),
               (np.asarray(z[0]) - x[0], np.asarray(z[1]) - x[1]))
    return we * flux_moment_phi(spec, x, y, z, order=order)


def omega(spec: MagneticFieldSpec, x, y, z, order: int = GAUSS_ORDER):
    """Omega^B(x,y,z) = exp(-i * eps * int_<x,y,z> B^eps)."""
    return np.exp(-1j * spec.epsilon * triangle_flux(spec, x, y, z, order=order))


def perturbing_line_phase(spec: MagneticFieldSpec, x, y, order: int = GAUSS_ORDER):
    """Lambda-tilde^eps(x, y): phase of the perturbing field only, at strength eps."""
    pot = GaugePotential.perturbing(spec)
    return np.exp(-1j * spec.epsilon * pot.segment_integral(x, y, order=order))


def fluctuation_line_phase(spec: MagneticFieldSpec, x, y, order: int = GAUSS_ORDER):
    """Lambda-tilde^{eps,c}(x, y): phase of the fluctuation part eps*c*B_fluct alone."""
    if spec.fluctuation_c == 0.0 or not spec.fluctuation_modes:
        return np.ones(np.broadcast(np.asarray(x[0]), np.asarray(y[0])).shape, dtype=complex)
    pot = GaugePotential.perturbing(spec)
    fluct_only = GaugePotential(0.0, pot.modes_a1, pot.modes_a2)
    return np.exp(-1j * spec.epsilon * fluct_only.segment_integral(x, y, order=order))


def constant_line_phase(spec: MagneticFieldSpec, x, y):
    """Lambda-tilde^{eps,0}(x, y) = exp(-i (eps*b/2) (x ^ y)): constant part alone."""
    x1, x2 = np.asarray(x[0], dtype=float), np.asarray(x[1], dtype=float)
    y1, y2 = np.asarray(y[0], dtype=float), np.asarray(y[1], dtype=float)
    return np.exp(-1j * 0.5 * spec.epsilon * spec.constant_b * (x1 * y2 - x2 * y1))


def zak_translate(f: np.ndarray, gamma, spec: MagneticFieldSpec, grid: SupercellGrid,
                  order: int = GAUSS_ORDER) -> np.ndarray:
    """Zak translation (T^eps_gamma f)(x) = Lambda-tilde^eps(x, gamma) f(x - gamma).

    ``f`` is a flat or (Ng, Ng) supercell sample array; the translation is
    periodic on the supercell, the phase is evaluated in global coordinates.
    """
    shape = f.shape
    shifted = grid.translate(f.reshape(grid.n_grid, grid.n_grid), gamma)
    x1, x2 = grid.coords()
    g = (float(gamma[0]), float(gamma[1]))
    ph = perturbing_line_phase(spec, (x1, x2), g, order=order)
    return (ph * shifted).reshape(shape)


class PhaseCache:
    """Memoized lattice-pair phases Lambda-tilde^eps(alpha, beta) for one spec."""

    def __init__(self, spec: MagneticFieldSpec, order: int = GAUSS_ORDER):
        self.spec = spec
        self.order = order
        self._store: dict = {}

    def __call__(self, alpha, beta) -> complex:
        key = (int(alpha[0]), int(alpha[1]), int(beta[0]), int(beta[1]))
        val = self._store.get(key)
        if val is None:
            val = complex(perturbing_line_phase(
                self.spec, (float(alpha[0]), float(alpha[1])),
                (float(beta[0]), float(beta[1])), order=self.order))
            self._store[key] = val
        return val
