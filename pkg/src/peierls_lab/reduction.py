"""Exact truncated reference operators, Feshbach-Schur reduction, propagation.

The reference operator discretizes the perturbed Hamiltonian on the open
(Dirichlet-truncated) supercell: a 5-point stencil whose links carry the
phase ``exp(-i int_edge (A_background + eps A_perturbing))`` and whose
diagonal holds the sampled potential plus the energy shift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import jv

from .errors import NumericalError
from .geometry import GaugePotential, MagneticFieldSpec
from .model import PeriodicModel
from .supercell import SupercellGrid

DENSE_CROSSOVER = 4000


@dataclass
class ReferenceOperator:
    matrix: sp.csr_matrix
    grid: SupercellGrid
    model: PeriodicModel
    spec: MagneticFieldSpec
    open_boundary: bool = True

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def norm_bound(self) -> float:
        """Cheap Gershgorin enclosure radius max_i sum_j |H_ij|."""
        return float(np.max(np.abs(self.matrix).sum(axis=1)))


def build_reference(model: PeriodicModel, spec: MagneticFieldSpec,
                    grid: SupercellGrid, open_boundary: bool = True,
                    derivative: bool = False) -> ReferenceOperator:
    """Assemble the (open) supercell operator with background + perturbing link phases.

    With ``derivative=True`` the matrix returned is the exact derivative
    d H^eps / d eps at the assembled eps: every hopping entry is multiplied
    by ``-i int_edge A_perturbing`` (used by first-order checks).
    """
    if model.backend.kind != "grid" or model.backend.size != grid.n_s:
        raise NumericalError(
            "reference operator requires the grid backend with matching n_s "
            f"(model has {model.backend}, supercell n_s={grid.n_s})"
        )
    n_s = grid.n_s
    Ng = grid.n_grid
    h = grid.spacing
    n = grid.n_points
    Wc = model.sample_potential(n_s)
    W = np.tile(Wc, (grid.m_cells, grid.m_cells)).ravel()
    bg = model.background()
    pot_bg = GaugePotential.from_periodic_field(bg) if bg else None
    pot_pert = GaugePotential.perturbing(spec)
    idx = np.arange(n).reshape(Ng, Ng)
    X1, X2 = grid.coords()
    rows = [np.arange(n)]
    cols = [np.arange(n)]
    if derivative:
        vals = [np.zeros(n, dtype=complex)]
    else:
        vals = [(4.0 / h**2 + W + model.energy_shift).astype(complex)]
    for axis in range(2):
        nb = np.roll(idx, -1, axis=axis)
        wrap = np.zeros((Ng, Ng), dtype=bool)
        if axis == 0:
            wrap[-1, :] = True
        else:
            wrap[:, -1] = True
        Y1 = X1 + (h if axis == 0 else 0.0)
        Y2 = X2 + (h if axis == 1 else 0.0)
        seg_pert = pot_pert.segment_integral((X1, X2), (Y1, Y2))
        exponent = spec.epsilon * seg_pert
        if pot_bg is not None:
            exponent = exponent + pot_bg.segment_integral((X1, X2), (Y1, Y2))
        amp = (-1.0 / h**2) * np.exp(-1j * exponent)
        if derivative:
            amp = amp * (-1j * seg_pert)
        keep = ~wrap if open_boundary else np.ones((Ng, Ng), dtype=bool)
        r = idx[keep].ravel()
        c = nb[keep].ravel()
        v = amp[keep].ravel()
        rows += [r, c]
        cols += [c, r]
        vals += [v, np.conj(v)]
    H = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    return ReferenceOperator(H, grid, model, spec, open_boundary)


# ---------------------------------------------------------------------------
# Feshbach-Schur blocks
# ---------------------------------------------------------------------------

def _range_bases(pi: np.ndarray, tol: float = 1e-9):
    w, u = np.linalg.eigh(0.5 * (pi + pi.conj().T))
    if np.max(np.abs(w * (1.0 - w))) > tol:
        raise NumericalError("Pi is not a projection")
    return u[:, w > 0.5], u[:, w <= 0.5]


@dataclass
class SchurBlocks:
    r_perp: np.ndarray        # R_perp(lambda) on range(Pi_perp), in the Pi_perp basis
    schur: np.ndarray         # Pi(H - lambda)Pi - Pi H R_perp H Pi, in the Pi basis
    r_tilde: np.ndarray       # inverse of schur
    inverse: np.ndarray       # assembled (H - lambda)^{-1} in the original basis
    basis_in: np.ndarray      # columns spanning range(Pi)
    basis_out: np.ndarray     # columns spanning range(Pi_perp)


def schur_resolvent(H: np.ndarray, pi: np.ndarray, lam: complex) -> SchurBlocks:
    """Feshbach-Schur block decomposition of (H - lambda)^{-1} through Pi.

    Requires the complement block to be invertible; the assembled 2x2 block
    inverse equals the direct inverse (tested at 1e-12 on random instances).
    """
    U, Up = _range_bases(np.asarray(pi))
    Hm = np.asarray(H, dtype=complex)
    A = U.conj().T @ Hm @ U - lam * np.eye(U.shape[1])
    B = U.conj().T @ Hm @ Up
    C = Up.conj().T @ Hm @ U
    D = Up.conj().T @ Hm @ Up - lam * np.eye(Up.shape[1])
    sv = np.linalg.svd(D, compute_uv=False)
    if sv[-1] < 1e-12 * max(sv[0], 1.0):
        raise NumericalError(
            f"complement block singular at lambda={lam}: lambda lies in the "
            "spectrum of Pi_perp H Pi_perp"
        )
    r_perp = np.linalg.inv(D)
    schur = A - B @ r_perp @ C
    try:
        r_tilde = np.linalg.inv(schur)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"Schur complement singular at lambda={lam}") from exc
    top_left = r_tilde
    top_right = -r_tilde @ B @ r_perp
    bot_left = -r_perp @ C @ r_tilde
    bot_right = r_perp + r_perp @ C @ r_tilde @ B @ r_perp
    inv = (U @ top_left @ U.conj().T + U @ top_right @ Up.conj().T
           + Up @ bot_left @ U.conj().T + Up @ bot_right @ Up.conj().T)
    return SchurBlocks(r_perp, schur, r_tilde, inv, U, Up)


def schur_singularities(H: np.ndarray, pi: np.ndarray, window, n_scan: int = 400,
                        tol: float = 1e-10):
    """Locate the points of ``window`` where the Schur complement is singular.

    Tracks the sign of ``det S(t)`` (real for Hermitian instances, flipping at
    every simple eigenvalue of H inside the window when the complement block
    stays invertible there) and refines each sign change by bisection.  These
    locations match ``window intersect sigma(H)``.
    """
    U, Up = _range_bases(np.asarray(pi))
    Hm = np.asarray(H, dtype=complex)
    A = U.conj().T @ Hm @ U
    B = U.conj().T @ Hm @ Up
    C = Up.conj().T @ Hm @ U
    D = Up.conj().T @ Hm @ Up

    def det_sign(t):
        s = A - t * np.eye(A.shape[0]) - B @ np.linalg.inv(
            D - t * np.eye(D.shape[0])) @ C
        w = np.linalg.eigvalsh(0.5 * (s + s.conj().T))
        return 1.0 - 2.0 * (np.count_nonzero(w < 0) % 2)

    ts = np.linspace(window[0], window[1], n_scan)
    vals = np.array([det_sign(t) for t in ts])
    roots = []
    for i in range(len(ts) - 1):
        if vals[i] == 0.0:
            roots.append(ts[i])
        elif vals[i] != vals[i + 1]:
            lo, hi = ts[i], ts[i + 1]
            slo = vals[i]
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                sm = det_sign(mid)
                if sm == slo:
                    lo = mid
                else:
                    hi = mid
            roots.append(0.5 * (lo + hi))
    return np.array(roots)


def window_invertibility(H: np.ndarray, pi: np.ndarray, ts) -> tuple[float, list]:
    """sup over t of || R_perp(t) || on range(Pi_perp); reports failing t's.

    Dense-only path (the validation instances are compressed); the norm is
    the inverse of the smallest singular value of the complement block.
    """
    if H.shape[0] > DENSE_CROSSOVER:
        raise NumericalError(
            f"window_invertibility is dense-only (dim {H.shape[0]} > {DENSE_CROSSOVER})")
    _, Up = _range_bases(np.asarray(pi))
    Hp = Up.conj().T @ np.asarray(H, dtype=complex) @ Up
    sup = 0.0
    failures = []
    for t in np.atleast_1d(ts):
        s = np.linalg.svd(Hp - t * np.eye(Hp.shape[0]), compute_uv=False)
        smin = s[-1]
        if smin < 1e-12 * max(1.0, s[0]):
            failures.append(float(t))
        else:
            sup = max(sup, 1.0 / smin)
    return float(sup), failures


def spectral_distance(spec_a, spec_b, window, test_a=None, test_b=None):
    """Two-sided spectral distance restricted to a window.

    ``max( sup_{x in test_a ^ J} dist(x, spec_b),
           sup_{x in test_b ^ J} dist(x, spec_a) )``.
    Only the *test* sets (default: the spectra themselves, typically bulk
    filtered by the caller) are restricted to the window; distances target
    the whole other spectrum.  Returns ``(value, empty)`` where ``empty``
    flags an empty window intersection (value 0).
    """
    lo, hi = window
    ta = np.atleast_1d(spec_a if test_a is None else test_a)
    tb = np.atleast_1d(spec_b if test_b is None else test_b)
    ta = ta[(ta > lo) & (ta < hi)]
    tb = tb[(tb > lo) & (tb < hi)]
    s_a = np.sort(np.atleast_1d(spec_a))
    s_b = np.sort(np.atleast_1d(spec_b))
    if len(ta) == 0 and len(tb) == 0:
        return 0.0, True

    def one_sided(ts, target):
        if len(ts) == 0 or len(target) == 0:
            return 0.0
        pos = np.searchsorted(target, ts)
        left = np.abs(ts - target[np.clip(pos - 1, 0, len(target) - 1)])
        right = np.abs(ts - target[np.clip(pos, 0, len(target) - 1)])
        return float(np.max(np.minimum(left, right)))

    return max(one_sided(ta, s_b), one_sided(tb, s_a)), False


# ---------------------------------------------------------------------------
# Window eigenpairs and propagation
# ---------------------------------------------------------------------------

def window_eigenpairs(H, sigma: float, n_pairs: int, seed_block=None,
                      pad: int = 40, iters: int = 4, seed: int = 7,
                      residual_tol: float = 1e-8, method: str = "subspace"):
    """Eigenpairs of the sparse Hermitian H nearest ``sigma``.

    The default method runs shift-invert block subspace iteration seeded by
    ``seed_block`` (plus random padding) followed by Rayleigh-Ritz; every
    returned pair satisfies ``||H u - w u|| <= residual_tol`` (verified, the
    others are dropped).  ``method='arpack'`` delegates to ARPACK instead and
    serves as an independent cross-check.
    """
    n = H.shape[0]
    if method == "arpack":
        w, u = spla.eigsh(H, k=n_pairs, sigma=sigma, which="LM")
        order = np.argsort(w)
        return w[order], u[:, order]
    rng = np.random.default_rng(seed)
    blocks = []
    if seed_block is not None:
        blocks.append(np.asarray(seed_block, dtype=complex))
    have = blocks[0].shape[1] if blocks else 0
    extra = max(n_pairs - have, 0) + pad
    blocks.append(rng.standard_normal((n, extra)) + 1j * rng.standard_normal((n, extra)))
    X = np.concatenate(blocks, axis=1)
    lu = spla.splu((H - sigma * sp.identity(n, dtype=complex, format="csc")).tocsc())
    X, _ = np.linalg.qr(X)
    for _ in range(iters):
        X = lu.solve(X)
        X, _ = np.linalg.qr(X)
    A = X.conj().T @ (H @ X)
    w, S = np.linalg.eigh(0.5 * (A + A.conj().T))
    U = X @ S
    res = np.linalg.norm(H @ U - U * w, axis=0)
    ok = res <= residual_tol * max(1.0, float(np.max(np.abs(w))))
    w, U = w[ok], U[:, ok]
    order = np.argsort(np.abs(w - sigma))[:n_pairs]
    order = order[np.argsort(w[order])]
    return w[order], U[:, order]


def propagate(H, v: np.ndarray, t: float, bounds=None, tol: float = 1e-12) -> np.ndarray:
    """exp(-i t H) v: Chebyshev expansion (sparse) or eigendecomposition (dense <= 4000).

    ``bounds`` optionally encloses the spectrum; otherwise a Gershgorin
    enclosure is used.  Unitary to ~1e-12 by construction of the truncation.
    """
    if np.linalg.norm(v) == 0.0:
        raise NumericalError("cannot propagate the zero vector")
    if t == 0.0:
        return v.copy()
    if not sp.issparse(H):
        Hm = np.asarray(H)
        if Hm.shape[0] > DENSE_CROSSOVER:
            raise NumericalError("dense propagation limited to dimension 4000")
        w, u = np.linalg.eigh(Hm)
        return u @ (np.exp(-1j * t * w) * (u.conj().T @ v))
    if bounds is None:
        diag = H.diagonal().real
        radii = np.asarray(np.abs(H).sum(axis=1)).ravel() - np.abs(diag)
        bounds = (float(np.min(diag - radii)), float(np.max(diag + radii)))
    lo, hi = bounds
    center = 0.5 * (hi + lo)
    rho = 0.5 * (hi - lo) * (1.0 + 1e-9) + 1e-30
    tau = rho * abs(t)
    deg = int(tau + 12.0 * tau ** (1.0 / 3.0) + 60)
    ks = np.arange(deg + 1)
    coef = 2.0 * jv(ks, tau) * (-1j) ** ks
    coef[0] *= 0.5
    keep = np.nonzero(np.abs(coef) > tol)[0]
    if len(keep) == 0:
        raise NumericalError("Chebyshev expansion degenerated")
    last = int(keep.max()) + 1
    sgn = np.sign(t)
    phase = np.exp(-1j * t * center)
    t_prev = v
    t_cur = (H @ v - center * v) / rho
    acc = coef[0] * t_prev + (coef[1] * sgn) * t_cur
    for k in range(2, last):
        t_next = 2.0 * (H @ t_cur - center * t_cur) / rho - t_prev
        acc += (coef[k] * sgn**k) * t_next
        t_prev, t_cur = t_cur, t_next
    out = phase * acc
    drift = abs(np.linalg.norm(out) - np.linalg.norm(v))
    if drift > 1e-9 * np.linalg.norm(v):
        raise NumericalError(f"Chebyshev propagation lost unitarity by {drift:.2e}")
    return out


@dataclass
class EvolutionRecord:
    times: np.ndarray
    epsilons: np.ndarray
    errors: np.ndarray               # (n_eps, n_times)
    slope_at_unit_time: float | None = None

    def envelope_ok(self, eps_index: int, slack: float = 3.0) -> bool:
        """Check err(t) <= slack * C * (eps + (1+t)^3 eps^2) with C fitted at t=1."""
        eps = float(self.epsilons[eps_index])
        it = int(np.argmin(np.abs(self.times - 1.0)))
        denom = eps + 8.0 * eps**2
        if denom == 0.0:
            return True
        C = self.errors[eps_index, it] / denom
        env = slack * C * (eps + (1.0 + self.times) ** 3 * eps**2)
        return bool(np.all(self.errors[eps_index] <= env + 1e-30))


def quasi_analytic_extension(phi_derivatives, t: float, order: int, z: complex,
                             chi=None):
    """Quasi-analytic extension value and its (d/dx + i d/dy) defect at z = x + iy.

    ``phi_derivatives(k, x)`` returns the k-th derivative of the real cutoff
    function phi at x, for k <= order + 1.  The extension is

        phi_hat(x + iy) = sum_{k<=N} (d^k phi_t)(x) (iy)^k / k! * chi(y),

    with ``phi_t(s) = exp(-i t s) phi(s)``; the returned ``dbar`` value is
    ``(d_x + i d_y) phi_hat`` whose small-y limit satisfies
    ``|y|^{-N} |dbar| -> |(d^{N+1} phi_t)(x)| / N!``.  ``chi`` defaults to a
    smooth cutoff equal to 1 on |y| <= 1 and supported in |y| <= 2.
    """
    if order > 6:
        raise NumericalError("extension order limited to N <= 6")
    if chi is None:
        chi = _default_cutoff
    x, y = float(np.real(z)), float(np.imag(z))

    def dphi_t(k):
        # Leibniz: d^k [e^{-its} phi] = e^{-itx} sum_j C(k,j) (-it)^j phi^(k-j)
        total = 0.0 + 0.0j
        binom = 1.0
        for jj in range(k + 1):
            total += binom * (-1j * t) ** jj * phi_derivatives(k - jj, x)
            binom = binom * (k - jj) / (jj + 1)
        return np.exp(-1j * t * x) * total

    chi_y, dchi_y = chi(y)
    fact = 1.0
    val = 0.0 + 0.0j
    s_chi = 0.0 + 0.0j
    for k in range(order + 1):
        if k > 0:
            fact *= k
        term = dphi_t(k) * (1j * y) ** k / fact
        val += term * chi_y
        s_chi += term * dchi_y
    dbar = 1j * s_chi + dphi_t(order + 1) * (1j * y) ** order / fact * chi_y
    return val, dbar


def _default_cutoff(y: float):
    """Smooth chi with chi = 1 on |y| <= 1, supp in |y| <= 2; returns (chi, chi')."""
    a = abs(y)
    if a <= 1.0:
        return 1.0, 0.0
    if a >= 2.0:
        return 0.0, 0.0
    # smoothstep on [1, 2]
    s = a - 1.0
    val = 1.0 - s * s * (3.0 - 2.0 * s)
    der = -(6.0 * s - 6.0 * s * s) * np.sign(y)
    return val, der


def bump_function(a: float, b: float):
    """Smooth bump supported on (a, b) with analytic derivatives via FD-free closure.

    Returns ``phi_derivatives(k, x)`` computing derivatives by a centered
    high-order finite-difference stencil on a fine grid (5-point per
    derivative order, spacing scaled to the support width).
    """
    width = b - a
    if width <= 0:
        raise NumericalError("empty support")

    def phi(x):
        x = np.asarray(x, dtype=float)
        u = (2.0 * (x - a) / width) - 1.0
        inside = np.abs(u) < 1.0
        out = np.zeros_like(u)
        uu = np.where(inside, u, 0.0)
        out = np.where(inside, np.exp(-1.0 / np.maximum(1.0 - uu * uu, 1e-300) + 1.0), 0.0)
        return out

    h = width / 4096.0

    def derivatives(k: int, x: float) -> float:
        if k == 0:
            return float(phi(x))
        # iterated 5-point first-derivative stencil
        pts = np.array([x], dtype=float)
        vals = None
        for _ in range(k):
            pts = (pts[:, None] + h * np.array([-2.0, -1.0, 1.0, 2.0])).ravel()
        vals = phi(pts)
        coef = np.array([1.0, -8.0, 8.0, -1.0]) / (12.0 * h)
        for _ in range(k):
            vals = vals.reshape(-1, 4) @ coef
        return float(vals[0])

    return derivatives
