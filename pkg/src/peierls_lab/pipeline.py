"""End-to-end orchestration: model -> bands -> frame -> magnetic comparisons.

A :class:`Laboratory` owns one validated configuration and lazily builds the
shared objects (band structure, isolated family, Parseval frame, localized
frame functions, hopping sequence) plus the per-epsilon magnetic pipeline
(reference operator, phased frame, Gram correction, effective matrices,
window eigenpairs).  Both the CLI and the acceptance suite drive this class.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .cache import cached_bands
from .effective import (
    MagneticMatrix,
    assemble_fluctuation,
    assemble_peierls,
    direct_matrix_elements,
    first_order_correction,
    window_spectrum,
)
from .errors import NumericalError
from .fibers import BandStructure, IsolatedFamily, compute_bands, detect_isolated_family
from .frames import (
    FiberFrame,
    HoppingSequence,
    WannierFrame,
    build_fiber_frame,
    default_trials,
    hopping_from_bands,
    synthesize_wannier,
)
from .geometry import MagneticFieldSpec, constant_line_phase
from .lattice import BrillouinGrid
from .magframe import (
    MagneticFrame,
    TightFrameCorrection,
    build_magnetic_frame,
    gram_spectrum,
    projector_commutator_norm,
    tighten_magnetic_frame,
)
from .model import PeriodicModel
from .reduction import (
    ReferenceOperator,
    build_reference,
    propagate,
    spectral_distance,
    window_eigenpairs,
)
from .supercell import SupercellGrid, cell_interior_weight

log = logging.getLogger("peierls_lab")


def fit_slope(xs, ys) -> float:
    """Log-log least-squares slope; positive values must be supplied."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    keep = (xs > 0) & (ys > 0)
    if keep.sum() < 2:
        raise NumericalError("need at least two positive points for a slope fit")
    return float(np.polyfit(np.log(xs[keep]), np.log(ys[keep]), 1)[0])


@dataclass
class EpsilonStage:
    """Per-epsilon artifacts of the magnetic pipeline."""

    spec: MagneticFieldSpec
    reference: ReferenceOperator
    frame: MagneticFrame
    gram: "object"
    correction: TightFrameCorrection
    direct: MagneticMatrix


class Laboratory:
    def __init__(self, config: RunConfig):
        self.config = config
        self._cache: dict = {}
        self._stages: dict = {}
        self._windows: dict = {}

    # -- shared, epsilon-independent objects --------------------------------

    @property
    def grid(self) -> BrillouinGrid:
        return BrillouinGrid(self.config.m_cells)

    @property
    def cell(self) -> SupercellGrid:
        return SupercellGrid(self.config.m_cells, self.config["model"]["backend"]["size"])

    def _resolve_shift(self) -> PeriodicModel:
        base = self.config.model()
        policy = self.config.shift_policy
        if isinstance(policy, (int, float)):
            return base
        n_bands = self.config.n_bands()
        guard = self.config["model"]["resolution_guard"]
        first = cached_bands(
            base, self.grid, n_bands, self.config["run"]["cache_dir"],
            lambda: compute_bands(base, self.grid, n_bands, resolution_guard=guard))
        fam = self.config["family"]
        lo = fam["k0"] - 1
        hi = fam["k0"] + fam["n"] - 1
        if policy == "positive":
            shift = 1.0 - float(first.eigenvalues[:, :, 0].min())
        else:  # centered: family midpoint at half the window top
            mid = 0.5 * (first.eigenvalues[:, :, lo].min()
                         + first.eigenvalues[:, :, hi].max())
            top = float(first.eigenvalues[:, :, hi + 1].min())
            shift = top - 2.0 * mid
            if shift + float(first.eigenvalues[:, :, 0].min()) <= 0:
                shift = 1.0 - float(first.eigenvalues[:, :, 0].min())
        return base.with_shift(shift)

    @property
    def model(self) -> PeriodicModel:
        if "model" not in self._cache:
            self._cache["model"] = self._resolve_shift()
        return self._cache["model"]

    @property
    def bands(self) -> BandStructure:
        if "bands" not in self._cache:
            n_bands = self.config.n_bands()
            guard = self.config["model"]["resolution_guard"]
            self._cache["bands"] = cached_bands(
                self.model, self.grid, n_bands, self.config["run"]["cache_dir"],
                lambda: compute_bands(self.model, self.grid, n_bands,
                                      resolution_guard=guard))
        return self._cache["bands"]

    @property
    def family(self) -> IsolatedFamily:
        if "family" not in self._cache:
            fam = self.config["family"]
            self._cache["family"] = detect_isolated_family(
                self.bands, fam["k0"], fam["n"])
        return self._cache["family"]

    @property
    def delta(self) -> float:
        return self.family.d0 * float(self.config["family"]["delta_fraction"])

    @property
    def comparison_window(self):
        return self.family.window_delta(self.delta)

    @property
    def fiber_frame(self) -> FiberFrame:
        if "fiber_frame" not in self._cache:
            frm = self.config["frame"]
            requested = frm["n_frame"]
            extras = ([requested - self.family.size]
                      if requested else [0, 1])  # escalate N+1 -> N+2 once
            last_exc = None
            for extra in extras:
                trials = default_trials(self.bands, self.family, extra=extra,
                                        seed=frm["trials_seed"])
                try:
                    self._cache["fiber_frame"] = build_fiber_frame(
                        self.bands, self.family, trials)
                    if extra:
                        log.info("fiber frame escalated to n_B = N+1+%d", extra)
                    break
                except NumericalError as exc:
                    last_exc = exc
            else:
                raise last_exc
        return self._cache["fiber_frame"]

    @property
    def wannier(self) -> WannierFrame:
        if "wannier" not in self._cache:
            self._cache["wannier"] = synthesize_wannier(
                self.fiber_frame, self.grid, self.cell,
                self.config["frame"]["window_radius"])
        return self._cache["wannier"]

    @property
    def hopping(self) -> HoppingSequence:
        if "hopping" not in self._cache:
            self._cache["hopping"] = hopping_from_bands(
                self.bands, self.family, self.fiber_frame,
                self.config["frame"]["hopping_radius"])
        return self._cache["hopping"]

    # -- per-epsilon pipeline ------------------------------------------------

    def spec(self, eps: float) -> MagneticFieldSpec:
        f = self.config["field"]
        return MagneticFieldSpec.make(
            eps, f["constant_b"], f["fluctuation_c"],
            {tuple(e["k"]): complex(e["re"], e.get("im", 0.0))
             for e in f["fluctuation_modes"]})

    def stage(self, eps: float) -> EpsilonStage:
        key = float(eps)
        if key not in self._stages:
            spec = self.spec(eps)
            reference = build_reference(self.model, spec, self.cell)
            frame = build_magnetic_frame(self.wannier, spec)
            gram = gram_spectrum(frame)
            correction = tighten_magnetic_frame(frame, gram)
            direct = direct_matrix_elements(
                correction.vectors, reference.matrix, frame.cells,
                frame.n_frame, spec)
            self._stages[key] = EpsilonStage(spec, reference, frame, gram,
                                             correction, direct)
        return self._stages[key]

    def peierls_matrix(self, eps: float) -> MagneticMatrix:
        st = self.stage(eps)
        return assemble_peierls(self.hopping, st.spec, st.frame.cells)

    def window_states(self, eps: float):
        """Verified eigenpairs of the reference operator around the family."""
        key = float(eps)
        if key not in self._windows:
            st = self.stage(eps)
            sigma = 0.5 * (self.family.e_prime_minus + self.family.e_prime_plus)
            n_pairs = self.cell.m_cells**2 * self.family.size + 24
            self._windows[key] = window_eigenpairs(
                st.reference.matrix, sigma, n_pairs,
                seed_block=st.frame.vectors, seed=self.config["run"]["seed"] + 7)
        return self._windows[key]

    # -- measurements ---------------------------------------------------------

    def gram_stats(self, eps: float) -> dict:
        g = self.stage(eps).gram
        corr = self.stage(eps).correction
        return {
            "idempotency": g.idempotency_defect,
            "half_width": g.c_q,
            "separated": g.separated(),
            "corrected_idempotency": corr.corrected_gram_defect,
            "column_shift": corr.max_column_shift(),
            "rank": corr.rank,
        }

    def commutator_norm(self, eps: float) -> float:
        st = self.stage(eps)
        return projector_commutator_norm(
            st.correction, st.reference.matrix,
            self.config["run"]["mask_radius"], seed=self.config["run"]["seed"])

    def correction_blocks(self) -> dict:
        """First-order flux-moment blocks per lattice difference (eps independent)."""
        if "corr_blocks" not in self._cache:
            h0 = self.stage(0.0).reference.matrix
            spec = self.spec(1.0)
            radius = self.config["frame"]["hopping_radius"]
            blocks = {}
            for d1 in range(-radius, radius + 1):
                for d2 in range(-radius, radius + 1):
                    blocks[(d1, d2)] = first_order_correction(
                        self.wannier, spec, (d1, d2), (0, 0), h0)
            self._cache["corr_blocks"] = blocks
        return self._cache["corr_blocks"]

    def peierls_residual(self, eps: float, corrected: bool = False) -> float:
        """Interior max-norm residual of the Peierls model against direct elements.

        ``corrected=True`` adds the first-order flux-moment term to the
        Peierls prediction before comparing.
        """
        st = self.stage(eps)
        cells = st.frame.cells
        n = st.frame.n_frame
        radius = self.config["run"]["mask_radius"]
        hop_radius = self.config["frame"]["hopping_radius"]
        inside = (np.abs(cells[:, 0]) <= radius) & (np.abs(cells[:, 1]) <= radius)
        idx = np.where(inside)[0]
        corr = self.correction_blocks() if corrected else None
        resid = 0.0
        for i in idx:
            for j in idx:
                d = (int(cells[i, 0] - cells[j, 0]), int(cells[i, 1] - cells[j, 1]))
                if max(abs(d[0]), abs(d[1])) > hop_radius:
                    continue
                lam = complex(constant_line_phase(
                    st.spec, cells[i].astype(float), cells[j].astype(float)))
                target = self.hopping.block(d)
                if corrected:
                    target = target + eps * corr[d]
                block = st.direct.data[i * n:(i + 1) * n, j * n:(j + 1) * n]
                resid = max(resid, float(np.max(np.abs(np.conj(lam) * block - target))))
        return resid

    def bulk_filter_reference(self, eps: float):
        w, U = self.window_states(eps)
        radius = self.config["run"]["interior_radius"]
        weights = np.array([self.cell.interior_weight(U[:, k], radius)
                            for k in range(U.shape[1])])
        return w, weights

    def reduced_spectrum(self, eps: float):
        st = self.stage(eps)
        return window_spectrum(st.direct, self.config["run"]["interior_radius"])

    def spectral_comparison(self, eps: float, bulk_threshold: float = 0.9) -> dict:
        w_ref, wgt_ref = self.bulk_filter_reference(eps)
        w_red, wgt_red, _ = self.reduced_spectrum(eps)
        window = self.comparison_window
        dist, empty = spectral_distance(
            w_ref, w_red, window,
            test_a=w_ref[wgt_ref >= bulk_threshold],
            test_b=w_red[wgt_red >= bulk_threshold])
        return {"distance": dist, "empty": empty,
                "n_ref": int(np.sum((w_ref > window[0]) & (w_ref < window[1]))),
                "n_red": int(np.sum((w_red > window[0]) & (w_red < window[1])))}

    def window_seed_state(self, eps: float) -> np.ndarray:
        """Interior-localized state filtered through E_J and the frame projection.

        The seed combines central frame columns, is spectrally filtered onto
        the window eigenpairs and then projected onto the corrected frame
        range, so the t=0 round-trip error vanishes identically.
        """
        st = self.stage(eps)
        w, U = self.window_states(eps)
        rng = np.random.default_rng(self.config["run"]["seed"] + 1)
        seed = np.zeros(self.cell.n_points, dtype=complex)
        for gamma in [(0, 0), (1, 0), (0, 1), (-1, -1)]:
            seed += rng.standard_normal() * st.frame.vectors[
                :, st.frame.column(gamma, 0)]
        lo, hi = self.comparison_window
        sel = (w > lo) & (w < hi)
        if not np.any(sel):
            raise NumericalError("empty spectral window for the evolution seed")
        u = U[:, sel] @ (U[:, sel].conj().T @ seed)
        v = st.correction.project(u)
        nrm = np.linalg.norm(v)
        if nrm < 1e-12:
            raise NumericalError("evolution seed vanished after projections")
        return v / nrm

    def evolution_errors(self, eps: float, times) -> np.ndarray:
        """|| exp(-itH^eps) v - V exp(-it M^eps) V* v || for the window seed state."""
        st = self.stage(eps)
        v = self.window_seed_state(eps)
        wm, um = np.linalg.eigh(st.direct.data)
        coeff = um.conj().T @ (st.correction.vectors.conj().T @ v)
        bounds = (0.0, st.reference.norm_bound())
        out = np.zeros(len(times))
        for i, t in enumerate(times):
            full = propagate(st.reference.matrix, v, float(t), bounds=bounds)
            red = st.correction.vectors @ (um @ (np.exp(-1j * float(t) * wm) * coeff))
            out[i] = np.linalg.norm(full - red)
        return out

    def fluctuation_matrix(self, eps: float) -> MagneticMatrix:
        """Composite-phase model built from the constant-field extracted sequence."""
        from .effective import covariance_extract
        st = self.stage(eps)
        const_lab_spec = MagneticFieldSpec.make(eps, st.spec.constant_b)
        const_frame = build_magnetic_frame(self.wannier, const_lab_spec)
        const_corr = tighten_magnetic_frame(const_frame, gram_spectrum(const_frame))
        const_ref = build_reference(self.model, const_lab_spec, self.cell)
        const_direct = direct_matrix_elements(
            const_corr.vectors, const_ref.matrix, const_frame.cells,
            const_frame.n_frame, const_lab_spec)
        seq, _ = covariance_extract(const_direct, self.config["run"]["mask_radius"])
        seq_trunc = HoppingSequence(
            {d: b for d, b in seq.entries.items()
             if max(abs(d[0]), abs(d[1])) <= self.config["frame"]["hopping_radius"]},
            seq.block_size)
        return assemble_fluctuation(seq_trunc, st.spec, st.frame.cells)
