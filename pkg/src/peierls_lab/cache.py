"""Band cache files: JSON header plus hex-encoded little-endian float64 arrays.

A cache entry is keyed by the model hash together with the grid size and the
number of bands; a corrupted payload (hash mismatch) triggers a recompute,
never silent reuse.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from .fibers import BandStructure
from .lattice import BrillouinGrid
from .model import Backend, PeriodicModel

FORMAT_VERSION = 1


def _encode(arr: np.ndarray) -> str:
    return arr.astype("<f8").tobytes().hex()


def _decode(text: str, shape) -> np.ndarray:
    return np.frombuffer(bytes.fromhex(text), dtype="<f8").reshape(shape).copy()


def cache_key(model: PeriodicModel, m_pts: int, n_bands: int) -> str:
    return f"bands_{model.content_hash()}_M{m_pts}_nb{n_bands}"


def save_bands(path: str, bands: BandStructure) -> None:
    vec = bands.eigenvectors
    payload = {
        "eigenvalues": _encode(bands.eigenvalues),
        "eigenvectors_re": _encode(vec.real),
        "eigenvectors_im": _encode(vec.imag),
    }
    digest = hashlib.sha256(
        (payload["eigenvalues"] + payload["eigenvectors_re"]
         + payload["eigenvectors_im"]).encode()).hexdigest()
    header = {
        "format": FORMAT_VERSION,
        "model_hash": bands.model.content_hash(),
        "backend": [bands.model.backend.kind, bands.model.backend.size],
        "energy_shift": bands.model.energy_shift,
        "m_pts": bands.grid.m_pts,
        "n_bands": bands.n_bands,
        "fiber_dim": bands.fiber_dim,
        "payload_sha256": digest,
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump({"header": header, "payload": payload}, fh)
    os.replace(tmp, path)


def load_bands(path: str, model: PeriodicModel, grid: BrillouinGrid,
               n_bands: int) -> BandStructure | None:
    """Load a cached band structure; returns None on any mismatch or corruption."""
    try:
        with open(path) as fh:
            blob = json.load(fh)
        header, payload = blob["header"], blob["payload"]
        if (header["format"] != FORMAT_VERSION
                or header["model_hash"] != model.content_hash()
                or header["m_pts"] != grid.m_pts
                or header["n_bands"] != n_bands
                or abs(header["energy_shift"] - model.energy_shift) > 0):
            return None
        digest = hashlib.sha256(
            (payload["eigenvalues"] + payload["eigenvectors_re"]
             + payload["eigenvectors_im"]).encode()).hexdigest()
        if digest != header["payload_sha256"]:
            return None
        M = grid.m_pts
        dim = header["fiber_dim"]
        evals = _decode(payload["eigenvalues"], (M, M, n_bands))
        vec = (_decode(payload["eigenvectors_re"], (M, M, dim, n_bands))
               + 1j * _decode(payload["eigenvectors_im"], (M, M, dim, n_bands)))
        return BandStructure(grid, evals, vec, model, model.backend.kind)
    except (OSError, KeyError, ValueError, json.JSONDecodeError):
        return None


def cached_bands(model: PeriodicModel, grid: BrillouinGrid, n_bands: int,
                 cache_dir: str | None, compute) -> BandStructure:
    """Fetch from cache or compute and store; ``compute`` is a zero-arg callable."""
    if not cache_dir:
        return compute()
    os.makedirs(cache_dir, exist_ok=True)
    path = os.path.join(cache_dir, cache_key(model, grid.m_pts, n_bands) + ".json")
    if os.path.exists(path):
        bands = load_bands(path, model, grid, n_bands)
        if bands is not None:
            return bands
    bands = compute()
    save_bands(path, bands)
    return bands
