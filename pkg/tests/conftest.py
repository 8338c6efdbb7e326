import numpy as np
import pytest

from peierls_lab.config import RunConfig
from peierls_lab.pipeline import Laboratory

# Small laboratory: fast enough for unit tests, same physics as the reference.
SMALL_CONFIG = {
    "model": {"cosine_mu": 48.0, "backend": {"kind": "grid", "size": 6},
              "m_cells": 8, "energy_shift": "centered",
              "resolution_guard": False},
    "family": {"k0": 1, "n": 0},
    "frame": {"window_radius": 2, "hopping_radius": 2},
    "field": {"epsilons": [0.0, 0.02, 0.04], "constant_b": 1.0},
    "run": {"mask_radius": 2, "interior_radius": 3},
}

# Reference laboratory of the acceptance suite (weak field).
REFERENCE_CONFIG = {
    "model": {"cosine_mu": 48.0, "backend": {"kind": "grid", "size": 12},
              "m_cells": 16, "energy_shift": "centered"},
    "family": {"k0": 1, "n": 0},
    "frame": {"window_radius": 6, "hopping_radius": 3},
    "field": {"epsilons": [0.0, 0.01, 0.02, 0.04, 0.08], "constant_b": 1.0},
    "run": {"mask_radius": 4, "interior_radius": 6},
}


def make_lab(overrides=None, cache_dir=None) -> Laboratory:
    import copy
    data = copy.deepcopy(SMALL_CONFIG)
    for section, vals in (overrides or {}).items():
        data.setdefault(section, {}).update(vals)
    if cache_dir:
        data.setdefault("run", {})["cache_dir"] = str(cache_dir)
    return Laboratory(RunConfig.from_dict(data))


@pytest.fixture(scope="session")
def small_lab(tmp_path_factory):
    return make_lab(cache_dir=tmp_path_factory.mktemp("cache_small"))


@pytest.fixture(scope="session")
def reference_lab(tmp_path_factory):
    import copy
    data = copy.deepcopy(REFERENCE_CONFIG)
    data["run"]["cache_dir"] = str(tmp_path_factory.mktemp("cache_ref"))
    return Laboratory(RunConfig.from_dict(data))


@pytest.fixture(scope="session")
def strong_lab(reference_lab):
    """Same model, strong constant field (used by the spectral-distance law)."""
    import copy
    data = copy.deepcopy(REFERENCE_CONFIG)
    data["field"] = {"epsilons": [0.0, 0.02, 0.04, 0.08], "constant_b": 10.0}
    data["run"]["cache_dir"] = reference_lab.config["run"]["cache_dir"]
    return Laboratory(RunConfig.from_dict(data))


def rng(seed=0):
    return np.random.default_rng(seed)
