"""Command-line interface: bands / frame / effective / compare / evolve / butterfly / validate.

Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 invariant failure.
All artifacts are deterministic for a fixed config + seed (no timestamps in
data files; floats printed with repr precision).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .config import RunConfig
from .effective import assemble_peierls, window_spectrum
from .errors import ConfigError, InvariantViolation, PeierlsLabError
from .frames import HoppingSequence
from .geometry import MagneticFieldSpec
from .pipeline import Laboratory, fit_slope


def _fmt(x: float) -> str:
    return repr(float(x))


def _out_path(args, config: RunConfig, name: str) -> str:
    out = args.out or config["run"].get("out_dir") or "."
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, name)


def _write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def cmd_bands(lab: Laboratory, args, config: RunConfig) -> int:
    bands = lab.bands
    lines = ["theta1,theta2,k,lambda"]
    for (i, j), theta in bands.grid:
        for k in range(bands.n_bands):
            lines.append(f"{_fmt(theta[0])},{_fmt(theta[1])},{k + 1},"
                         f"{_fmt(bands.eigenvalues[i, j, k])}")
    path = _out_path(args, config, "bands.csv")
    _write_text(path, "\n".join(lines) + "\n")
    print(f"bands: {bands.n_bands} bands on {bands.grid.m_pts}^2 grid -> {path}")
    return 0


def cmd_frame(lab: Laboratory, args, config: RunConfig) -> int:
    wan = lab.wannier
    cell = lab.cell
    lines = ["p,gamma1,gamma2,cell_index,re,im"]
    for p in range(wan.n_frame):
        g = wan.samples[p].reshape(cell.m_cells, cell.n_s, cell.m_cells, cell.n_s)
        for a, g1 in enumerate(cell.cells):
            for b, g2 in enumerate(cell.cells):
                if max(abs(g1), abs(g2)) > wan.window_radius:
                    continue
                block = g[a, :, b, :].ravel()
                for ci, z in enumerate(block):
                    lines.append(f"{p},{g1},{g2},{ci},{_fmt(z.real)},{_fmt(z.imag)}")
    path = _out_path(args, config, "wannier.csv")
    _write_text(path, "\n".join(lines) + "\n")
    prof_path = _out_path(args, config, "decay_profile.json")
    _write_text(prof_path, json.dumps(
        {"shells": [float(x) for x in wan.decay_profile],
         "conditioning": wan.fiber.conditioning}, indent=1) + "\n")
    print(f"frame: n_B={wan.n_frame} decay(L)={wan.decay_profile[wan.window_radius]:.3e} "
          f"-> {path}")
    return 0


def _hopping_json(seq: HoppingSequence) -> str:
    blob = {}
    for (g1, g2), m in sorted(seq.entries.items()):
        blob[f"{g1},{g2}"] = [[[float(z.real), float(z.imag)] for z in row] for row in m]
    return json.dumps(blob, indent=1)


def cmd_effective(lab: Laboratory, args, config: RunConfig) -> int:
    seq = lab.hopping
    path = _out_path(args, config, "hopping.json")
    _write_text(path, _hopping_json(seq) + "\n")
    eps = max(config["field"]["epsilons"])
    mat = lab.peierls_matrix(eps)
    blob = {}
    n = mat.block_size
    for i, al in enumerate(mat.cells):
        for j, be in enumerate(mat.cells):
            block = mat.data[i * n:(i + 1) * n, j * n:(j + 1) * n]
            if np.max(np.abs(block)) == 0.0:
                continue
            blob[f"({al[0]},{al[1]})-({be[0]},{be[1]})"] = [
                [[float(z.real), float(z.imag)] for z in row] for row in block]
    mpath = _out_path(args, config, f"peierls_eps{eps}.json")
    _write_text(mpath, json.dumps(blob) + "\n")
    print(f"effective: hopping radius {seq.radius} -> {path}; matrix -> {mpath}")
    return 0


def cmd_compare(lab: Laboratory, args, config: RunConfig) -> int:
    eps_list = [e for e in config["field"]["epsilons"]]
    times = config["run"]["times"]
    entries = []
    for eps in eps_list:
        stats = lab.gram_stats(eps)
        comm = lab.commutator_norm(eps)
        spectral = lab.spectral_comparison(eps)
        errs = lab.evolution_errors(eps, times)
        entries.append({
            "epsilon": eps,
            "gram_half_width": stats["half_width"],
            "gram_idempotency": stats["idempotency"],
            "commutator_norm": comm,
            "spectral_distance": spectral["distance"],
            "peierls_residual": lab.peierls_residual(eps),
            "peierls_residual_corrected": lab.peierls_residual(eps, corrected=True),
            "evolution_errors": [{"t": float(t), "err": float(e)}
                                 for t, e in zip(times, errs)],
        })
        print(f"  eps={eps}: comm={comm:.3e} dist={spectral['distance']:.3e}")
    pos = [e for e in eps_list if e > 0]
    slopes = {}
    if len(pos) >= 2:
        def series(key):
            return [x[key] for x in entries if x["epsilon"] > 0]
        it = int(np.argmin(np.abs(np.asarray(times) - 1.0)))
        slopes = {
            "commutator": fit_slope(pos, series("commutator_norm")),
            "spectral": fit_slope(pos, series("spectral_distance")),
            "evolution": fit_slope(pos, [x["evolution_errors"][it]["err"]
                                         for x in entries if x["epsilon"] > 0]),
            "gram": fit_slope(pos, series("gram_half_width")),
            "peierls": fit_slope(pos, series("peierls_residual")),
            "peierls_corrected": fit_slope(pos, series("peierls_residual_corrected")),
        }
    report = {
        "config_hash": config.config_hash(),
        "delta": lab.delta,
        "window": list(lab.comparison_window),
        "entries": entries,
        "slopes": slopes,
    }
    path = _out_path(args, config, "compare_report.json")
    _write_text(path, json.dumps(report, indent=1, sort_keys=True) + "\n")
    print(f"compare: slopes {slopes} -> {path}")
    return 0


def cmd_evolve(lab: Laboratory, args, config: RunConfig) -> int:
    times = config["run"]["times"]
    lines = ["epsilon,t,error"]
    for eps in config["field"]["epsilons"]:
        errs = lab.evolution_errors(eps, times)
        for t, e in zip(times, errs):
            lines.append(f"{_fmt(eps)},{_fmt(t)},{_fmt(e)}")
    path = _out_path(args, config, "evolution.csv")
    _write_text(path, "\n".join(lines) + "\n")
    print(f"evolve: {len(lines) - 1} rows -> {path}")
    return 0


def cmd_butterfly(lab: Laboratory, args, config: RunConfig) -> int:
    n_flux = config["run"]["butterfly_fluxes"]
    radius = config["frame"]["window_radius"]
    from .effective import window_cells
    cells = window_cells(radius)
    seq = lab.hopping
    lines = ["flux,eigenvalue,interior_weight"]
    for j in range(n_flux):
        frac = j / n_flux
        spec = MagneticFieldSpec.make(epsilon=2.0 * np.pi * frac, constant_b=1.0)
        mat = assemble_peierls(seq, spec, cells)
        w, weights, _ = window_spectrum(mat, max(radius // 2, 1))
        for lam, wt in zip(w, weights):
            lines.append(f"{_fmt(frac)},{_fmt(lam)},{_fmt(wt)}")
    path = _out_path(args, config, "butterfly.csv")
    _write_text(path, "\n".join(lines) + "\n")
    print(f"butterfly: {n_flux} flux values -> {path}")
    return 0


def cmd_validate(lab: Laboratory, args, config: RunConfig) -> int:
    from .checks import run_all_checks
    t0 = time.monotonic()
    results = run_all_checks(lab, seed=config["run"]["seed"],
                             workers=args.workers or config["run"]["workers"])
    report = {
        "config_hash": config.config_hash(),
        "checks": [{"name": r.name, "ok": bool(r.ok), "value": float(r.value),
                    "threshold": float(r.threshold), "detail": r.detail}
                   for r in results],
        "all_ok": bool(all(r.ok for r in results)),
    }
    path = _out_path(args, config, "validate_report.json")
    _write_text(path, json.dumps(report, indent=1, sort_keys=True) + "\n")
    wall = time.monotonic() - t0
    for r in results:
        print(f"[{'PASS' if r.ok else 'FAIL'}] {r.name}: value={r.value:.3e} "
              f"threshold={r.threshold:.3e}")
    print(f"validate: {sum(r.ok for r in results)}/{len(results)} checks passed "
          f"in {wall:.1f}s -> {path}")
    return 0 if report["all_ok"] else 4


COMMANDS = {
    "bands": cmd_bands,
    "frame": cmd_frame,
    "effective": cmd_effective,
    "compare": cmd_compare,
    "evolve": cmd_evolve,
    "butterfly": cmd_butterfly,
    "validate": cmd_validate,
}


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="peierls-lab",
        description="Magnetic Bloch-band reduction laboratory")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        config = RunConfig.from_file(args.config)
        data = config.data()
        if args.seed is not None:
            data["run"]["seed"] = args.seed
        if args.workers is not None:
            data["run"]["workers"] = args.workers
        cache_env = os.environ.get("PEIERLS_CACHE_DIR")
        if cache_env and not data["run"].get("cache_dir"):
            data["run"]["cache_dir"] = cache_env
        config = RunConfig.from_dict(data)
        lab = Laboratory(config)
        return COMMANDS[args.command](lab, args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 4
    except PeierlsLabError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
