"""Batch command-line interface.

Subcommands: homogenize, spectrum, expand, reference, sweep, verify,
plot-data.  Exit codes: 0 success, 2 invariant failure, 3 config error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigError, HomspecError, NumericalError


def _write(out_dir: str, name: str, text: str):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def _dump(payload, out_dir, name):
    text = json.dumps(payload, indent=2, sort_keys=True, default=float)
    if out_dir:
        print(_write(out_dir, name, text))
    else:
        print(text)


def cmd_homogenize(cfg: RunConfig, args):
    from .classical import cyclic_check
    from .pipeline import stage_homogenize
    coeff, suite = stage_homogenize(cfg)
    payload = {
        "abar": suite.abar.tolist(),
        "abar3": suite.abar3.tolist(),
        "abar3_sym": suite.abar3_sym.tolist(),
        "cyclic_check": cyclic_check(suite.abar3_sym),
        "theta": coeff.theta,
        "lam_min": coeff.lam_min,
        "lam_max": coeff.lam_max,
    }
    _dump(payload, args.out, "homogenize.json")
    return 0


def cmd_spectrum(cfg: RunConfig, args):
    from .hermite import spectral_gap
    from .pipeline import stage_homogenize, stage_spectrum
    coeff, suite = stage_homogenize(cfg)
    W, basis, spec = stage_spectrum(cfg, suite)
    gaps = {}
    for j in range(1, spec.count):
        try:
            gaps[f"j{j}"] = spectral_gap(spec, j)
        except HomspecError:
            break
    payload = {
        "eigenvalues": [float(v) for v in spec.eigenvalues],
        "clusters": [list(c) for c in spec.clusters],
        "gaps": gaps,
        "sigma": basis.sigma,
        "basis_size": basis.size,
    }
    _dump(payload, args.out, "spectrum.json")
    if args.out and args.eigenfunction_samples > 0:
        import csv
        import io
        R = 4.0 * basis.sigma
        x = np.linspace(-R, R, args.eigenfunction_samples)
        pts = (np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1)
               .reshape(-1, 2) if cfg.dim == 2 else x.reshape(-1, 1))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i+1}" for i in range(cfg.dim)]
                   + [f"phi{j}" for j in range(1, spec.count + 1)])
        vals = np.stack([spec.eigenfunction(j).evaluate(pts)
                         for j in range(1, spec.count + 1)], axis=1)
        for i in range(pts.shape[0]):
            w.writerow([repr(v) for v in pts[i]] +
                       [repr(v) for v in vals[i]])
        print(_write(args.out, "eigenfunctions.csv", buf.getvalue()))
    return 0


def cmd_expand(cfg: RunConfig, args):
    from .expansion import assemble
    from .hermite import spectral_gap
    from .pipeline import stage_expand, stage_homogenize, stage_spectrum
    coeff, suite = stage_homogenize(cfg)
    W, basis, spec = stage_spectrum(cfg, suite)
    warnings = []
    branches, P_build = stage_expand(cfg, coeff, W, spec, warnings)
    a, b = spec.cluster_of(cfg.j)
    per_eps = []
    for eps in cfg.eps_list:
        entry = {"eps": eps}
        for br in branches:
            asm = assemble(br, eps)
            entry[f"lambda_tilde_branch{br.label}"] = asm.lambda_tilde
            for wrn in asm.warnings:
                if wrn not in warnings:
                    warnings.append({**wrn, "eps": eps})
        per_eps.append(entry)
    payload = {
        "lambda0": spec.eigenvalue(cfg.j),
        "gamma": spectral_gap(spec, cfg.j),
        "cluster_size": b - a,
        "P": P_build,
        "mu": {br.label: [float(m) for m in br.mu] for br in branches},
        "D": branches[0].D.tolist() if branches[0].D is not None else None,
        "E": branches[0].E.tolist() if branches[0].E is not None else None,
        "per_eps": per_eps,
        "warnings": warnings,
    }
    _dump(payload, args.out, "expand.json")
    if args.out and args.w_samples > 0:
        import csv
        import io
        R = 4.0 * basis.sigma
        x = np.linspace(-R, R, args.w_samples)
        pts = (np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1)
               .reshape(-1, 2) if cfg.dim == 2 else x.reshape(-1, 1))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i+1}" for i in range(cfg.dim)]
                   + [f"w_eps{eps}_branch{br.label}"
                      for eps in cfg.eps_list for br in branches])
        cols = [assemble(br, eps, pts, gradient=False).w
                for eps in cfg.eps_list for br in branches]
        for i in range(pts.shape[0]):
            w.writerow([repr(v) for v in pts[i]]
                       + [repr(c[i]) for c in cols])
        print(_write(args.out, "w_samples.csv", buf.getvalue()))
    return 0


def cmd_reference(cfg: RunConfig, args):
    from .pipeline import stage_homogenize, stage_spectrum
    from .reference import FineGrid, solve_Leps, truncation_radius
    coeff, suite = stage_homogenize(cfg)
    W, basis, spec = stage_spectrum(cfg, suite)
    lam_min = float(np.min(np.linalg.eigvalsh(W.quadratic_form())))
    a, b = spec.cluster_of(cfg.j)
    radius = cfg.radius or truncation_radius(
        spec.eigenvalues[min(cfg.count, spec.count) - 1], lam_min,
        cfg.radius_safety)
    payload = {"radius": radius, "per_eps": []}
    for eps in cfg.eps_list:
        ref = solve_Leps(coeff, W, eps,
                         FineGrid(cfg.dim, radius, eps / cfg.fd_h_rule),
                         max(b + 1, 3), keep_vectors=False)
        payload["per_eps"].append({
            "eps": eps,
            "lambda_h": [float(v) for v in ref.eigenvalues_h],
            "lambda_richardson": [float(v) for v in ref.eigenvalues],
            "estimate": [float(v) for v in ref.error_estimates],
            "path": ref.diagnostics.get("path"),
        })
    _dump(payload, args.out, "reference.json")
    return 0


def cmd_sweep(cfg: RunConfig, args):
    from .pipeline import emit_plot_data, rows_to_csv, run
    manifest, rows = run(cfg, workers=args.workers)
    out = args.out or cfg.directory
    print(_write(out, "manifest.json", manifest.to_json()))
    print(_write(out, "sweep.csv", rows_to_csv(rows)))
    try:
        for name, text in emit_plot_data(manifest, rows).items():
            print(_write(out, f"plot_{name}.csv", text))
    except HomspecError:
        pass
    return 0


def cmd_verify(cfg, args):
    from .verify import report, run_invariants
    results = run_invariants(tolerance_scale=args.tolerance_scale)
    print(report(results))
    return 0 if all(r.passed for r in results) else 2


def cmd_plot_data(cfg, args):
    from .pipeline import emit_plot_data
    from .reference import ComparisonRow
    if not args.manifest:
        raise ConfigError("plot-data needs --manifest pointing at a sweep dir")
    with open(os.path.join(args.manifest, "manifest.json")) as fh:
        mani_raw = json.load(fh)
    import csv as _csv

    class _M:
        fits = mani_raw["fits"]
    rows = []
    with open(os.path.join(args.manifest, "sweep.csv")) as fh:
        for rec in _csv.DictReader(fh):
            rows.append(ComparisonRow(
                eps=float(rec["epsilon"]), j=int(rec["j"]),
                branch=int(rec["branch"]),
                lambda_ref=float(rec["lambda_ref"]),
                lambda_ref_richardson=float(rec["lambda_ref_richardson"]),
                lambda_tilde=float(rec["lambda_tilde"]),
                eig_err=float(rec["eig_err"]),
                l2_err=float(rec["l2_err"]), h1_err=float(rec["h1_err"]),
                h=float(rec["h"]), radius=float(rec["R"]),
                runtime_s=float(rec["runtime_s"]),
            ))
    out = args.out or args.manifest
    for name, text in emit_plot_data(_M, rows).items():
        print(_write(out, f"plot_{name}.csv", text))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="homspec",
        description="Spectral expansions for periodic divergence-form "
                    "Schrodinger operators, with a fine-grid verification "
                    "harness.",
    )
    parser.add_argument("--config", help="path to the run configuration")
    parser.add_argument("--out", help="output directory (default: print/config)")
    parser.add_argument("--workers", type=int, default=1,
                        help="parallel reference solves in a sweep")
    parser.add_argument("--tolerance-scale", type=float, default=1.0,
                        dest="tolerance_scale",
                        help="multiply invariant thresholds (verify)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("homogenize", "spectrum", "expand", "reference", "sweep",
                 "verify", "plot-data"):
        p = sub.add_parser(name)
        if name == "spectrum":
            p.add_argument("--eigenfunction-samples", type=int, default=0)
        if name == "expand":
            p.add_argument("--w-samples", type=int, default=0,
                           dest="w_samples",
                           help="sample the expanded eigenfunction on a grid")
        if name == "plot-data":
            p.add_argument("--manifest", help="directory with a sweep run")
    args = parser.parse_args(argv)

    needs_config = args.command not in ("verify", "plot-data")
    cfg = None
    try:
        if needs_config:
            if not args.config:
                raise ConfigError(f"{args.command} requires --config")
            cfg = load_config(args.config)
        handler = {
            "homogenize": cmd_homogenize,
            "spectrum": cmd_spectrum,
            "expand": cmd_expand,
            "reference": cmd_reference,
            "sweep": cmd_sweep,
            "verify": cmd_verify,
            "plot-data": cmd_plot_data,
        }[args.command]
        return handler(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except HomspecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
