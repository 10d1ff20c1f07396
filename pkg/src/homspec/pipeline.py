"""Experiment orchestration: the homogenize -> spectrum -> expand ->
reference -> compare pipeline, manifests, and CSV artifacts.

A run is driven entirely by a RunConfig; the manifest embeds the config
verbatim (plus a hash) so a run can be reproduced from the manifest alone.
All artifacts are deterministic for a fixed config on one machine, except
for the recorded wall-clock column.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .classical import build_suite, cyclic_check
from .config import RunConfig, serialize_config
from .errors import DegenerateD, DegenerateFit, HomspecError
from .expansion import (
    assemble,
    choose_P,
    lambda_tilde,
    multiple_recursion,
    simple_recursion,
)
from .hermite import MacroBasis, default_sigma, solve_spectrum, spectral_gap
from .reference import (
    FineGrid,
    fit_rate,
    match_and_compare,
    solve_Leps,
    truncation_radius,
    validate_radius,
)
from .torus import TorusGrid

P_BUILD_CAP = 5


@dataclass
class RunManifest:
    """Everything needed to reproduce and audit a run."""

    version: str
    config_text: str
    config_hash: str
    dim: int
    abar: list
    abar3_sym: list
    cyclic_check: float
    lambda0: float
    gamma: float
    cluster_size: int
    P_built: int
    mu: dict                    # branch label -> list of mu_p
    D: list | None
    E: list | None
    radius: float
    radius_shift: float | None
    hierarchy_residual_max: float
    per_eps: list               # rows as dicts (the CSV table)
    fits: dict
    c1_envelope: dict
    warnings: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True,
                          default=float)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:16]


# --- stages ----------------------------------------------------------------------


def stage_homogenize(cfg: RunConfig):
    grid = TorusGrid(cfg.dim, cfg.torus_modes)
    coeff = cfg.coefficient(grid)
    suite = build_suite(coeff, tol=cfg.solver_tol)
    return coeff, suite


def stage_spectrum(cfg: RunConfig, suite):
    W = cfg.potential()
    sigma = cfg.hermite_sigma or default_sigma(suite.abar, W)
    basis = MacroBasis(cfg.dim, cfg.hermite_size, sigma)
    spec = solve_spectrum(suite.abar, W, basis, cfg.count)
    return W, basis, spec


def stage_expand(cfg: RunConfig, coeff, W, spec, warnings: list):
    """Build all branches of the cluster of lambda_j to a working order."""
    a, b = spec.cluster_of(cfg.j)
    gamma = spectral_gap(spec, cfg.j)
    lam0 = spec.eigenvalue(cfg.j)
    if cfg.p_order is not None:
        P_build = cfg.p_order
    else:
        P_build = 2
        for eps in cfg.eps_list:
            try:
                P_build = max(P_build, choose_P(eps, lam0, gamma, cfg.p_rule_c))
            except HomspecError:
                warnings.append({"code": "EpsilonTooLarge",
                                 "detail": f"truncation rule undefined at eps={eps}"})
        P_build = min(P_build, P_BUILD_CAP)
    if b - a == 1:
        branches = [simple_recursion(coeff, W, spec, cfg.j, P_build,
                                     torus_tol=cfg.solver_tol)]
    else:
        branches = multiple_recursion(coeff, W, spec, cfg.j, P_build,
                                      torus_tol=cfg.solver_tol)
    return branches, P_build


def _reference_for(cfg, coeff, W, eps, count, radius):
    grid = FineGrid(cfg.dim, radius, eps / cfg.fd_h_rule)
    keep = cfg.compare_eigenfunctions and cfg.dim == 1
    return solve_Leps(coeff, W, eps, grid, count, keep_vectors=keep)


def run(cfg: RunConfig, workers: int = 1):
    """Execute the full pipeline; returns (manifest, comparison rows)."""
    timings = {}
    warnings = []
    t0 = time.perf_counter()
    coeff, suite = stage_homogenize(cfg)
    if coeff.from_samples:
        warnings.append({
            "code": "RoughCoefficient",
            "detail": "coefficient given as grid samples; spectral accuracy "
                      "holds only if the underlying field is smooth",
        })
    timings["homogenize"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    W, basis, spec = stage_spectrum(cfg, suite)
    timings["spectrum"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        branches, P_build = stage_expand(cfg, coeff, W, spec, warnings)
    except DegenerateD as exc:
        warnings.append({"code": "DegenerateD", "detail": str(exc)})
        raise
    timings["expand"] = time.perf_counter() - t0

    a, b = spec.cluster_of(cfg.j)
    lam0 = spec.eigenvalue(cfg.j)
    gamma = spectral_gap(spec, cfg.j)
    lam_min = float(np.min(np.linalg.eigvalsh(W.quadratic_form())))
    radius = cfg.radius or truncation_radius(
        spec.eigenvalues[min(cfg.count, spec.count) - 1], lam_min,
        cfg.radius_safety,
    )
    radius_shift = None
    ref_count = max(b + 1, 3)

    t0 = time.perf_counter()
    if cfg.validate_radius:
        grid0 = FineGrid(cfg.dim, radius, max(cfg.eps_list) / cfg.fd_h_rule)
        radius_shift = validate_radius(coeff, W, max(cfg.eps_list), grid0,
                                       ref_count)
        if radius_shift > 1e-9:
            warnings.append({
                "code": "RadiusNotConverged",
                "detail": f"doubling the box moved eigenvalues by "
                          f"{radius_shift:.3e} relative",
            })

    def one_eps(eps):
        start = time.perf_counter()
        ref = _reference_for(cfg, coeff, W, eps, ref_count, radius)
        elapsed = time.perf_counter() - start
        return eps, ref, elapsed

    refs = {}
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for eps, ref, elapsed in pool.map(one_eps, cfg.eps_list):
                refs[eps] = (ref, elapsed)
    else:
        for eps in cfg.eps_list:
            eps, ref, elapsed = one_eps(eps)
            refs[eps] = (ref, elapsed)
    timings["reference"] = time.perf_counter() - t0

    rows = []
    per_eps_meta = []
    for eps in cfg.eps_list:
        ref, elapsed = refs[eps]
        if cfg.p_order is not None:
            P_eps = min(cfg.p_order, P_build)
        else:
            try:
                P_eps = min(choose_P(eps, lam0, gamma, cfg.p_rule_c,
                                     mu=branches[0].mu), P_build)
            except HomspecError:
                P_eps = min(2, P_build)
        for br in branches:
            asm = assemble(br, eps)
            for w in asm.warnings:
                entry = dict(w)
                entry["eps"] = eps
                if entry not in warnings:
                    warnings.append(entry)
        if cfg.compare_eigenfunctions and ref.eigenvectors is not None:
            eps_rows = match_and_compare(ref, branches, eps, P=P_eps)
        else:
            eps_rows = []
            used = []
            for r, br in enumerate(branches):
                k = a + r if a + r < len(ref.eigenvalues) else len(ref.eigenvalues) - 1
                lamr = float(ref.eigenvalues[k])
                lt = lambda_tilde(br, eps, P_eps)
                from .reference import ComparisonRow
                eps_rows.append(ComparisonRow(
                    eps=eps, j=br.j, branch=br.label,
                    lambda_ref=float(ref.eigenvalues_h2[k]),
                    lambda_ref_richardson=lamr, lambda_tilde=lt,
                    eig_err=abs(lamr - lt), l2_err=float("nan"),
                    h1_err=float("nan"), h=eps / cfg.fd_h_rule,
                    radius=radius,
                ))
        share = elapsed / max(len(eps_rows), 1)
        for row in eps_rows:
            row.runtime_s = share
        rows.extend(eps_rows)
        per_eps_meta.append({
            "eps": eps, "P": P_eps,
            "richardson_estimate": [float(v) for v in ref.error_estimates],
            "lambda_ref": [float(v) for v in ref.eigenvalues],
        })

    fits = {}
    for r, br in enumerate(branches):
        series = [(row.eps, row.eig_err) for row in rows if row.branch == r]
        zeroth = [(row.eps, abs(row.lambda_ref_richardson - lam0))
                  for row in rows if row.branch == r]
        for name, data in (("eig", series), ("zeroth", zeroth)):
            try:
                slope, intercept, r2 = fit_rate(data)
                fits[f"branch{r}_{name}"] = {
                    "slope": slope, "intercept": intercept, "r2": r2,
                }
            except (DegenerateFit, HomspecError) as exc:
                fits[f"branch{r}_{name}"] = {"error": str(exc)}
        if cfg.compare_eigenfunctions:
            for name in ("l2_err", "h1_err"):
                data = [(row.eps, getattr(row, name)) for row in rows
                        if row.branch == r and np.isfinite(getattr(row, name))]
                try:
                    slope, intercept, r2 = fit_rate(data)
                    fits[f"branch{r}_{name[:2]}"] = {
                        "slope": slope, "intercept": intercept, "r2": r2,
                    }
                except (DegenerateFit, HomspecError) as exc:
                    fits[f"branch{r}_{name[:2]}"] = {"error": str(exc)}

    # zeroth-order envelope constant per reference index
    c1 = {}
    for k in range(min(ref_count, len(spec.eigenvalues))):
        lam0k = spec.eigenvalues[k]
        ratios = []
        for eps in cfg.eps_list:
            ref, _ = refs[eps]
            if k < len(ref.eigenvalues):
                ratios.append(abs(ref.eigenvalues[k] - lam0k)
                              / (eps * lam0k ** 1.5))
        if ratios:
            c1[f"j{k + 1}"] = float(max(ratios))

    hier_max = max(
        (max(br.hierarchy_residuals.values(), default=0.0) for br in branches),
        default=0.0,
    )
    if hier_max > 1e-8:
        warnings.append({
            "code": "HierarchyResidual",
            "detail": f"macroscopic hierarchy residual {hier_max:.3e} "
                      "exceeds 1e-8; the corrector recursion and the "
                      "macroscopic equations are inconsistent at this order",
        })

    manifest = RunManifest(
        version=__version__,
        config_text=serialize_config(cfg),
        config_hash=config_hash(cfg),
        dim=cfg.dim,
        abar=suite.abar.tolist(),
        abar3_sym=suite.abar3_sym.tolist(),
        cyclic_check=cyclic_check(suite.abar3_sym),
        lambda0=lam0,
        gamma=gamma,
        cluster_size=b - a,
        P_built=P_build,
        mu={br.label: [float(m) for m in br.mu] for br in branches},
        D=branches[0].D.tolist() if branches[0].D is not None else None,
        E=branches[0].E.tolist() if branches[0].E is not None else None,
        radius=radius,
        radius_shift=radius_shift,
        hierarchy_residual_max=hier_max,
        per_eps=per_eps_meta,
        fits=fits,
        c1_envelope=c1,
        warnings=warnings,
        timings=timings,
    )
    return manifest, rows


# --- artifacts -------------------------------------------------------------------

CSV_COLUMNS = ("epsilon", "j", "branch", "lambda_ref",
               "lambda_ref_richardson", "lambda_tilde", "eig_err",
               "l2_err", "h1_err", "h", "R", "runtime_s")


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow([
            repr(row.eps), row.j, row.branch, repr(row.lambda_ref),
            repr(row.lambda_ref_richardson), repr(row.lambda_tilde),
            repr(row.eig_err), repr(row.l2_err), repr(row.h1_err),
            repr(row.h), repr(row.radius), f"{row.runtime_s:.3f}",
        ])
    return buf.getvalue()


def emit_plot_data(manifest: RunManifest, rows) -> dict:
    """One CSV text per error norm: log-log series plus the fitted line.

    Fit parameters are repeated per row so the file stays consumable by any
    plotting tool without a sidecar.
    """
    from .errors import InsufficientPoints

    eps_values = sorted({row.eps for row in rows}, reverse=True)
    if len(eps_values) < 2:
        raise InsufficientPoints("plot data needs at least two sweep points")
    out = {}
    branches = sorted({row.branch for row in rows})
    for name, getter in (("eig_err", lambda r: r.eig_err),
                         ("l2_err", lambda r: r.l2_err),
                         ("h1_err", lambda r: r.h1_err)):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("epsilon", "branch", name, "fit_slope", "fit_intercept",
                    "fit_r2"))
        wrote = False
        for br in branches:
            fit = manifest.fits.get(f"branch{br}_{name[:2] if name != 'eig_err' else 'eig'}", {})
            slope = fit.get("slope", "")
            intercept = fit.get("intercept", "")
            r2 = fit.get("r2", "")
            for row in rows:
                if row.branch != br or not np.isfinite(getter(row)):
                    continue
                w.writerow((repr(row.eps), br, repr(getter(row)),
                            slope, intercept, r2))
                wrote = True
        if wrote:
            out[name] = buf.getvalue()
    return out
