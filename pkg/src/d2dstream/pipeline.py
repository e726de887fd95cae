"""End-to-end helpers: equilibrium, then value tables, then audits and simulation."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .mechanism import AuditReport, default_misreport_grid, run_audit
from .mfe import MfeConfig, MfeResult, mfe_fixed_point
from .model import MeanField, SystemParams
from .values import ValueTables, build_value_tables

AUDIT_CHUNK = 100


@dataclass
class Equilibrium:
    params: SystemParams
    mf: MeanField
    result: MfeResult


def solve_equilibrium(cfg: RunConfig, init_rho=None) -> Equilibrium:
    params = cfg.params()
    grid = params.grid
    zeta, psi = cfg.zeta_pmf(), cfg.psi_pmf(grid)
    mcfg = MfeConfig(tol=cfg.mfe_tol, alpha=cfg.mfe_alpha, max_outer_iterations=cfg.mfe_max_iter)
    init = cfg.rho_init_pmf(grid) if init_rho is None else init_rho
    res = mfe_fixed_point(mcfg, params, zeta, psi, cfg.cost_function(), init_rho=init, rng=cfg.seed)
    rho = np.clip(res.rho, 0.0, None)
    return Equilibrium(params, MeanField(rho / rho.sum(), zeta, psi), res)


def tables_for(cfg: RunConfig, eq: Equilibrium) -> ValueTables:
    return build_value_tables(eq.mf, eq.params, cfg.cost_function(), tol=cfg.tol_value,
                              mc_samples=cfg.mc_samples, rng=cfg.seed,
                              exact_limit=cfg.exact_limit, relative=cfg.relative_tol)


def _audit_chunk(args):
    cfg, eq, tables, seed, n, chunk = args
    grid = default_misreport_grid(eq.mf, eq.params, cfg.audit_d_cap)
    return run_audit(eq.mf, eq.params, cfg.cost_function(), tables, n, grid,
                     rng=np.random.SeedSequence([seed, chunk]))


def parallel_audit(cfg: RunConfig, eq: Equilibrium, tables: ValueTables, workers: int = 1) -> AuditReport:
    """Audit in fixed chunks of instances; the result does not depend on ``workers``."""
    n = cfg.audit_instances
    jobs = []
    for c, start in enumerate(range(0, n, AUDIT_CHUNK)):
        jobs.append((cfg, eq, tables, cfg.seed, min(AUDIT_CHUNK, n - start), c))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_audit_chunk, jobs))
    else:
        parts = [_audit_chunk(j) for j in jobs]
    return merge_reports(parts, seed=cfg.seed)


def merge_reports(parts, seed=None) -> AuditReport:
    out = AuditReport(seed=seed)
    offset = 0
    for p in parts:
        out.instances_checked += p.instances_checked
        out.max_truth_violation = max(out.max_truth_violation, p.max_truth_violation)
        out.max_ir_violation = max(out.max_ir_violation, p.max_ir_violation)
        out.min_transfer = min(out.min_transfer, p.min_transfer)
        out.max_identity_error = max(out.max_identity_error, p.max_identity_error)
        out.tolerance = p.tolerance
        out.truth_violations += p.truth_violations
        out.ir_violations += p.ir_violations
        out.sign_violations += p.sign_violations
        out.reports_per_instance = p.reports_per_instance
        for w in p.witness_instances:
            if len(out.witness_instances) < 10:
                out.witness_instances.append(dict(w, instance=w["instance"] + offset))
        out.transfers.extend(p.transfers)
        offset += p.instances_checked
    return out
