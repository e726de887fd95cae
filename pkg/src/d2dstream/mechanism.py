"""Pivot transfers and audits of truthfulness, transfer sign and participation.

For a reported profile the mechanism runs the cluster greedy ``a*`` and pays
agent ``i``

    p = V(a*; own report) + H(others) - W~(i, reports)

where ``V`` is the agent's own discounted cost under ``a*``, ``H`` the
cluster cost with ``i`` removed and ``W~`` the agent-perspective cluster
cost. The agent's net cost ``V - p`` then equals ``W~ - H``.

Audits evaluate every misreport on a grid in one vectorised pass per
instance.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .allocation import LINEAR, CostFunction, batch_schedule
from .model import AgentState, MeanField, SystemParams, _rng
from .values import TIE_TOL, ValueTables


class TablesNotConverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TransferRecord:
    agent: int
    reported_state: AgentState
    transfer: float
    net_cost: float
    V_star_term: float
    V_tilde_term: float
    H_term: float
    W_tilde_term: float

    @property
    def components(self):
        return (self.V_star_term, self.V_tilde_term, self.H_term, self.W_tilde_term)


def audit_tolerance(params: SystemParams, tol_value: float) -> float:
    return 10.0 * tol_value / (1.0 - params.delta)


def _require(tables: ValueTables):
    if not tables.converged:
        raise TablesNotConverged("value tables did not converge; refusing to price")


def _profile_arrays(theta, params):
    grid = params.grid
    ks = np.array([grid.index(s.d) for s in theta], dtype=np.int64)
    es = np.array([int(s.e) for s in theta], dtype=np.int64)
    if np.any(es < 0) or np.any(es > params.N):
        raise ValueError(f"reported e outside 0..{params.N}")
    return ks, es


class _Pricer:
    """Vectorised transfer arithmetic for one set of tables."""

    def __init__(self, tables: ValueTables, params: SystemParams, cost: CostFunction):
        self.t, self.p, self.cost = tables, params, cost
        g = params.grid
        self.g = g
        self.cval = cost(g.values)

    def own_term(self, k, chi, Vbar):
        nxt = self.g.update_index(k, chi)
        return self.cval[nxt] + self.p.delta * Vbar[nxt]

    def stage(self, KS, chi):
        return self.cval[self.g.update_index(KS, chi)].sum(axis=1)

    def exclusion(self, ks, es, agent):
        keep = np.arange(len(ks)) != agent
        if not keep.any():
            return 0.0
        _, chi = batch_schedule(ks[None, keep], es[None, keep], self.p, self.cost)
        return float(self.stage(ks[None, keep], chi)[0] + self.p.delta * self.t.H_bar)

    def price(self, KS, ES, agent):
        """Transfer components for a batch of reported profiles ``(R, M)``."""
        d = self.p.delta
        x_a, chi_a = batch_schedule(KS, ES, self.p, self.cost)
        if KS.shape[1] > 1:
            _, chi_b = batch_schedule(KS, ES, self.p, self.cost, protect=np.full(len(KS), agent))
        else:
            chi_b = chi_a
        k = KS[:, agent]
        Ub = self.t.Ubar
        wa = self.stage(KS, chi_a) + d * Ub[self.g.update_index(k, chi_a[:, agent])]
        wb = self.stage(KS, chi_b) + d * Ub[self.g.update_index(k, chi_b[:, agent])]
        pick_b = wb < wa - TIE_TOL * (1.0 + np.abs(wa))
        W = np.where(pick_b, wb, wa)
        chi_t = np.where(pick_b, chi_b[:, agent], chi_a[:, agent])
        V_star = self.own_term(k, chi_a[:, agent], self.t.Vbar_star)
        V_tilde = self.own_term(k, chi_t, self.t.Vbar_tilde)
        g_agent = x_a.sum(axis=1) - x_a[:, agent]
        return dict(V_star=V_star, V_tilde=V_tilde, W=W, g=g_agent, chi=chi_a[:, agent])


def compute_transfer(theta_hat, agent: int, tables: ValueTables, params: SystemParams,
                     cost: CostFunction = LINEAR, mf: MeanField | None = None) -> TransferRecord:
    """Transfer to ``agent`` for the reported profile ``theta_hat``."""
    _require(tables)
    ks, es = _profile_arrays(theta_hat, params)
    pr = _Pricer(tables, params, cost)
    H = pr.exclusion(ks, es, agent)
    c = pr.price(ks[None], es[None], agent)
    V_star, V_tilde, W = float(c["V_star"][0]), float(c["V_tilde"][0]), float(c["W"][0])
    p = V_star + H - W
    return TransferRecord(agent, theta_hat[agent], p, V_star - p, V_star, V_tilde, H, W)


def net_cost(theta_true: AgentState, theta_hat, agent: int, tables: ValueTables,
             params: SystemParams, cost: CostFunction = LINEAR) -> float:
    """True own cost under the schedule built from reports, minus the transfer.

    The agent decodes iff its true count plus what the others broadcast
    reaches ``N``.
    """
    _require(tables)
    ks, es = _profile_arrays(theta_hat, params)
    pr = _Pricer(tables, params, cost)
    H = pr.exclusion(ks, es, agent)
    c = pr.price(ks[None], es[None], agent)
    transfer = float(c["V_star"][0]) + H - float(c["W"][0])
    k_true = params.grid.index(theta_true.d)
    chi_true = int(theta_true.e + int(c["g"][0]) >= params.N)
    return float(pr.own_term(k_true, chi_true, tables.Vbar_star)) - transfer


@dataclass
class AuditReport:
    instances_checked: int = 0
    max_truth_violation: float = 0.0
    max_ir_violation: float = -np.inf
    min_transfer: float = np.inf
    max_identity_error: float = 0.0
    tolerance: float = 0.0
    truth_violations: int = 0
    ir_violations: int = 0
    sign_violations: int = 0
    reports_per_instance: int = 0
    seed: int | None = None
    witness_instances: list = field(default_factory=list)
    transfers: list = field(default_factory=list, repr=False)

    @property
    def passed_truth(self) -> bool:
        return self.max_truth_violation <= self.tolerance

    @property
    def passed_ir(self) -> bool:
        return self.max_ir_violation <= self.tolerance

    @property
    def passed_sign(self) -> bool:
        return self.min_transfer >= -self.tolerance

    def to_dict(self, with_transfers: bool = False) -> dict:
        d = asdict(self)
        if not with_transfers:
            d.pop("transfers")
        return _jsonable(d)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), indent=2, **kw)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    return x


def default_misreport_grid(mf: MeanField, params: SystemParams, d_cap: float = 13.0):
    """All grid deficits up to ``d_cap`` crossed with the support of ``zeta``."""
    grid = params.grid
    ks = np.flatnonzero(grid.values <= d_cap + 1e-9)
    es = np.flatnonzero(mf.zeta > 0)
    kk, ee = np.meshgrid(ks, es, indexing="ij")
    return kk.ravel(), ee.ravel()


def sample_instances(mf: MeanField, params: SystemParams, n: int, rng):
    gen = _rng(rng)
    ks = gen.choice(len(mf.rho), size=(n, params.M), p=mf.rho)
    es = gen.choice(len(mf.zeta), size=(n, params.M), p=mf.zeta)
    return ks.astype(np.int64), es.astype(np.int64)


def run_audit(mf: MeanField, params: SystemParams, cost: CostFunction, tables: ValueTables,
              instance_count: int = 1000, misreport_grid=None, rng=0, tol: float | None = None,
              check_truth: bool = True, max_witnesses: int = 10) -> AuditReport:
    """Truthfulness, transfer sign, net-cost identity and participation in one pass.

    For each sampled profile one agent (drawn uniformly) is checked against
    every report on the misreport grid. Transfer sign, the identity and
    participation are checked for every agent at truthful reports.
    """
    _require(tables)
    seed = rng if isinstance(rng, (int, np.integer)) else None
    gen = _rng(rng)
    tol = audit_tolerance(params, tables.tol) if tol is None else tol
    ks_all, es_all = sample_instances(mf, params, instance_count, gen)
    agents = gen.integers(0, params.M, size=instance_count)
    if misreport_grid is None:
        misreport_grid = default_misreport_grid(mf, params)
    rk, re_ = (np.asarray(a, dtype=np.int64) for a in misreport_grid)
    pr = _Pricer(tables, params, cost)
    d = params.delta
    N = params.N
    M = params.M
    rep = AuditReport(tolerance=tol, seed=seed,
                      reports_per_instance=len(rk) if check_truth else 0)
    witnesses = []
    for n in range(instance_count):
        ks, es = ks_all[n], es_all[n]
        # every agent at truth: sign, identity, participation
        for i in range(M):
            H = pr.exclusion(ks, es, i)
            c = pr.price(ks[None], es[None], i)
            p = float(c["V_star"][0] + H - c["W"][0])
            net = float(c["V_star"][0]) - p
            rep.transfers.append(p)
            rep.min_transfer = min(rep.min_transfer, p)
            if p < -tol:
                rep.sign_violations += 1
            rep.max_identity_error = max(rep.max_identity_error, abs(net - (float(c["W"][0]) - H)))
            # free-riding comparison: others schedule among themselves
            keep = np.arange(M) != i
            if keep.any():
                x_o, _ = batch_schedule(ks[None, keep], es[None, keep], params, cost)
                g_by = int(x_o.sum())
            else:
                g_by = 0
            chi_by = int(es[i] + g_by >= N)
            v_by = float(pr.own_term(ks[i], chi_by, tables.Vbar_bystander))
            ir = net - v_by
            rep.max_ir_violation = max(rep.max_ir_violation, ir)
            if ir > tol:
                rep.ir_violations += 1
                if len(witnesses) < max_witnesses:
                    witnesses.append({"kind": "ir", "instance": n, "agent": i,
                                      "d": params.grid.values[ks].tolist(), "e": es.tolist(),
                                      "violation": ir})
        if not check_truth:
            continue
        i = int(agents[n])
        H = pr.exclusion(ks, es, i)
        R = len(rk) + 1
        KS = np.repeat(ks[None], R, axis=0)
        ES = np.repeat(es[None], R, axis=0)
        KS[1:, i] = rk
        ES[1:, i] = re_
        c = pr.price(KS, ES, i)
        transfer = c["V_star"] + H - c["W"]
        chi_true = (es[i] + c["g"] >= N).astype(np.int64)
        net = pr.own_term(np.full(R, ks[i]), chi_true, tables.Vbar_star) - transfer
        gap = float(net[0] - net[1:].min())
        rep.max_truth_violation = max(rep.max_truth_violation, gap)
        if gap > tol:
            rep.truth_violations += 1
            if len(witnesses) < max_witnesses:
                j = int(np.argmin(net[1:]))
                witnesses.append({"kind": "truth", "instance": n, "agent": i,
                                  "d": params.grid.values[ks].tolist(), "e": es.tolist(),
                                  "report_d": float(params.grid.values[rk[j]]),
                                  "report_e": int(re_[j]), "violation": gap})
        rep.instances_checked = n + 1
    rep.instances_checked = instance_count
    rep.witness_instances = witnesses
    return rep


def audit_truthfulness(mf, params, cost, tables, instance_count=1000, misreport_grid=None,
                       rng=0, tol=None) -> AuditReport:
    return run_audit(mf, params, cost, tables, instance_count, misreport_grid, rng, tol)


def audit_individual_rationality(mf, params, cost, tables, instance_count=1000, rng=0,
                                 tol=None) -> AuditReport:
    return run_audit(mf, params, cost, tables, instance_count, None, rng, tol, check_truth=False)
