"""Mean-field value functions from a single agent's point of view.

Opponents are fresh i.i.d. draws from ``rho x zeta`` every frame, so every
value that matters reduces to a table over the agent's own ``(d, e)``.
The opponent expectation is taken over a frozen weighted sample set
(common random numbers), which keeps each Bellman operator a deterministic
``delta``-contraction.

The agent-perspective value ``U`` compares two candidate schedules per
frame: the cluster greedy ``a*`` and the same rule with the agent set aside
in the sacrifice phase. Since the continuation only depends on the agent's
own decode bit, each candidate is summarised by ``(chi_1, others' stage
cost)`` and the engine never touches full profiles.

Fixed points are found by policy iteration: evaluate a fixed choice rule
with one sparse linear solve, improve, repeat. Plain value-iteration sweeps
are available for checking the contraction rate.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .allocation import (
    LINEAR,
    CostFunction,
    batch_decode,
    decode_vector,
    exclusion_allocate,
    greedy_allocate,
    priority_keys_cached,
    schedule,
    stage_cost,
)
from .model import MeanField, SystemParams, _rng

DEFAULT_SAMPLES = 4096
TIE_TOL = 1e-12


@dataclass
class IterationReport:
    iterations: int = 0
    final_residual: float = np.inf
    residual_history: list = field(default_factory=list)
    converged: bool = False
    method: str = "policy"

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_residual": float(self.final_residual),
            "residual_history": [float(r) for r in self.residual_history],
            "converged": bool(self.converged),
            "method": self.method,
        }


@dataclass(frozen=True, eq=False)
class OpponentSet:
    """Weighted opponent profiles: ``k``, ``e`` of shape ``(S, M-1)``."""

    k: np.ndarray
    e: np.ndarray
    w: np.ndarray
    exact: bool = False

    def __len__(self):
        return len(self.w)


def sample_opponents(mf: MeanField, params: SystemParams, n: int, rng) -> OpponentSet:
    if n < 1:
        raise ValueError("need at least one opponent sample")
    gen = _rng(rng)
    m = params.M - 1
    k = gen.choice(len(mf.rho), size=(n, m), p=mf.rho)
    e = gen.choice(len(mf.zeta), size=(n, m), p=mf.zeta)
    return OpponentSet(k.astype(np.int64), e.astype(np.int64), np.full(n, 1.0 / n))


def enumerate_opponents(mf: MeanField, params: SystemParams, limit: int = 200_000) -> OpponentSet:
    """Every opponent profile in the support, weighted by its probability."""
    ks = np.flatnonzero(mf.rho > 0)
    es = np.flatnonzero(mf.zeta > 0)
    single = [(k, e, mf.rho[k] * mf.zeta[e]) for k in ks for e in es]
    m = params.M - 1
    if len(single) ** m > limit:
        raise ValueError(f"{len(single) ** m} opponent profiles exceed the limit {limit}")
    rows = list(itertools.product(single, repeat=m))
    k = np.array([[a[0] for a in r] for r in rows], dtype=np.int64).reshape(len(rows), m)
    e = np.array([[a[1] for a in r] for r in rows], dtype=np.int64).reshape(len(rows), m)
    w = np.array([np.prod([a[2] for a in r]) for r in rows])
    return OpponentSet(k, e, w / w.sum(), exact=True)


def make_opponents(mf, params, mc_samples=DEFAULT_SAMPLES, rng=0, exact_limit=0) -> OpponentSet:
    """Exact enumeration when the support has at most ``exact_limit`` profiles,
    otherwise ``mc_samples`` Monte Carlo draws."""
    n_single = int((mf.rho > 0).sum() * (mf.zeta > 0).sum())
    if n_single ** (params.M - 1) <= exact_limit:
        return enumerate_opponents(mf, params, limit=exact_limit)
    return sample_opponents(mf, params, mc_samples, rng)


def _schedule_rows(e_ord: np.ndarray, prot: np.ndarray, N: int, T: int):
    """Decode bits and slots used for rows of counts already in priority order."""
    n, M = e_ord.shape
    if M == 0:
        return np.zeros((n, 0), dtype=np.int64), np.zeros(n, dtype=np.int64)
    rows = np.column_stack([e_ord, prot])
    uniq, inv = np.unique(rows, axis=0, return_inverse=True)
    chi = np.empty((len(uniq), M), dtype=np.int64)
    used = np.empty(len(uniq), dtype=np.int64)
    for u, row in enumerate(uniq.tolist()):
        e = tuple(row[:M])
        chi[u] = decode_vector(e, N, T, row[M])
        used[u] = sum(schedule(e, N, T, row[M])[0])
    inv = inv.reshape(-1)
    return chi[inv], used[inv]


class ValueEngine:
    """Precomputed per-sample cluster outcomes for one ``(mf, params, cost)``.

    Everything that does not depend on the value tables is built once here:
    the agent's decode bit and the opponents' stage cost under both
    candidates, for every own count ``e``, every opponent sample and every
    priority position the agent can take.
    """

    def __init__(self, mf: MeanField, params: SystemParams, cost: CostFunction = LINEAR,
                 opponents: OpponentSet | None = None, mc_samples: int = DEFAULT_SAMPLES,
                 rng=0, exact_limit: int = 0, chunk: int = 256):
        grid = params.grid
        if len(mf.rho) != grid.size:
            raise ValueError("rho does not match the deficit grid")
        if len(mf.zeta) > params.N + 1:
            raise ValueError("zeta puts mass above N")
        self.mf, self.params, self.cost, self.grid = mf, params, cost, grid
        self.chunk = chunk
        self.opp = opponents if opponents is not None else make_opponents(
            mf, params, mc_samples, rng, exact_limit)
        K, M, N, T = grid.size, params.M, params.N, params.T
        self.K, self.E = K, N + 1
        self.delta = params.delta
        zeta = np.zeros(N + 1)
        zeta[: len(mf.zeta)] = mf.zeta
        self.zeta = zeta
        self.e_support = np.flatnonzero(zeta > 0)

        kk = np.arange(K)
        self.next0 = grid.update_index(kk, 0)
        self.next1 = grid.update_index(kk, 1)
        self.c0 = cost(grid.values[self.next0])
        self.c1 = cost(grid.values[self.next1])
        self.rank = priority_keys_cached(params, cost)

        # opponents sorted by (priority, sample column)
        S, m = self.opp.k.shape
        rk = self.rank[self.opp.k]
        order = np.argsort(rk * max(m, 1) + np.arange(m), axis=1, kind="stable")
        ok = np.take_along_axis(self.opp.k, order, 1)
        oe = np.take_along_axis(self.opp.e, order, 1)
        self.opp_rank = np.take_along_axis(rk, order, 1)
        ocm = cost(grid.values[grid.update_index(ok, 0)]).reshape(S, m)
        och = cost(grid.values[grid.update_index(ok, 1)]).reshape(S, m)
        self.w = self.opp.w

        self.chi_a = np.empty((self.E, S, M), dtype=np.int8)
        self.chi_b = np.empty((self.E, S, M), dtype=np.int8)
        self.oth_a = np.empty((self.E, S, M))
        self.oth_b = np.empty((self.E, S, M))
        for p in range(M):
            for e1 in range(self.E):
                e_ord = np.concatenate(
                    [oe[:, :p], np.full((S, 1), e1), oe[:, p:]], axis=1)
                for prot, chi_t, oth_t in ((-1, self.chi_a, self.oth_a),
                                           (p, self.chi_b, self.oth_b)):
                    chi, _ = _schedule_rows(e_ord, np.full(S, prot), N, T)
                    chi_t[e1, :, p] = chi[:, p]
                    co = np.delete(chi, p, axis=1)
                    oth_t[e1, :, p] = (ocm + (och - ocm) * co).sum(axis=1)

        # opponents on their own: bystander receipts and the exclusion stage
        chi_o, used = _schedule_rows(oe, np.full(S, -1), N, T)
        self.excl_stage = (ocm + (och - ocm) * chi_o).sum(axis=1)
        self.chi_by = (np.arange(self.E)[:, None] + used[None, :] >= N).astype(np.int8)

        self._qa = None
        self._ra = None

    # ---- positions -------------------------------------------------------
    def positions(self, kc: np.ndarray) -> np.ndarray:
        """Priority position of an agent at index ``kc`` within each sample."""
        rk = self.rank[kc]
        return (self.opp_rank[None, :, :] < rk[:, None, None]).sum(axis=2)

    def _chunks(self):
        for s in range(0, self.K, self.chunk):
            yield np.arange(s, min(s + self.chunk, self.K))

    # ---- fixed-policy quantities ----------------------------------------
    def _greedy_stats(self):
        if self._qa is None:
            qa = np.empty((self.K, self.E))
            ra = np.empty((self.K, self.E))
            S = len(self.w)
            sidx = np.arange(S)[None, :]
            for kc in self._chunks():
                p = self.positions(kc)
                c0, c1 = self.c0[kc, None], self.c1[kc, None]
                for e1 in range(self.E):
                    chi = self.chi_a[e1][sidx, p]
                    qa[kc, e1] = chi @ self.w
                    ra[kc, e1] = (np.where(chi, c1, c0) + self.oth_a[e1][sidx, p]) @ self.w
            self._qa, self._ra = qa, ra
        return self._qa, self._ra

    def decode_prob(self, policy: str = "cluster-greedy", Ubar=None) -> np.ndarray:
        """``P(chi_1 = 1)`` per ``(k, e)`` under a policy."""
        if policy == "cluster-greedy":
            return self._greedy_stats()[0]
        if policy == "bystander":
            q = self.chi_by @ self.w
            return np.broadcast_to(q, (self.K, self.E)).copy()
        if policy == "agent-perspective":
            if Ubar is None:
                raise ValueError("agent-perspective policy needs Ubar")
            return self.bellman(Ubar, self.e_all)[2]
        raise ValueError(f"unknown policy {policy!r}")

    @property
    def e_all(self):
        return np.arange(self.E)

    # ---- Bellman operator -----------------------------------------------
    def bellman(self, Ubar: np.ndarray, e_list):
        """Apply the agent-perspective operator to ``Ubar``.

        Returns ``(U, r, q)`` of shape ``(K, E)``: the minimised value, the
        expected cluster stage cost of the chosen candidate and its decode
        probability. Columns outside ``e_list`` are left as NaN.
        """
        d = self.delta
        Z0 = self.c0 + d * Ubar[self.next0]
        Z1 = self.c1 + d * Ubar[self.next1]
        U = np.full((self.K, self.E), np.nan)
        r = np.full((self.K, self.E), np.nan)
        q = np.full((self.K, self.E), np.nan)
        S = len(self.w)
        sidx = np.arange(S)[None, :]
        for kc in self._chunks():
            p = self.positions(kc)
            z0, z1 = Z0[kc, None], Z1[kc, None]
            c0, c1 = self.c0[kc, None], self.c1[kc, None]
            for e1 in e_list:
                ca = self.chi_a[e1][sidx, p]
                cb = self.chi_b[e1][sidx, p]
                oa = self.oth_a[e1][sidx, p]
                ob = self.oth_b[e1][sidx, p]
                va = np.where(ca, z1, z0) + oa
                vb = np.where(cb, z1, z0) + ob
                pick_b = vb < va - TIE_TOL * (1.0 + np.abs(va))
                U[kc, e1] = np.where(pick_b, vb, va) @ self.w
                chi = np.where(pick_b, cb, ca)
                q[kc, e1] = chi @ self.w
                r[kc, e1] = (np.where(chi, c1, c0) + np.where(pick_b, ob, oa)) @ self.w
        return U, r, q

    def average_e(self, table: np.ndarray) -> np.ndarray:
        z = self.zeta[self.e_support]
        return table[:, self.e_support] @ z

    def _solve(self, r_bar: np.ndarray, q_bar: np.ndarray) -> np.ndarray:
        """Solve ``V = r + delta * P(q) V`` on the grid."""
        K = self.K
        rows = np.concatenate([np.arange(K), np.arange(K)])
        cols = np.concatenate([self.next0, self.next1])
        vals = np.concatenate([1.0 - q_bar, q_bar])
        P = sparse.csr_matrix((vals, (rows, cols)), shape=(K, K))
        A = sparse.identity(K, format="csr") - self.delta * P
        return np.asarray(spsolve(A.tocsc(), r_bar))

    def fixed_policy_value(self, q: np.ndarray, own_only: bool = True, r=None):
        """Own-cost value ``V(k, e)`` and its ``e``-average for decode probabilities ``q``."""
        if own_only:
            r = self.c0[:, None] + (self.c1 - self.c0)[:, None] * q
        Vbar = self._solve(self.average_e(r), self.average_e(q))
        V = r + self.delta * ((1 - q) * Vbar[self.next0, None] + q * Vbar[self.next1, None])
        return V, Vbar

    # ---- agent-perspective fixed point ----------------------------------
    def solve_agent_value(self, tol: float = 1e-6, max_iter: int = 100,
                          method: str = "policy", relative: bool = False):
        """Fixed point ``Ubar`` of the agent-perspective recursion.

        ``relative`` scales the stopping residual by ``1 - delta`` which is
        the useful criterion when ``delta`` is close to one.
        """
        if tol <= 0:
            raise ValueError("tol must be positive")
        rep = IterationReport(method=method)
        scale = (1 - self.delta) if relative else 1.0
        es = self.e_support
        _, ra = self._greedy_stats()
        qa = self._qa
        if method == "policy":
            Ubar = self._solve(self.average_e(ra), self.average_e(qa))
            for it in range(1, max_iter + 1):
                U, r, q = self.bellman(Ubar, es)
                res = float(np.max(np.abs(self.average_e(U) - Ubar)))
                rep.residual_history.append(res)
                rep.iterations = it
                if res * scale <= tol:
                    rep.converged = True
                    break
                Ubar = self._solve(self.average_e(r), self.average_e(q))
        elif method == "value":
            Ubar = np.zeros(self.K)
            for it in range(1, max_iter + 1):
                U, _, _ = self.bellman(Ubar, es)
                new = self.average_e(U)
                res = float(np.max(np.abs(new - Ubar)))
                rep.residual_history.append(res)
                rep.iterations = it
                Ubar = new
                if res * scale <= tol:
                    rep.converged = True
                    break
        else:
            raise ValueError(f"unknown method {method!r}")
        rep.final_residual = rep.residual_history[-1]
        return Ubar, rep

    def value_sweeps(self, Ubar0: np.ndarray, n: int):
        """``n`` plain sweeps from ``Ubar0``; returns the residual history."""
        U = np.asarray(Ubar0, dtype=float)
        hist = []
        for _ in range(n):
            new = self.average_e(self.bellman(U, self.e_support)[0])
            hist.append(float(np.max(np.abs(new - U))))
            U = new
        return np.array(hist), U

    def mean_greedy_stage(self) -> float:
        """``E[stage cost of a*]`` with the agent itself drawn from ``rho x zeta``."""
        _, ra = self._greedy_stats()
        return float(self.mf.rho @ self.average_e(ra))

    def mean_exclusion_stage(self) -> float:
        return float(self.excl_stage @ self.w)

    def build_tables(self, tol: float = 1e-6, max_iter: int = 100, relative: bool = False) -> "ValueTables":
        Ubar, rep = self.solve_agent_value(tol, max_iter, "policy", relative)
        U, _, q_tilde = self.bellman(Ubar, self.e_all)
        qa, _ = self._greedy_stats()
        V_star, Vbar_star = self.fixed_policy_value(qa)
        V_tilde, Vbar_tilde = self.fixed_policy_value(q_tilde)
        V_by, Vbar_by = self.fixed_policy_value(self.decode_prob("bystander"))
        one_minus = 1 - self.delta
        return ValueTables(
            params=self.params, cost=self.cost, d=self.grid.values.copy(),
            U_tilde=U, V_star=V_star, V_tilde=V_tilde, V_bystander=V_by,
            Ubar=Ubar, Vbar_star=Vbar_star, Vbar_tilde=Vbar_tilde, Vbar_bystander=Vbar_by,
            W_bar=self.mean_greedy_stage() / one_minus,
            H_bar=self.mean_exclusion_stage() / one_minus,
            report=rep, tol=tol, relative=relative,
        )


@dataclass(eq=False)
class ValueTables:
    """Value tables over ``(grid index, e)`` with ``e = 0..N``."""

    params: SystemParams
    cost: CostFunction
    d: np.ndarray
    U_tilde: np.ndarray
    V_star: np.ndarray
    V_tilde: np.ndarray
    V_bystander: np.ndarray
    Ubar: np.ndarray
    Vbar_star: np.ndarray
    Vbar_tilde: np.ndarray
    Vbar_bystander: np.ndarray
    W_bar: float
    H_bar: float
    report: IterationReport
    tol: float = 1e-6
    relative: bool = False

    TABLES = ("U_tilde", "V_star", "V_tilde", "V_bystander")

    @property
    def converged(self) -> bool:
        return self.report.converged

    def lookup(self, name: str, d: float, e: int) -> float:
        if name not in self.TABLES:
            raise KeyError(name)
        return float(getattr(self, name)[self.params.grid.index(d), e])

    def to_csv(self, path, name: str = "U_tilde") -> None:
        table = getattr(self, name)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["d", "e", "value"])
            for k, dk in enumerate(self.d):
                for e in range(table.shape[1]):
                    w.writerow([f"{dk:.10g}", e, repr(float(table[k, e]))])


def read_table_csv(path, params: SystemParams) -> np.ndarray:
    """Inverse of :meth:`ValueTables.to_csv`."""
    grid = params.grid
    out = np.full((grid.size, params.N + 1), np.nan)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[grid.index(float(row["d"])), int(row["e"])] = float(row["value"])
    return out


# ---- public operations ---------------------------------------------------

def mean_stage_cost(mf: MeanField, params: SystemParams, cost: CostFunction = LINEAR,
                    mc_samples: int = DEFAULT_SAMPLES, rng=0, n_agents: int | None = None,
                    return_stderr: bool = False):
    """Monte Carlo ``E[greedy stage cost]`` over ``n_agents`` i.i.d. agents."""
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    M = params.M if n_agents is None else n_agents
    if M == 0:
        return (0.0, 0.0) if return_stderr else 0.0
    gen = _rng(rng)
    grid = params.grid
    ks = gen.choice(grid.size, size=(mc_samples, M), p=mf.rho)
    es = gen.choice(len(mf.zeta), size=(mc_samples, M), p=mf.zeta)
    chi = batch_decode(ks, es, params, cost)
    nxt = grid.update_index(ks, chi)
    stage = cost(grid.values[nxt]).reshape(mc_samples, M).sum(axis=1)
    mean = float(stage.mean())
    if return_stderr:
        return mean, float(stage.std(ddof=1) / np.sqrt(mc_samples)) if mc_samples > 1 else 0.0
    return mean


def cluster_value(theta, tables: ValueTables, params: SystemParams, cost: CostFunction = LINEAR) -> float:
    """Cluster cost-to-go: greedy stage cost now plus the discounted mean thereafter."""
    a = greedy_allocate(theta, params, cost)
    return stage_cost(a, theta, params, cost) + params.delta * tables.W_bar


def agent_value_iteration(mf, params, cost=LINEAR, tol=1e-6, mc_samples=DEFAULT_SAMPLES,
                          rng=0, method="policy", max_iter=100, exact_limit=0, relative=False):
    """Agent-perspective table ``U_tilde`` of shape ``(K, N+1)`` and its report."""
    eng = ValueEngine(mf, params, cost, mc_samples=mc_samples, rng=rng, exact_limit=exact_limit)
    Ubar, rep = eng.solve_agent_value(tol, max_iter, method, relative)
    U, _, _ = eng.bellman(Ubar, eng.e_all)
    return U, rep


def policy_value(policy, mf, params, cost=LINEAR, tol=1e-6, mc_samples=DEFAULT_SAMPLES,
                 rng=0, exact_limit=0):
    """Own-cost value ``V(k, e)`` under ``cluster-greedy``, ``agent-perspective``
    or ``bystander`` scheduling."""
    eng = ValueEngine(mf, params, cost, mc_samples=mc_samples, rng=rng, exact_limit=exact_limit)
    Ubar = None
    if policy == "agent-perspective":
        Ubar, _ = eng.solve_agent_value(tol)
    V, _ = eng.fixed_policy_value(eng.decode_prob(policy, Ubar))
    return V


def build_value_tables(mf, params, cost=LINEAR, tol=1e-6, mc_samples=DEFAULT_SAMPLES, rng=0,
                       exact_limit=0, relative=False) -> ValueTables:
    eng = ValueEngine(mf, params, cost, mc_samples=mc_samples, rng=rng, exact_limit=exact_limit)
    return eng.build_tables(tol, relative=relative)


def _candidates(theta, agent, params, cost):
    a = greedy_allocate(theta, params, cost)
    b = greedy_allocate(theta, params, cost, protect=agent) if len(theta) > 1 else a
    return a, b


def candidate_objective(alloc, theta, agent, tables, params, cost) -> float:
    """Cluster stage cost plus the agent's discounted continuation."""
    grid = params.grid
    k = grid.index(theta[agent].d)
    nxt = grid.update_index(k, int(alloc.chi[agent]))
    return stage_cost(alloc, theta, params, cost) + params.delta * tables.Ubar[nxt]


def agent_perspective_allocate(theta, tables: ValueTables, params: SystemParams,
                               cost: CostFunction = LINEAR, agent: int = 0):
    """The candidate the agent would pick; ties go to the cluster greedy."""
    a, b = _candidates(theta, agent, params, cost)
    va = candidate_objective(a, theta, agent, tables, params, cost)
    vb = candidate_objective(b, theta, agent, tables, params, cost)
    return b if vb < va - TIE_TOL * (1.0 + abs(va)) else a


def exclusion_value(theta_minus, tables_or_H_bar, params: SystemParams,
                    cost: CostFunction = LINEAR) -> float:
    """Discounted cluster cost with the agent absent."""
    H_bar = tables_or_H_bar.H_bar if isinstance(tables_or_H_bar, ValueTables) else float(tables_or_H_bar)
    if len(theta_minus) == 0:
        return 0.0
    a = greedy_allocate(theta_minus, params, cost)
    return stage_cost(a, theta_minus, params, cost) + params.delta * H_bar


# ---- full-profile oracle -------------------------------------------------

@dataclass(eq=False)
class FullProfileTables:
    """Values over full profiles for tiny instances.

    ``own`` lists the agent's ``(k, e)`` states, ``opp`` the opponent
    profiles with weights ``w``. Arrays are indexed ``[own, opp]``.
    """

    own: list
    opp: list
    w: np.ndarray
    W_hat: np.ndarray
    W_tilde: np.ndarray
    V_star: np.ndarray
    H: np.ndarray
    iterations: int

    def expect(self, name: str) -> dict:
        arr = getattr(self, name)
        return {s: float(arr[i] @ self.w) for i, s in enumerate(self.own)}


FULL_PROFILE_LIMIT = 10**6


def full_profile_value_oracle(mf: MeanField, params: SystemParams, cost: CostFunction = LINEAR,
                              tol: float = 1e-12, candidates: str = "all",
                              max_iter: int = 200_000) -> FullProfileTables:
    """Direct iteration over full profiles; only for validating the reduction.

    ``candidates="all"`` minimises the agent-perspective objective over every
    feasible transmission vector, ``"two"`` over the greedy schedule and its
    protected variant.
    """
    from .model import AgentState

    grid = params.grid
    K = grid.size
    es = list(np.flatnonzero(mf.zeta > 0))
    own = [(k, e) for k in range(K) for e in es]
    singles = [(k, e) for k in np.flatnonzero(mf.rho > 0) for e in es]
    m = params.M - 1
    n_prof = len(own) * len(singles) ** m
    if n_prof > FULL_PROFILE_LIMIT:
        raise ValueError(f"{n_prof} profiles exceed the oracle limit")
    opp = list(itertools.product(singles, repeat=m))
    w = np.array([np.prod([mf.rho[k] * mf.zeta[e] for k, e in o]) for o in opp])
    w = w / w.sum()
    own_idx = {s: i for i, s in enumerate(own)}
    zeta = mf.zeta
    d = params.delta

    def st(k, e):
        return AgentState(float(grid.values[k]), int(e))

    # per profile: candidate outcomes as (own next index, cluster stage cost)
    cand = []
    star = []
    excl = np.zeros(len(opp))
    for j, o in enumerate(opp):
        theta_m = [st(k, e) for k, e in o]
        if m:
            excl[j] = stage_cost(exclusion_allocate([st(0, 0)] + theta_m, 0, params, cost),
                                 [st(0, 0)] + theta_m, params, cost)
    for k1, e1 in own:
        row_c, row_s = [], []
        for o in opp:
            theta = [st(k1, e1)] + [st(k, e) for k, e in o]
            a = greedy_allocate(theta, params, cost)
            row_s.append((grid.update_index(k1, int(a.chi[0])), stage_cost(a, theta, params, cost)))
            if candidates == "two":
                outs = {(int(x.chi[0]), stage_cost(x, theta, params, cost))
                        for x in _candidates(theta, 0, params, cost)}
            elif candidates == "all":
                outs = _all_outcomes(theta, params, cost)
            else:
                raise ValueError(candidates)
            row_c.append([(grid.update_index(k1, c), s) for c, s in outs])
        cand.append(row_c)
        star.append(row_s)

    zeta_idx = [(e, zeta[e]) for e in es]

    def expect_next(table):
        # E over fresh e' and opponents of table[(k', e'), opp]
        out = np.zeros(K)
        for k in range(K):
            out[k] = sum(z * (table[own_idx[(k, e)]] @ w) for e, z in zeta_idx)
        return out

    n_own = len(own)
    Wt = np.zeros((n_own, len(opp)))
    it = 0
    for it in range(1, max_iter + 1):
        nxt = expect_next(Wt)
        new = np.array([[min(s + d * nxt[kn] for kn, s in c) for c in row] for row in cand])
        res = np.max(np.abs(new - Wt))
        Wt = new
        if res <= tol:
            break

    Vs = np.zeros((n_own, len(opp)))
    for _ in range(max_iter):
        nxt = expect_next(Vs)
        new = np.array([[cost(grid.values[kn]) + d * nxt[kn] for kn, _ in row] for row in star])
        res = np.max(np.abs(new - Vs))
        Vs = new
        if res <= tol:
            break

    stage_star = np.array([[s for _, s in row] for row in star])
    # profiles of all M agents are i.i.d. with the agent itself drawn from rho
    p_own = np.array([mf.rho[k] * mf.zeta[e] for k, e in own])
    mean_star = float(p_own @ stage_star @ w)
    W_hat = stage_star.copy()
    Hrow = excl.copy()
    mean_excl = float(excl @ w)
    Wc, Hc = 0.0, 0.0
    for _ in range(max_iter):
        Wn = mean_star + d * Wc
        Hn = mean_excl + d * Hc
        if abs(Wn - Wc) <= tol and abs(Hn - Hc) <= tol:
            Wc, Hc = Wn, Hn
            break
        Wc, Hc = Wn, Hn
    W_hat = stage_star + d * Wc
    H = np.broadcast_to(Hrow + d * Hc, (n_own, len(opp))).copy()
    return FullProfileTables(own, opp, w, W_hat, Wt, Vs, H, it)


def _all_outcomes(theta, params, cost):
    """Distinct ``(chi_agent0, cluster stage cost)`` over all feasible schedules."""
    grid = params.grid
    N, T = params.N, params.T
    es = [s.e for s in theta]
    ks = [grid.index(s.d) for s in theta]
    cm = [cost(grid.values[grid.update_index(k, 0)]) for k in ks]
    ch = [cost(grid.values[grid.update_index(k, 1)]) for k in ks]
    outs = set()
    for xs in itertools.product(*(range(e + 1) for e in es)):
        X = sum(xs)
        if X > T:
            continue
        chi = [int(es[i] + X - xs[i] >= N) for i in range(len(es))]
        outs.add((chi[0], round(sum(ch[i] if chi[i] else cm[i] for i in range(len(es))), 12)))
    # keep only the cheapest stage cost per own outcome
    best = {}
    for c, s in outs:
        best[c] = min(s, best.get(c, np.inf))
    return set(best.items())
