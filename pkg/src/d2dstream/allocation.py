"""Per-frame D2D scheduling inside one cluster.

The greedy rule runs in three phases:

1. agents that cannot decode (``S^c``) broadcast everything they hold;
2. agents in ``S`` broadcast their *extra* chunks, ``(e_i + T - N)^+``, which
   never cost them their own decode;
3. while slots remain and somebody still needs chunks, agents in ``S`` are
   sacrificed one at a time, cheapest first.

Broadcasts are error-free, so the outcome depends only on how many chunks
each agent sends. Outcomes are cached on ``(e in priority order, T, N,
protected position)`` which is what makes the value engine and simulator
cheap.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .model import AgentState, SystemParams, chi_indicator

PHASE_SCATTER, PHASE_EXTRA, PHASE_SACRIFICE = 1, 2, 3


@dataclass(frozen=True, eq=False)
class CostFunction:
    """Holding cost ``c(d)``: ``linear`` (``scale*d``), ``quadratic``
    (``scale*d**2``) or ``table`` (piecewise-linear through ``table``
    sampled at ``points``)."""

    kind: str = "linear"
    scale: float = 1.0
    points: np.ndarray | None = None
    table: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "quadratic", "table"):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.scale <= 0:
            raise ValueError("cost scale must be positive")
        if self.kind == "table":
            if self.points is None or self.table is None:
                raise ValueError("table cost needs points and table")
            object.__setattr__(self, "points", np.asarray(self.points, float))
            object.__setattr__(self, "table", np.asarray(self.table, float))

    def __call__(self, d):
        d = np.asarray(d, dtype=float)
        if self.kind == "linear":
            out = self.scale * d
        elif self.kind == "quadratic":
            out = self.scale * d * d
        else:
            out = self.scale * np.interp(d, self.points, self.table)
        return float(out) if out.ndim == 0 else out

    def check_shape(self, values: np.ndarray, atol: float = 1e-12) -> None:
        """Finite-difference check of monotonicity and convexity on a grid."""
        c = self(values)
        first = np.diff(c)
        if np.any(first < -atol):
            raise ValueError("cost function is not non-decreasing on the grid")
        if len(values) > 2 and np.any(np.diff(first / np.diff(values)) < -atol):
            raise ValueError("cost function is not convex on the grid")


LINEAR = CostFunction("linear", 1.0)


@dataclass(frozen=True, eq=False)
class AllocationResult:
    """Outcome of one frame for the agents listed in ``agents``."""

    agents: tuple
    x: np.ndarray
    g: np.ndarray
    chi: np.ndarray
    slots_used: int
    phase_log: tuple = field(default=())
    wasted_slots: int = 0

    def __len__(self):
        return len(self.agents)


def decode_benefit(k, params: SystemParams, cost: CostFunction):
    """``c(d after a miss) - c(d after a decode)`` for grid index ``k``."""
    grid = params.grid
    v = grid.values
    return cost(v[grid.update_index(k, 0)]) - cost(v[grid.update_index(k, 1)])


def priority_keys(params: SystemParams, cost: CostFunction) -> np.ndarray:
    """Rank of each grid index in the sacrifice order.

    Sacrifices go to the smallest decode benefit first, then smallest
    deficit. For a convex increasing cost the benefit is non-decreasing in
    the deficit, so this is min-deficit-first everywhere except at the
    truncation clamp where the benefit of the top grid point collapses.
    """
    k = np.arange(params.grid.size)
    w = np.round(decode_benefit(k, params, cost), 12)
    order = np.lexsort((k, w))
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return rank


def sacrifice_order(ks: Sequence[int], params: SystemParams, cost: CostFunction):
    """Agent indices sorted for phase 3: priority rank, ties by index."""
    rank = priority_keys_cached(params, cost)
    return tuple(sorted(range(len(ks)), key=lambda i: (rank[ks[i]], i)))


_PRIORITY_CACHE: dict = {}


def priority_keys_cached(params: SystemParams, cost: CostFunction) -> np.ndarray:
    key = (params.eta, params.d_max, id(cost))
    hit = _PRIORITY_CACHE.get(key)
    if hit is None or hit[0] is not cost:
        hit = (cost, priority_keys(params, cost))
        _PRIORITY_CACHE[key] = hit
    return hit[1]


@lru_cache(maxsize=1 << 18)
def schedule(e: tuple, N: int, T: int, protect: int = -1):
    """Run the three-phase rule on agents listed in sacrifice order.

    ``e[j]`` is the B2D count of the agent at priority position ``j``.
    ``protect`` names a position that is never sacrificed in phase 3.
    Returns ``(x, phase_log, wasted)`` with ``x`` per position.
    """
    M = len(e)
    x = [0] * M
    log = []
    total = sum(e)
    S = [i for i in range(M) if N - e[i] <= T and total >= N]
    if not S:
        return tuple(x), (), 0
    in_S = [False] * M
    for i in S:
        in_S[i] = True
    X = 0

    def undecoded(i):
        return e[i] + X - x[i] < N

    # phase 1: agents that cannot decode scatter what they hold
    Sc = [i for i in range(M) if not in_S[i]]
    T1 = min(sum(e[i] for i in Sc), T)
    wasted = 0
    for i in Sc:
        while x[i] < e[i] and X < T1:
            if not any(undecoded(j) for j in S):
                wasted += 1
            x[i] += 1
            X += 1
            log.append((i, PHASE_SCATTER))

    # phase 2: extras, round-robin over S in position order
    extra = {i: min(e[i], max(0, e[i] + T - N)) for i in S}
    while X < T and any(undecoded(j) for j in S):
        sent = False
        for i in S:
            if X >= T or not any(undecoded(j) for j in S):
                break
            if x[i] < extra[i] and any(undecoded(j) for j in S if j != i):
                x[i] += 1
                X += 1
                log.append((i, PHASE_EXTRA))
                sent = True
        if not sent:
            break

    # phase 3: sacrifice in priority order
    candidates = [i for i in range(M) if in_S[i] and i != protect]
    while X < T:
        sender = None
        for i in candidates:
            if x[i] < e[i] and any(undecoded(j) for j in S if j != i):
                sender = i
                break
        if sender is None:
            break
        x[sender] += 1
        X += 1
        log.append((sender, PHASE_SACRIFICE))
    return tuple(x), tuple(log), wasted


@lru_cache(maxsize=1 << 18)
def decode_vector(e: tuple, N: int, T: int, protect: int = -1) -> tuple:
    """Decode indicators per priority position for :func:`schedule`."""
    x, _, _ = schedule(e, N, T, protect)
    X = sum(x)
    return tuple(int(e[i] + X - x[i] >= N) for i in range(len(e)))


def _result(agents, e, order, N, T, protect_pos=-1) -> AllocationResult:
    e_ord = tuple(int(e[i]) for i in order)
    x_ord, log, wasted = schedule(e_ord, N, T, protect_pos)
    M = len(order)
    x = np.zeros(M, dtype=int)
    for pos, i in enumerate(order):
        x[i] = x_ord[pos]
    X = int(x.sum())
    g = X - x
    chi = np.array([chi_indicator(int(e[i]), int(g[i]), N) for i in range(M)], dtype=int)
    phase_log = tuple((agents[order[pos]], ph) for pos, ph in log)
    return AllocationResult(
        agents=tuple(agents), x=x, g=g, chi=chi, slots_used=X,
        phase_log=phase_log, wasted_slots=wasted,
    )


def _unpack(states: Sequence[AgentState], params: SystemParams):
    ks = [params.grid.index(s.d) for s in states]
    es = [int(s.e) for s in states]
    for e in es:
        if not 0 <= e <= params.N:
            raise ValueError(f"e={e} outside 0..{params.N}")
    return ks, es


def partition_agents(e: Sequence[int], params: SystemParams):
    """Split agent indices into those that can still decode (``S``) and the rest."""
    N, T = params.N, params.T
    total = sum(e)
    S = [i for i, ei in enumerate(e) if N - ei <= T and total >= N]
    Sc = [i for i in range(len(e)) if i not in S]
    return S, Sc


def greedy_allocate(states, params: SystemParams, cost: CostFunction = LINEAR,
                    protect: int | None = None) -> AllocationResult:
    """Three-phase greedy allocation for one cluster.

    ``protect`` sets one agent aside in phase 3; this is the allocation an
    agent expects when it refuses to be sacrificed.
    """
    ks, es = _unpack(states, params)
    order = sacrifice_order(ks, params, cost)
    pos = order.index(protect) if protect is not None else -1
    return _result(tuple(range(len(states))), es, order, params.N, params.T, pos)


def bystander_allocate(states, excluded: int, params: SystemParams,
                       cost: CostFunction = LINEAR) -> AllocationResult:
    """Greedy over everybody except ``excluded``, who only listens."""
    M = len(states)
    if not 0 <= excluded < M:
        raise IndexError(excluded)
    others = [i for i in range(M) if i != excluded]
    ks, es = _unpack(states, params)
    x = np.zeros(M, dtype=int)
    log = ()
    wasted = 0
    if others:
        sub = greedy_allocate([states[i] for i in others], params, cost)
        x[others] = sub.x
        log = tuple((others[a], ph) for a, ph in sub.phase_log)
        wasted = sub.wasted_slots
    X = int(x.sum())
    g = X - x
    chi = np.array([chi_indicator(es[i], int(g[i]), params.N) for i in range(M)], dtype=int)
    return AllocationResult(tuple(range(M)), x, g, chi, X, log, wasted)


def exclusion_allocate(states, removed: int, params: SystemParams,
                       cost: CostFunction = LINEAR) -> AllocationResult:
    """Greedy over the cluster with ``removed`` taken out entirely."""
    M = len(states)
    if not 0 <= removed < M:
        raise IndexError(removed)
    others = [i for i in range(M) if i != removed]
    if not others:
        z = np.zeros(0, dtype=int)
        return AllocationResult((), z, z, z, 0)
    sub = greedy_allocate([states[i] for i in others], params, cost)
    log = tuple((others[a], ph) for a, ph in sub.phase_log)
    return AllocationResult(tuple(others), sub.x, sub.g, sub.chi, sub.slots_used,
                            log, sub.wasted_slots)


def stage_cost(alloc: AllocationResult, states, params: SystemParams,
               cost: CostFunction = LINEAR) -> float:
    """Sum over the allocation's agents of ``c(updated deficit)``."""
    grid = params.grid
    total = 0.0
    for pos, agent in enumerate(alloc.agents):
        k = grid.index(states[agent].d)
        total += cost(grid.values[grid.update_index(k, int(alloc.chi[pos]))])
    return total


BRUTE_FORCE_LIMIT = 10**7


def brute_force_allocate(states, params: SystemParams,
                         cost: CostFunction = LINEAR) -> AllocationResult:
    """Cost-minimal allocation by enumerating every feasible count vector."""
    ks, es = _unpack(states, params)
    M, N, T = len(states), params.N, params.T
    n = 1
    for e in es:
        n *= e + 1
    if n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"{n} candidate schedules exceed the brute-force limit")
    grid = params.grid
    c_miss = [cost(grid.values[grid.update_index(k, 0)]) for k in ks]
    c_hit = [cost(grid.values[grid.update_index(k, 1)]) for k in ks]
    best = None
    for xs in itertools.product(*(range(e + 1) for e in es)):
        X = sum(xs)
        if X > T:
            continue
        val = 0.0
        for i in range(M):
            val += c_hit[i] if es[i] + X - xs[i] >= N else c_miss[i]
        key = (round(val, 12), X)
        if best is None or key < best[0]:
            best = (key, xs)
    x = np.array(best[1], dtype=int)
    X = int(x.sum())
    g = X - x
    chi = np.array([chi_indicator(es[i], int(g[i]), N) for i in range(M)], dtype=int)
    return AllocationResult(tuple(range(M)), x, g, chi, X)


SCHEDULE_TABLE_LIMIT = 2_000_000


def _decode_codes(codes, M: int, N: int, T: int):
    base = N + 1
    x_tab = np.empty((len(codes), M), dtype=np.int64)
    chi_tab = np.empty((len(codes), M), dtype=np.int64)
    for u, c in enumerate(np.asarray(codes).tolist()):
        pp = c % (M + 1) - 1
        c //= M + 1
        e = [0] * M
        for j in range(M - 1, -1, -1):
            e[j] = c % base
            c //= base
        x_tab[u] = schedule(tuple(e), N, T, pp)[0]
        chi_tab[u] = decode_vector(tuple(e), N, T, pp)
    return x_tab, chi_tab


_TABLES: dict = {}


def schedule_table(M: int, N: int, T: int, build: bool = True):
    """Lookup arrays ``(x, chi)`` indexed by the packed code of
    ``(e in priority order, protected position)``.

    Returns None when the code space is too large, or when the table has
    not been built yet and ``build`` is False.
    """
    key = (M, N, T)
    if key in _TABLES:
        return _TABLES[key]
    size = (N + 1) ** M * (M + 1)
    if size > SCHEDULE_TABLE_LIMIT or not build:
        return None
    x, chi = _decode_codes(np.arange(size), M, N, T)
    x.setflags(write=False)
    chi.setflags(write=False)
    _TABLES[key] = (x, chi)
    return _TABLES[key]


def batch_schedule(ks, es, params: SystemParams, cost: CostFunction = LINEAR, protect=None):
    """Greedy schedules for many clusters at once.

    Parameters
    ----------
    ks, es : (n, M) int arrays
        Grid indices and B2D counts; column ``j`` is agent ``j``.
    protect : (n,) int array, optional
        Agent index set aside in phase 3, or -1.

    Returns
    -------
    x, chi : (n, M) int arrays in the original agent order.
    """
    ks = np.asarray(ks, dtype=np.int64)
    es = np.asarray(es, dtype=np.int64)
    n, M = es.shape
    if M == 0:
        z = np.zeros((n, 0), dtype=np.int64)
        return z, z
    rank = priority_keys_cached(params, cost)
    key = rank[ks] * M + np.arange(M)
    order = np.argsort(key, axis=1, kind="stable")
    e_ord = np.take_along_axis(es, order, 1)
    if protect is None:
        prot_pos = np.full(n, -1, dtype=np.int64)
    else:
        protect = np.broadcast_to(np.asarray(protect, dtype=np.int64), (n,))
        prot_pos = np.where(protect >= 0, np.argmax(order == protect[:, None], axis=1), -1)
    tab = schedule_table(M, params.N, params.T, build=n >= 4096)
    code = np.zeros(n, dtype=np.int64)
    base = params.N + 1
    for j in range(M):
        code = code * base + e_ord[:, j]
    code = code * (M + 1) + (prot_pos + 1)
    if tab is not None:
        x_ord, chi_ord = tab[0][code], tab[1][code]
    else:
        uniq, inv = np.unique(code, return_inverse=True)
        x_u, chi_u = _decode_codes(uniq, M, params.N, params.T)
        inv = inv.reshape(-1)
        x_ord, chi_ord = x_u[inv], chi_u[inv]
    x = np.empty_like(es)
    chi = np.empty_like(es)
    np.put_along_axis(x, order, x_ord, 1)
    np.put_along_axis(chi, order, chi_ord, 1)
    return x, chi


def batch_decode(ks, es, params: SystemParams, cost: CostFunction = LINEAR, protect=None):
    """Decode indicators from :func:`batch_schedule`."""
    return batch_schedule(ks, es, params, cost, protect)[1]
