"""Mean-field equilibrium: decode probabilities, kernels and stationary laws.

Under the greedy rule an agent's decode bit depends on the opponents only
through their B2D counts and how many of them sit ahead of it in the
sacrifice order. With i.i.d. opponents that count is binomial in
``F(k) = rho(rank < rank(k))``, so the decode probability is exact:

    q(k, e) = sum_p P(position = p) * A[e, p]

where ``A[e, p]`` averages the decode bit over i.i.d. ``zeta`` opponent
counts with the agent at position ``p``. Ties with equal-deficit opponents
are broken by a uniformly random cluster position, as in the simulator.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .allocation import LINEAR, CostFunction, batch_decode, decode_vector, priority_keys_cached
from .model import MeanField, SystemParams, _rng


# ---- decode probability -------------------------------------------------

def position_table(zeta: np.ndarray, params: SystemParams) -> np.ndarray:
    """``A[e, p]``: decode probability at priority position ``p`` with own count ``e``."""
    M, N, T = params.M, params.N, params.T
    E = N + 1
    z = np.zeros(E)
    z[: len(zeta)] = zeta
    sup = np.flatnonzero(z > 0)
    A = np.zeros((E, M))
    for opp in itertools.product(sup, repeat=M - 1):
        w = float(np.prod(z[list(opp)])) if opp else 1.0
        for p in range(M):
            for e in range(E):
                tup = tuple(opp[:p]) + (e,) + tuple(opp[p:])
                A[e, p] += w * decode_vector(tup, N, T, -1)[p]
    return A


def _position_probs(less: np.ndarray, equal: np.ndarray, m: int, ties: str) -> np.ndarray:
    """``P(position = p)`` for ``m`` i.i.d. opponents, shape ``(K, m+1)``."""
    K = len(less)
    out = np.zeros((K, m + 1))
    greater = np.clip(1.0 - less - equal, 0.0, 1.0)
    if ties == "first":
        # equal-rank opponents come after the agent
        for p in range(m + 1):
            out[:, p] = comb(m, p) * less**p * (1 - less) ** (m - p)
        return out
    for a in range(m + 1):
        for b in range(m - a + 1):
            c = m - a - b
            pr = comb(m, a) * comb(m - a, b) * less**a * equal**b * greater**c
            for u in range(b + 1):
                out[:, a + u] += pr / (b + 1)
    return out


def decode_probability_table(rho, zeta, params: SystemParams, cost: CostFunction = LINEAR,
                             A: np.ndarray | None = None, ties: str = "random") -> np.ndarray:
    """Exact ``q(k, e)`` for every grid index and ``e = 0..N``."""
    rho = np.asarray(rho, dtype=float)
    if A is None:
        A = position_table(zeta, params)
    rank = priority_keys_cached(params, cost)
    # mass strictly ahead of each rank
    by_rank = np.zeros(len(rho))
    by_rank[rank] = rho
    ahead = np.concatenate([[0.0], np.cumsum(by_rank)[:-1]])
    less = np.clip(ahead[rank], 0.0, 1.0)
    P = _position_probs(less, rho, params.M - 1, ties)
    return np.clip(P @ A.T, 0.0, 1.0)


def estimate_decode_probability(d: float, e: int, rho, zeta, params: SystemParams,
                                cost: CostFunction = LINEAR, mc_samples: int = 0, rng=0,
                                ties: str = "first", exact_limit: int = 10**5):
    """Decode probability of an agent at ``(d, e)`` facing i.i.d. opponents.

    Exact when the opponent support has at most ``exact_limit`` profiles and
    ``mc_samples`` is 0, otherwise a Monte Carlo mean with its standard error.
    Returns ``(q, stderr)``.
    """
    grid = params.grid
    k = grid.index(d)
    m = params.M - 1
    support = int((np.asarray(rho) > 0).sum() * (np.asarray(zeta) > 0).sum())
    if mc_samples == 0 and support ** m <= exact_limit:
        q = decode_probability_table(rho, zeta, params, cost, ties=ties)[k, e]
        return float(q), 0.0
    n = max(int(mc_samples), 1)
    gen = _rng(rng)
    ks = np.empty((n, m + 1), dtype=np.int64)
    es = np.empty((n, m + 1), dtype=np.int64)
    ks[:, 0], es[:, 0] = k, e
    ks[:, 1:] = gen.choice(len(rho), size=(n, m), p=rho)
    es[:, 1:] = gen.choice(len(zeta), size=(n, m), p=zeta)
    if ties == "random":
        perm = np.argsort(gen.random((n, m + 1)), axis=1)
        ks = np.take_along_axis(ks, perm, 1)
        es = np.take_along_axis(es, perm, 1)
        me = np.argmax(perm == 0, axis=1)
    else:
        me = np.zeros(n, dtype=np.int64)
    chi = batch_decode(ks, es, params, cost)[np.arange(n), me]
    q = float(chi.mean())
    se = float(chi.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return q, se


# ---- kernels -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TransitionKernel:
    """``P = delta * P0 + (1 - delta) * 1 psi^T`` with sparse ``P0``."""

    P0: sparse.csr_matrix
    psi: np.ndarray
    delta: float
    q: np.ndarray | None = None
    clamp_flow: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.P0.shape[0]

    def dense(self) -> np.ndarray:
        return self.delta * self.P0.toarray() + (1 - self.delta) * self.psi[None, :]

    def step(self, pi: np.ndarray) -> np.ndarray:
        """``pi P`` for a probability vector ``pi``."""
        return self.delta * (self.P0.T @ pi) + (1 - self.delta) * self.psi * pi.sum()


def kernel_from_q(qbar: np.ndarray, psi, params: SystemParams, q=None) -> TransitionKernel:
    """Kernel for per-state decode probabilities ``qbar`` (already averaged over ``e``)."""
    grid = params.grid
    K = grid.size
    kk = np.arange(K)
    n0, n1 = grid.update_index(kk, 0), grid.update_index(kk, 1)
    qbar = np.clip(np.asarray(qbar, dtype=float), 0.0, 1.0)
    P0 = sparse.csr_matrix(
        (np.concatenate([1 - qbar, qbar]), (np.concatenate([kk, kk]), np.concatenate([n0, n1]))),
        shape=(K, K))
    clamp = (1 - qbar) * grid.clamps(kk, 0) + qbar * grid.clamps(kk, 1)
    return TransitionKernel(P0, np.asarray(psi, dtype=float), params.delta, q, clamp)


def build_transition_kernel(rho, zeta, psi, params: SystemParams, cost: CostFunction = LINEAR,
                            mc_samples: int = 0, rng=0, A=None) -> TransitionKernel:
    """Deficit kernel when opponents are i.i.d. ``rho x zeta``.

    With ``mc_samples=0`` the decode probabilities are exact.
    """
    zeta = np.asarray(zeta, dtype=float)
    if mc_samples:
        grid = params.grid
        gen = _rng(rng)
        q = np.zeros((grid.size, params.N + 1))
        for k in range(grid.size):
            for e in np.flatnonzero(zeta > 0):
                q[k, e] = estimate_decode_probability(
                    grid.values[k], int(e), rho, zeta, params, cost, mc_samples, gen, ties="random")[0]
    else:
        q = decode_probability_table(rho, zeta, params, cost, A=A)
    z = np.zeros(params.N + 1)
    z[: len(zeta)] = zeta
    return kernel_from_q(q @ z, psi, params, q)


# ---- stationary law ------------------------------------------------------

@dataclass
class StationaryDistribution:
    pi: np.ndarray
    method: str
    residual: float
    iterations: int = 0
    tail_mass: float = 0.0

    def mean(self, grid) -> float:
        return float(self.pi @ grid.values)


def stationary_distribution(kernel: TransitionKernel, psi=None, delta=None, method: str = "power",
                            tol: float = 1e-10, max_iter: int = 2_000_000, init=None) -> StationaryDistribution:
    """Stationary law of ``kernel``.

    ``power`` iterates ``pi <- pi P`` until the total-variation step is at
    most ``tol * (1 - delta)``, which bounds the distance to the fixed point
    by ``tol``. ``series`` sums ``(1-delta) delta^j psi P0^j`` until the
    tail weight ``delta^(j+1)`` is at most ``tol``. ``direct`` solves the
    linear system.
    """
    psi = kernel.psi if psi is None else np.asarray(psi, dtype=float)
    delta = kernel.delta if delta is None else delta
    K = kernel.size
    if method == "direct":
        A = sparse.identity(K, format="csc") - delta * kernel.P0.T.tocsc()
        pi = np.asarray(spsolve(A, (1 - delta) * psi))
        pi = np.clip(pi, 0.0, None)
        pi /= pi.sum()
        res = 0.5 * float(np.abs(kernel.step(pi) - pi).sum())
        return StationaryDistribution(pi, method, res)
    if method == "power":
        pi = psi.copy() if init is None else np.asarray(init, dtype=float).copy()
        stop = tol * max(1 - delta, 1e-300)
        res = np.inf
        for it in range(1, max_iter + 1):
            new = kernel.step(pi)
            res = 0.5 * float(np.abs(new - pi).sum())
            pi = new
            if res <= stop:
                break
        else:
            raise RuntimeError(f"power iteration stalled at residual {res}")
        return StationaryDistribution(pi / pi.sum(), method, res, it)
    if method == "series":
        term = (1 - delta) * psi
        acc = term.copy()
        weight = 1.0
        it = 0
        P0T = kernel.P0.T.tocsr()
        while delta * weight > tol and it < max_iter:
            term = delta * (P0T @ term)
            acc += term
            weight *= delta
            it += 1
        tail = float(1.0 - acc.sum())
        pi = acc / acc.sum()
        return StationaryDistribution(pi, method, abs(tail), it, tail)
    raise ValueError(f"unknown method {method!r}")


def no_decode_law(params: SystemParams) -> np.ndarray:
    """Stationary law of the chain that never decodes and restarts at 0."""
    grid = params.grid
    d = params.delta
    pi = np.zeros(grid.size)
    k, j = 0, 0
    while True:
        nxt = grid.update_index(k, 0)
        if nxt == k:
            pi[k] += d**j
            break
        pi[k] += (1 - d) * d**j
        k, j = nxt, j + 1
    return pi


def mean_bound(psi, params: SystemParams) -> float:
    """Upper bound on the stationary mean deficit, plus one grid step."""
    grid = params.grid
    F_prime = float(np.asarray(psi) @ grid.values)
    return F_prime + params.delta * params.eta / (1 - params.delta) + float(grid.step)


# ---- fixed point ---------------------------------------------------------

@dataclass
class MfeConfig:
    tol: float = 1e-8
    max_outer_iterations: int = 2000
    mc_samples: int = 0
    alpha: float = 0.5
    stationary_method: str = "direct"
    F_prime: float | None = None
    F_bound: float | None = None

    def check(self, psi, params: SystemParams):
        F_prime = float(np.asarray(psi) @ params.grid.values) if self.F_prime is None else self.F_prime
        need = params.delta * params.eta / (1 - params.delta) + F_prime
        F_bound = need if self.F_bound is None else self.F_bound
        if F_bound < need - 1e-12:
            raise ValueError(f"F_bound={F_bound} below the required {need}")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        return F_prime, F_bound


@dataclass
class MfeResult:
    rho: np.ndarray
    q: np.ndarray
    converged: bool
    iterations: int
    residual: float
    residual_history: list = field(default_factory=list)
    mean_history: list = field(default_factory=list)
    clamp_mass: float = 0.0
    clamp_flow: float = 0.0
    mean: float = 0.0
    mean_bound: float = 0.0
    mass_above: dict = field(default_factory=dict)

    def diagnostics(self) -> dict:
        return {
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "residual": float(self.residual),
            "residual_history": [float(r) for r in self.residual_history],
            "mean_history": [float(m) for m in self.mean_history],
            "clamp_mass": float(self.clamp_mass),
            "clamp_flow": float(self.clamp_flow),
            "mean": float(self.mean),
            "mean_bound": float(self.mean_bound),
            "mass_above": {str(k): float(v) for k, v in self.mass_above.items()},
        }


def mfe_fixed_point(config: MfeConfig, params: SystemParams, zeta, psi,
                    cost: CostFunction = LINEAR, init_rho=None, rng=0) -> MfeResult:
    """Damped iteration ``rho <- (1-alpha) rho + alpha Pi(rho)``.

    Stops when ``||Pi(rho) - rho||_inf <= tol``. Non-convergence returns the
    last iterate with ``converged=False``.
    """
    grid = params.grid
    psi = np.asarray(psi, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    F_prime, _ = config.check(psi, params)
    rho = psi.copy() if init_rho is None else np.asarray(init_rho, dtype=float).copy()
    if len(rho) != grid.size or abs(rho.sum() - 1) > 1e-9 or np.any(rho < 0):
        raise ValueError("init_rho must be a probability vector on the grid")
    A = position_table(zeta, params) if not config.mc_samples else None
    gen = _rng(rng)
    hist, means = [], []
    converged = False
    res = np.inf
    it = 0
    pi = rho
    kern = None
    for it in range(1, config.max_outer_iterations + 1):
        kern = build_transition_kernel(rho, zeta, psi, params, cost, config.mc_samples, gen, A=A)
        pi = stationary_distribution(kern, method=config.stationary_method).pi
        res = float(np.max(np.abs(pi - rho)))
        hist.append(res)
        means.append(float(pi @ grid.values))
        if res <= config.tol:
            converged = True
            rho = pi
            break
        rho = (1 - config.alpha) * rho + config.alpha * pi
    kern = build_transition_kernel(rho, zeta, psi, params, cost, config.mc_samples, gen, A=A)
    v = grid.values
    mass_above = {x: float(rho[v > x + 1e-9].sum()) for x in (13.0, 20.0, 50.0)}
    return MfeResult(
        rho=rho, q=kern.q, converged=converged, iterations=it, residual=res,
        residual_history=hist, mean_history=means,
        clamp_mass=float(rho[-1]), clamp_flow=float(rho @ kern.clamp_flow),
        mean=float(rho @ v), mean_bound=F_prime + params.delta * params.eta / (1 - params.delta)
        + float(grid.step), mass_above=mass_above,
    )


def write_distribution_csv(path, grid, **columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        names = list(columns)
        w.writerow(["d"] + names)
        for k, d in enumerate(grid.values):
            w.writerow([f"{d:.10g}"] + [repr(float(columns[n][k])) for n in names])


def write_q_csv(path, grid, q) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["d", "e", "q"])
        for k, d in enumerate(grid.values):
            for e in range(q.shape[1]):
                w.writerow([f"{d:.10g}", e, repr(float(q[k, e]))])


def write_diagnostics_json(path, result: MfeResult) -> None:
    with open(path, "w") as fh:
        json.dump(result.diagnostics(), fh, indent=2)
