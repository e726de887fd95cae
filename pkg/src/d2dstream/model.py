"""Domain types, the deficit grid and the per-frame state dynamics.

Deficits are kept as integer indices on a uniform grid whose step is the
exact rational gcd of ``eta`` and ``1 - eta``; floats only appear at the
edges (user input and reporting).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np

MAX_DENOMINATOR = 10_000


class GridError(ValueError):
    """Raised when a value cannot be represented on the deficit grid."""


def _as_fraction(x: float, what: str) -> Fraction:
    frac = Fraction(x).limit_denominator(MAX_DENOMINATOR)
    if abs(float(frac) - float(x)) > 1e-12:
        raise GridError(
            f"{what}={x!r} is not a rational with denominator <= {MAX_DENOMINATOR}"
        )
    return frac


@dataclass(frozen=True)
class DeficitGrid:
    """Admissible deficits ``values[k] = k * step`` for ``k = 0..kmax``.

    ``up`` is the deficit increment on a missed block and ``down`` the
    decrement on a decoded one, both in grid units.
    """

    step: Fraction
    up: int
    down: int
    kmax: int

    @cached_property
    def values(self) -> np.ndarray:
        return np.arange(self.kmax + 1) * self.step.numerator / self.step.denominator

    @property
    def size(self) -> int:
        return self.kmax + 1

    @property
    def d_max(self) -> float:
        return float(self.kmax * self.step)

    def __len__(self) -> int:
        return self.size

    def index(self, d: float) -> int:
        """Grid index of deficit ``d``; raises if ``d`` is off-grid."""
        k = round(float(d) / float(self.step))
        if k < 0 or k > self.kmax or abs(k * float(self.step) - float(d)) > 1e-9:
            raise GridError(f"deficit {d!r} is not on the grid (step {self.step})")
        return int(k)

    def indices(self, ds) -> np.ndarray:
        ds = np.asarray(ds, dtype=float)
        k = np.rint(ds / float(self.step)).astype(np.int64)
        bad = (k < 0) | (k > self.kmax) | (np.abs(k * float(self.step) - ds) > 1e-9)
        if np.any(bad):
            raise GridError(f"deficits {ds[bad][:5]} are not on the grid")
        return k

    def update_index(self, k, chi):
        """Index form of ``(d + eta - chi)^+`` clamped at ``d_max``. Vectorised."""
        out = np.asarray(k) + self.up - self.down * np.asarray(chi)
        out = np.clip(out, 0, self.kmax)
        if out.ndim == 0:
            return int(out)
        return out

    def clamps(self, k, chi):
        """True where the unclamped update would leave the grid from above."""
        return np.asarray(k) + self.up - self.down * np.asarray(chi) > self.kmax


def build_deficit_grid(eta: float, d_max: float) -> DeficitGrid:
    """Reachable deficit set from 0 under the update rule, truncated at ``d_max``.

    The closure is computed breadth-first so the returned grid is exactly the
    set of deficits an agent starting at 0 can visit.
    """
    if not 0 < eta <= 1:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    if d_max <= 0:
        raise ValueError(f"d_max must be positive, got {d_max}")
    eta_f = _as_fraction(eta, "eta")
    one_minus = 1 - eta_f
    # gcd of two rationals p/q, r/s over a common denominator
    if one_minus == 0:
        step = eta_f
    else:
        den = eta_f.denominator * one_minus.denominator // np.gcd(
            eta_f.denominator, one_minus.denominator
        )
        a = eta_f * den
        b = one_minus * den
        step = Fraction(int(np.gcd(int(a), int(b))), den)
    up = int(eta_f / step)
    down = int(1 / step)
    kcap = int(_as_fraction(d_max, "d_max") // step)

    seen = {0}
    frontier = [0]
    while frontier:
        nxt = []
        for k in frontier:
            for chi in (0, 1):
                k2 = min(kcap, max(0, k + up - down * chi))
                if k2 not in seen:
                    seen.add(k2)
                    nxt.append(k2)
        frontier = nxt
    kmax = max(seen)
    if sorted(seen) != list(range(kmax + 1)):
        # only happens when the step is not reached; keep the contract explicit
        raise GridError("reachable deficits are not a contiguous grid")
    return DeficitGrid(step=step, up=up, down=down, kmax=kmax)


@dataclass(frozen=True)
class SystemParams:
    M: int
    N: int
    T: int
    eta: float
    delta: float
    d_max: float = 20.0
    field_size: int = 256

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")
        if self.N < 1 or self.T < 1 or self.M < 1:
            raise ValueError("M, N and T must be positive")
        if self.d_max <= 0:
            raise ValueError("d_max must be positive")

    @cached_property
    def grid(self) -> DeficitGrid:
        return build_deficit_grid(self.eta, self.d_max)


@dataclass(frozen=True)
class AgentState:
    d: float
    e: int

    def check(self, params: SystemParams) -> None:
        params.grid.index(self.d)
        if not 0 <= self.e <= params.N:
            raise ValueError(f"e={self.e} outside 0..{params.N}")


def chi_indicator(e: int, g: int, N: int) -> int:
    """1 iff the agent holds at least ``N`` coded chunks after the frame."""
    if e < 0 or g < 0:
        raise ValueError("chunk counts must be non-negative")
    return int(e + g >= N)


def deficit_update(d: float, chi: int, params: SystemParams) -> float:
    grid = params.grid
    return float(grid.values[grid.update_index(grid.index(d), chi)])


def _check_pmf(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or np.any(p < 0):
        raise ValueError(f"{name} must be a non-negative vector")
    if abs(p.sum() - 1.0) > 1e-12:
        raise ValueError(f"{name} sums to {p.sum()!r}, expected 1")
    return p


@dataclass(frozen=True, eq=False)
class MeanField:
    """Deficit law ``rho`` and regeneration law ``psi`` over the grid, and the
    B2D count law ``zeta`` over ``0..len(zeta)-1``."""

    rho: np.ndarray
    zeta: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rho", _check_pmf(self.rho, "rho"))
        object.__setattr__(self, "zeta", _check_pmf(self.zeta, "zeta"))
        object.__setattr__(self, "psi", _check_pmf(self.psi, "psi"))
        if len(self.rho) != len(self.psi):
            raise ValueError("rho and psi must live on the same grid")

    @property
    def e_support(self) -> np.ndarray:
        return np.flatnonzero(self.zeta > 0)

    def with_rho(self, rho) -> "MeanField":
        return MeanField(rho=rho, zeta=self.zeta, psi=self.psi)

    def psi_mean(self, grid: DeficitGrid) -> float:
        return float(self.psi @ grid.values)


def uniform_on(grid: DeficitGrid, lo: float, hi: float) -> np.ndarray:
    """Uniform pmf on the grid points inside ``[lo, hi]``."""
    v = grid.values
    mask = (v >= lo - 1e-9) & (v <= hi + 1e-9)
    if not mask.any():
        raise ValueError(f"no grid points in [{lo}, {hi}]")
    return mask / mask.sum()


def point_mass(n: int, k: int) -> np.ndarray:
    p = np.zeros(n)
    p[k] = 1.0
    return p


def uniform_counts(values: Sequence[int], n_max: int) -> np.ndarray:
    """pmf over ``0..n_max`` uniform on ``values``."""
    z = np.zeros(n_max + 1)
    z[list(values)] = 1.0
    return z / z.sum()


@dataclass
class RandomStream:
    """Seeded generator; equal ``(seed, stream_id)`` give equal draws."""

    seed: int
    stream_id: int = 0
    gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self.gen = np.random.default_rng(ss)

    def child(self, stream_id: int) -> "RandomStream":
        return RandomStream(self.seed, stream_id=self.stream_id * 1_000_003 + stream_id + 1)


def _rng(rng) -> np.random.Generator:
    if isinstance(rng, RandomStream):
        return rng.gen
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_agent_state(mf: MeanField, rng, grid: DeficitGrid, size=None):
    """Draw ``(d, e)`` with ``d ~ rho`` and ``e ~ zeta`` independently.

    With ``size=None`` returns one :class:`AgentState`; otherwise a pair of
    arrays ``(deficit_index, e)``.
    """
    gen = _rng(rng)
    if size is None:
        k = gen.choice(len(mf.rho), p=mf.rho)
        e = gen.choice(len(mf.zeta), p=mf.zeta)
        return AgentState(float(grid.values[k]), int(e))
    k = gen.choice(len(mf.rho), size=size, p=mf.rho)
    e = gen.choice(len(mf.zeta), size=size, p=mf.zeta)
    return k, e


def regenerate_deficit(psi, rng, grid: DeficitGrid, size=None):
    gen = _rng(rng)
    k = gen.choice(len(psi), size=size, p=psi)
    if size is None:
        return float(grid.values[k])
    return grid.values[k]
