"""Frame-by-frame simulation of ``J`` clusters with mobility and churn.

Each frame every agent draws its B2D count, the population is shuffled into
clusters of ``M``, each cluster runs the greedy schedule, deficits update,
transfers are paid from value tables, and every agent leaves with
probability ``1 - delta`` to be replaced by a newcomer whose deficit is
drawn from ``psi``.

``counting`` mode decodes on chunk counts; ``codec`` mode draws random
GF(256) coefficient vectors for every chunk and decodes on rank.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .allocation import LINEAR, CostFunction, batch_schedule
from .model import MeanField, SystemParams, _rng
from .rlc import batch_rank


@dataclass
class SimConfig:
    params: SystemParams
    mf: MeanField
    J: int = 250
    frames: int = 200_000
    seed: int = 0
    mode: str = "counting"
    burn_in: float = 0.1
    mobility: bool = True
    cost: CostFunction = LINEAR
    transfers: bool = True
    censor_window: int | None = None
    transfer_bins: int = 50

    def __post_init__(self):
        if self.J < 1:
            raise ValueError("J must be >= 1")
        if self.frames < 0:
            raise ValueError("frames must be >= 0")
        if self.mode not in ("counting", "codec"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0 <= self.burn_in < 1:
            raise ValueError("burn_in is a fraction in [0, 1)")


@dataclass
class Metrics:
    frames: int
    agents: int
    deficit_counts: np.ndarray
    decoded: int = 0
    agent_frames: int = 0
    clamp_events: int = 0
    lifetimes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lifetime_transfers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    truncated_lifetimes: int = 0
    frame_transfer_sum: float = 0.0
    frame_transfer_min: float = np.inf
    codec_agreement: float | None = None
    seed: int = 0
    transfer_bins: int = 50

    @property
    def defined(self) -> bool:
        return self.agent_frames > 0

    @property
    def delivery_ratio(self) -> float:
        return self.decoded / self.agent_frames if self.agent_frames else float("nan")

    @property
    def deficit_histogram(self) -> np.ndarray:
        tot = self.deficit_counts.sum()
        return self.deficit_counts / tot if tot else np.full(len(self.deficit_counts), np.nan)

    @property
    def avg_lifetime_discounted_transfer(self) -> float:
        t = self.lifetime_transfers
        return float(t.mean()) if len(t) else float("nan")

    def transfer_histogram(self, bins: int | None = None):
        t = self.lifetime_transfers
        if len(t) == 0:
            return np.zeros(0), np.zeros(0)
        mass, edges = np.histogram(t, bins=bins or self.transfer_bins)
        return mass / mass.sum(), edges

    def lifetime_summary(self) -> dict:
        L = self.lifetimes
        n = len(L)
        if n == 0:
            return {"count": 0, "truncated": self.truncated_lifetimes}
        sd = float(L.std(ddof=1)) if n > 1 else 0.0
        return {"count": n, "mean": float(L.mean()), "std": sd,
                "stderr": sd / np.sqrt(n), "truncated": self.truncated_lifetimes}

    def summary(self) -> dict:
        return {
            "frames": self.frames,
            "agents": self.agents,
            "seed": self.seed,
            "histograms_defined": self.defined,
            "delivery_ratio": self.delivery_ratio if self.defined else None,
            "clamp_events": self.clamp_events,
            "avg_lifetime_discounted_transfer": (self.avg_lifetime_discounted_transfer
                                                 if len(self.lifetime_transfers) else None),
            "mean_frame_transfer": (self.frame_transfer_sum / self.agent_frames
                                    if self.agent_frames else None),
            "min_frame_transfer": (self.frame_transfer_min
                                   if np.isfinite(self.frame_transfer_min) else None),
            "lifetimes": self.lifetime_summary(),
            "codec_agreement": self.codec_agreement,
        }

    def write(self, out_dir, grid) -> None:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(self.summary(), indent=2))
        with open(out / "deficit_histogram.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin", "mass"])
            for d, m in zip(grid.values, self.deficit_histogram):
                w.writerow([f"{d:.10g}", repr(float(m))])
        mass, edges = self.transfer_histogram()
        with open(out / "transfer_histogram.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin", "mass"])
            for i, m in enumerate(mass):
                w.writerow([repr(float(0.5 * (edges[i] + edges[i + 1]))), repr(float(m))])


def lifetime_discounted_transfer(trace, delta: float) -> float:
    """``sum_t delta^t p_t`` over one lifetime, ``t`` counted from arrival."""
    p = np.asarray(trace, dtype=float)
    return float(p @ delta ** np.arange(len(p)))


def is_unimodal(counts, z: float = 3.0) -> bool:
    """False iff some bin dips below the lower of the peaks on either side by
    more than ``z`` Poisson standard deviations."""
    c = np.asarray(counts, dtype=float)
    if len(c) < 3:
        return True
    left = np.maximum.accumulate(c)
    right = np.maximum.accumulate(c[::-1])[::-1]
    rim = np.minimum(left[:-2], right[2:])
    mid = c[1:-1]
    return not np.any(rim - mid > z * np.sqrt(rim + mid + 1e-300))


def empirical_deficit_distribution(metrics: Metrics) -> np.ndarray:
    return metrics.deficit_histogram


class _TransferPricer:
    """Per-agent transfers for a frame of clusters, vectorised over clusters."""

    def __init__(self, tables, params, cost):
        self.t, self.p, self.cost = tables, params, cost
        self.g = params.grid
        self.cval = cost(self.g.values)

    def __call__(self, ks, es, x_a, chi_a):
        p, g, d = self.p, self.g, self.p.delta
        J, M = ks.shape
        nxt_a = g.update_index(ks, chi_a)
        own_a = self.cval[nxt_a]
        stage_a = own_a.sum(axis=1)
        out = np.empty((J, M))
        Ub = self.t.Ubar
        for i in range(M):
            if M > 1:
                _, chi_b = batch_schedule(ks, es, p, self.cost, protect=np.full(J, i))
                keep = np.arange(M) != i
                _, chi_o = batch_schedule(ks[:, keep], es[:, keep], p, self.cost)
                H = self.cval[g.update_index(ks[:, keep], chi_o)].sum(axis=1) + d * self.t.H_bar
            else:
                chi_b = chi_a
                H = np.zeros(J)
            stage_b = self.cval[g.update_index(ks, chi_b)].sum(axis=1)
            wa = stage_a + d * Ub[nxt_a[:, i]]
            wb = stage_b + d * Ub[g.update_index(ks[:, i], chi_b[:, i])]
            W = np.where(wb < wa - 1e-12 * (1 + np.abs(wa)), wb, wa)
            V = own_a[:, i] + d * self.t.Vbar_star[nxt_a[:, i]]
            out[:, i] = V + H - W
        return out


def _codec_decode(es, x, N, gen):
    """Rank-based decode bits when every B2D chunk carries random coefficients."""
    J, M = es.shape
    coeff = gen.integers(0, 256, size=(J, M, N, N), dtype=np.uint8)
    r = np.arange(N)
    own = r[None, None, :] < es[:, :, None]
    sent = r[None, None, :] < x[:, :, None]
    chi = np.empty((J, M), dtype=np.int64)
    for i in range(M):
        mask = sent.copy()
        mask[:, i] = own[:, i]
        rows = (coeff * mask[..., None]).reshape(J, M * N, N)
        chi[:, i] = batch_rank(rows) >= N
    return chi


def run_simulation(config: SimConfig, tables=None, init_rho=None) -> Metrics:
    """Simulate and collect metrics.

    Deficits start from ``init_rho`` (default ``config.mf.rho``). Lifetimes
    count only agents that arrived during the run and whose arrival is at
    least ``censor_window`` frames before the end; the others are reported
    as truncated.
    """
    cfg = config
    params = cfg.params
    grid = params.grid
    M, N = params.M, params.N
    n = cfg.J * M
    gen = _rng(np.random.SeedSequence(cfg.seed))
    if cfg.transfers and tables is not None and not tables.converged:
        raise RuntimeError("value tables did not converge")
    pricer = _TransferPricer(tables, params, cfg.cost) if (cfg.transfers and tables is not None) else None
    rho0 = cfg.mf.rho if init_rho is None else np.asarray(init_rho)
    k = gen.choice(grid.size, size=n, p=rho0)
    age = np.zeros(n, dtype=np.int64)
    born = np.full(n, -1, dtype=np.int64)
    acc = np.zeros(n)
    disc = np.ones(n)
    counts = np.zeros(grid.size, dtype=np.int64)
    burn = int(cfg.burn_in * cfg.frames)
    window = cfg.censor_window
    if window is None:
        window = int(np.ceil(np.log(1e-6) / np.log(params.delta))) if params.delta > 0 else 1
    cutoff = cfg.frames - window
    lifetimes, ltransfers = [], []
    truncated = 0
    m = Metrics(frames=cfg.frames, agents=n, deficit_counts=counts, seed=cfg.seed,
                transfer_bins=cfg.transfer_bins)
    agree = 0
    compared = 0
    zeta = cfg.mf.zeta
    psi = cfg.mf.psi
    for t in range(cfg.frames):
        e = gen.choice(len(zeta), size=n, p=zeta)
        perm = gen.permutation(n) if cfg.mobility else np.arange(n)
        ks = k[perm].reshape(cfg.J, M)
        es = e[perm].reshape(cfg.J, M)
        x, chi = batch_schedule(ks, es, params, cfg.cost)
        if cfg.mode == "codec":
            chi_c = _codec_decode(es, x, N, gen)
            agree += int((chi_c == chi).sum())
            compared += chi.size
            chi_use = chi_c
        else:
            chi_use = chi
        if pricer is not None:
            pay = pricer(ks, es, x, chi)
            p_agent = np.empty(n)
            p_agent[perm] = pay.ravel()
            acc += disc * p_agent
            disc *= params.delta
            if t >= burn:
                m.frame_transfer_sum += float(p_agent.sum())
                m.frame_transfer_min = min(m.frame_transfer_min, float(p_agent.min()))
        chi_agent = np.empty(n, dtype=np.int64)
        chi_agent[perm] = chi_use.ravel()
        m.clamp_events += int(grid.clamps(k, chi_agent).sum())
        k = grid.update_index(k, chi_agent)
        age += 1
        if t >= burn:
            m.decoded += int(chi_agent.sum())
            m.agent_frames += n
        # churn
        leave = np.flatnonzero(gen.random(n) < 1 - params.delta)
        if len(leave):
            fresh = (born[leave] >= 0) & (born[leave] <= cutoff)
            lifetimes.extend(age[leave[fresh]].tolist())
            ltransfers.extend(acc[leave[fresh]].tolist())
            truncated += int((~fresh).sum())
            k[leave] = gen.choice(grid.size, size=len(leave), p=psi)
            age[leave] = 0
            born[leave] = t + 1
            acc[leave] = 0.0
            disc[leave] = 1.0
        if t >= burn:
            counts += np.bincount(k, minlength=grid.size)
    # everyone still present at the end has an unfinished lifetime
    truncated += n
    m.lifetimes = np.array(lifetimes, dtype=float)
    m.lifetime_transfers = np.array(ltransfers, dtype=float)
    m.truncated_lifetimes = truncated
    m.codec_agreement = agree / compared if compared else None
    return m

