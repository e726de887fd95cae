"""Flat ``key = value`` run configuration.

Lines starting with ``#`` are comments. Every key has a documented default
except the five system constants, which are required. Unknown keys are
rejected. Distributions use a small syntax:

``uniform:a-b``
    uniform on the integers (for ``zeta``) or grid points (for ``psi``) in
    ``[a, b]``
``point:x``
    point mass
``pmf:x1=p1,x2=p2,...``
    explicit masses, normalised
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .allocation import CostFunction
from .model import SystemParams, point_mass


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


REQUIRED = ("M", "N", "T", "eta", "delta")


@dataclass(frozen=True)
class RunConfig:
    M: int = 0
    N: int = 0
    T: int = 0
    eta: float = 0.0
    delta: float = 0.0
    d_max: float = 20.0
    field_size: int = 256
    zeta: str = "uniform:3-5"
    psi: str = "uniform:0-13"
    rho_init: str = "psi"
    cost: str = "linear"
    cost_scale: float = 1.0
    seed: int = 0
    mc_samples: int = 4096
    exact_limit: int = 0
    tol_value: float = 1e-6
    relative_tol: bool = False
    mfe_tol: float = 1e-8
    mfe_alpha: float = 0.5
    mfe_max_iter: int = 20000
    audit_instances: int = 1000
    audit_d_cap: float = 13.0
    J: int = 250
    frames: int = 200000
    burn_in: float = 0.1
    mode: str = "counting"
    mobility: bool = True
    transfers: bool = True
    price_per_gb: float = 10.0
    bitrate_kbps: float = 250.0
    frame_ms: float = 500.0
    b2d_fraction_saved: float = 0.6
    avg_transfer: float = 18039.0
    reference_deficit: float = 15.0
    rlc_trials: int = 100000
    rlc_blocks: int = 1000
    chunk_bytes: int = 1500

    # ---- derived objects -------------------------------------------------
    def params(self) -> SystemParams:
        return SystemParams(M=self.M, N=self.N, T=self.T, eta=self.eta, delta=self.delta,
                            d_max=self.d_max, field_size=self.field_size)

    def cost_function(self) -> CostFunction:
        return CostFunction(self.cost, self.cost_scale)

    def zeta_pmf(self) -> np.ndarray:
        return _parse_dist("zeta", self.zeta, np.arange(self.N + 1, dtype=float))

    def psi_pmf(self, grid=None) -> np.ndarray:
        grid = grid or self.params().grid
        return _parse_dist("psi", self.psi, grid.values)

    def rho_init_pmf(self, grid=None) -> np.ndarray:
        grid = grid or self.params().grid
        if self.rho_init == "psi":
            return self.psi_pmf(grid)
        if self.rho_init == "uniform":
            return np.full(grid.size, 1.0 / grid.size)
        return _parse_dist("rho_init", self.rho_init, grid.values)

    def validate(self) -> "RunConfig":
        try:
            grid = self.params().grid
        except ValueError as exc:
            raise ConfigError("params", str(exc)) from exc
        self.zeta_pmf()
        self.psi_pmf(grid)
        self.rho_init_pmf(grid)
        if self.cost not in ("linear", "quadratic"):
            raise ConfigError("cost", "expected linear or quadratic")
        if self.mode not in ("counting", "codec"):
            raise ConfigError("mode", "expected counting or codec")
        for k in ("mc_samples", "J", "audit_instances"):
            if getattr(self, k) < 1:
                raise ConfigError(k, "must be >= 1")
        for k in ("tol_value", "mfe_tol"):
            if getattr(self, k) <= 0:
                raise ConfigError(k, "must be positive")
        if not 0 < self.mfe_alpha <= 1:
            raise ConfigError("mfe_alpha", "must lie in (0, 1]")
        return self

    def serialize(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, pairs) -> "RunConfig":
        updates = {}
        for item in pairs or ():
            if "=" not in item:
                raise ConfigError(item, "override must look like key=value")
            k, v = (s.strip() for s in item.split("=", 1))
            updates[k] = v
        return _build(updates, base=self).validate()


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    typ = _TYPES[key]
    try:
        if typ == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ == "int":
            f = float(raw)
            if f != int(f):
                raise ValueError(raw)
            return int(f)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot read {raw!r} as {typ}") from None


def _build(pairs: dict, base: RunConfig | None = None) -> RunConfig:
    unknown = sorted(set(pairs) - set(_TYPES))
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    vals = {k: _coerce(k, v) for k, v in pairs.items()}
    if base is None:
        missing = [k for k in REQUIRED if k not in vals]
        if missing:
            raise ConfigError(missing[0], "required")
        return RunConfig(**vals)
    return replace(base, **vals)


def parse_config_text(text: str) -> RunConfig:
    pairs = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}", "expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in pairs:
            raise ConfigError(k, "given twice")
        pairs[k] = v
    return _build(pairs).validate()


def parse_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text())


def _parse_dist(key: str, spec: str, support: np.ndarray) -> np.ndarray:
    kind, _, body = spec.partition(":")
    n = len(support)
    tol = 1e-9
    try:
        if kind == "uniform":
            lo, hi = (float(x) for x in body.split("-", 1)) if "-" in body[1:] else (float(body),) * 2
            mask = (support >= lo - tol) & (support <= hi + tol)
            if not mask.any():
                raise ConfigError(key, f"no support points in [{lo}, {hi}]")
            if hi > support[-1] + tol or lo < support[0] - tol:
                raise ConfigError(key, f"[{lo}, {hi}] exceeds the admissible range "
                                       f"[{support[0]:g}, {support[-1]:g}]")
            return mask / mask.sum()
        if kind == "point":
            x = float(body)
            idx = np.flatnonzero(np.abs(support - x) <= tol)
            if len(idx) == 0:
                raise ConfigError(key, f"{x} is not an admissible value")
            return point_mass(n, int(idx[0]))
        if kind == "pmf":
            p = np.zeros(n)
            for part in body.split(","):
                xs, ws = part.split("=")
                idx = np.flatnonzero(np.abs(support - float(xs)) <= tol)
                if len(idx) == 0:
                    raise ConfigError(key, f"{xs} is not an admissible value")
                p[idx[0]] += float(ws)
            if p.sum() <= 0 or np.any(p < 0):
                raise ConfigError(key, "masses must be non-negative with positive total")
            return p / p.sum()
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(key, f"cannot parse distribution {spec!r}") from None
    raise ConfigError(key, f"unknown distribution kind {kind!r}")
