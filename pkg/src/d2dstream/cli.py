"""Command line entry point ``d2dstream``.

Every subcommand reads one config file, applies ``--set key=value``
overrides, writes its artefacts under ``--out-dir`` and prints a JSON
summary on stdout. Failures print ``{"error": ...}`` and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, parse_config
from .mechanism import TablesNotConverged, _jsonable
from .mfe import write_diagnostics_json, write_distribution_csv, write_q_csv
from .pipeline import parallel_audit, solve_equilibrium, tables_for
from .rlc import DEFAULT_CHUNK_BYTES, full_rank_probability, full_rank_trials, round_trip
from .sim import SimConfig, run_simulation
from .viability import ViabilityInputs, viability_report

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class NotConverged(RuntimeError):
    pass


def _equilibrium(cfg):
    eq = solve_equilibrium(cfg)
    if not eq.result.converged:
        raise NotConverged(f"fixed point residual {eq.result.residual:.3g} after "
                           f"{eq.result.iterations} iterations")
    return eq


def _tables(cfg, eq):
    tables = tables_for(cfg, eq)
    if not tables.converged:
        raise TablesNotConverged("value iteration did not reach tol_value")
    return tables


def cmd_mfe(cfg, args, out: Path) -> dict:
    eq = solve_equilibrium(cfg)
    g = eq.params.grid
    write_distribution_csv(out / "rho.csv", g, rho=eq.result.rho)
    write_q_csv(out / "q.csv", g, eq.result.q)
    write_diagnostics_json(out / "mfe.json", eq.result)
    if not eq.result.converged:
        raise NotConverged(f"fixed point residual {eq.result.residual:.3g}")
    return eq.result.diagnostics()


def cmd_values(cfg, args, out: Path) -> dict:
    eq = _equilibrium(cfg)
    t = _tables(cfg, eq)
    for name in ("U_tilde", "V_star", "V_tilde", "V_bystander"):
        t.to_csv(out / f"{name}.csv", name)
    return {"W_bar": t.W_bar, "H_bar": t.H_bar, "grid_points": eq.params.grid.size,
            "report": t.report.to_dict() if t.report else None}


def cmd_audit(cfg, args, out: Path) -> dict:
    eq = _equilibrium(cfg)
    t = _tables(cfg, eq)
    rep = parallel_audit(cfg, eq, t, workers=args.workers)
    d = rep.to_dict()
    d.update(passed_truth=rep.passed_truth, passed_ir=rep.passed_ir, passed_sign=rep.passed_sign)
    (out / "audit.json").write_text(json.dumps(d, indent=2))
    return d


def cmd_simulate(cfg, args, out: Path) -> dict:
    eq = _equilibrium(cfg)
    tables = _tables(cfg, eq) if cfg.transfers else None
    sc = SimConfig(params=eq.params, mf=eq.mf, J=cfg.J, frames=cfg.frames, seed=cfg.seed,
                   mode=cfg.mode, burn_in=cfg.burn_in, mobility=cfg.mobility,
                   cost=cfg.cost_function(), transfers=cfg.transfers)
    m = run_simulation(sc, tables)
    m.write(out, eq.params.grid)
    s = m.summary()
    s["sup_distance_to_rho"] = (float(np.max(np.abs(m.deficit_histogram - eq.mf.rho)))
                                if m.defined else None)
    return s


def cmd_viability(cfg, args, out: Path) -> dict:
    rep = viability_report(ViabilityInputs(
        price_per_gb=cfg.price_per_gb, bitrate_kbps=cfg.bitrate_kbps, frame_ms=cfg.frame_ms,
        delta=cfg.delta, b2d_fraction_saved=cfg.b2d_fraction_saved,
        avg_transfer=cfg.avg_transfer, reference_deficit=cfg.reference_deficit))
    d = rep.to_dict()
    (out / "viability.json").write_text(json.dumps(d, indent=2))
    return d


def cmd_rlc_selftest(cfg, args, out: Path) -> dict:
    gen = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    N = cfg.N
    hits = full_rank_trials(N, cfg.rlc_trials, gen)
    ok = 0
    size = N * (cfg.chunk_bytes or DEFAULT_CHUNK_BYTES)
    for _ in range(cfg.rlc_blocks):
        data = gen.integers(0, 256, size=size, dtype=np.uint8).tobytes()
        ok += round_trip(data, N, gen, extra=N) == data
    d = {"N": N, "trials": cfg.rlc_trials, "full_rank_rate": hits / cfg.rlc_trials,
         "analytic": full_rank_probability(N), "round_trips": cfg.rlc_blocks,
         "round_trips_ok": int(ok)}
    (out / "rlc.json").write_text(json.dumps(d, indent=2))
    return d


COMMANDS = {
    "mfe": (cmd_mfe, "mfe_tol"),
    "values": (cmd_values, "tol_value"),
    "audit": (cmd_audit, "tol_value"),
    "simulate": (cmd_simulate, "tol_value"),
    "viability": (cmd_viability, None),
    "rlc-selftest": (cmd_rlc_selftest, None),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="d2dstream", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out-dir", default="out")
        p.add_argument("--mode", choices=("counting", "codec"))
        p.add_argument("--tol", type=float, help="tolerance of this subcommand's solver")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    return ap


def _fail(kind: str, message: str, code: int, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}))
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    fn, tol_key = COMMANDS[args.command]
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.mode is not None:
            overrides.append(f"mode={args.mode}")
        if args.tol is not None and tol_key:
            overrides.append(f"{tol_key}={args.tol}")
        if args.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        cfg = parse_config(args.config).with_overrides(overrides)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG, key=exc.key)
    except OSError as exc:
        return _fail("io", str(exc), EXIT_CONFIG)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfg.serialize())
    t0 = time.perf_counter()
    try:
        summary = fn(cfg, args, out)
    except (NotConverged, TablesNotConverged) as exc:
        return _fail("not_converged", str(exc), EXIT_RUNTIME)
    except (ValueError, RuntimeError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_RUNTIME)
    summary = _jsonable({"command": args.command, "seed": cfg.seed,
                         "seconds": round(time.perf_counter() - t0, 3), **summary})
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
