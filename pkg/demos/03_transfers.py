"""Transfers and the audit.

With the proxy equilibrium in hand we build the value tables, price one
cluster, then audit many sampled clusters. Transfers come out positive
and participation beats free-riding. Truth-telling is not always optimal:
the audit prints the most profitable misreport it found.
"""

from pathlib import Path

from d2dstream import AgentState
from d2dstream.config import parse_config
from d2dstream.mechanism import compute_transfer, run_audit
from d2dstream.pipeline import solve_equilibrium, tables_for

cfg = parse_config(Path(__file__).resolve().parents[1] / "configs" / "proxy.cfg")
eq = solve_equilibrium(cfg)
tables = tables_for(cfg, eq)
cost = cfg.cost_function()
print(f"mean cluster cost-to-go {tables.W_bar:.1f}, without one phone {tables.H_bar:.1f}")

cluster = [AgentState(0.0, 4), AgentState(2.5, 3), AgentState(6.0, 5), AgentState(1.2, 3)]
for i in range(4):
    rec = compute_transfer(cluster, i, tables, eq.params, cost)
    print(f"phone {i}: transfer {rec.transfer:9.2f}, net cost {rec.net_cost:9.2f}")

rep = run_audit(eq.mf, eq.params, cost, tables, 200, rng=cfg.seed)
print(f"audit of {rep.instances_checked} clusters: min transfer {rep.min_transfer:.1f}, "
      f"participation violations {rep.ir_violations}, misreport gains {rep.truth_violations}")
if rep.witness_instances:
    w = rep.witness_instances[0]
    print(f"example: deficits {w['d']}, counts {w['e']}, phone {w['agent']} gains "
          f"{w['violation']:.2f} by reporting d={w['report_d']}, e={w['report_e']}")
