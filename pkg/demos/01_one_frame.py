"""One frame in one cluster.

Four phones hold 3 to 5 of the 10 coded chunks of the current block and
share 8 broadcast slots. The greedy schedule first lets the phones that
already hold the whole block talk, then round-robins the rest, and when
slots run short it sacrifices the phones whose deficit would suffer least.
"""

from d2dstream import AgentState, CostFunction, SystemParams, brute_force_allocate, greedy_allocate, stage_cost
from d2dstream.allocation import PHASE_SACRIFICE

params = SystemParams(M=4, N=10, T=8, eta=0.95, delta=0.99)
cost = CostFunction("linear")
cluster = [AgentState(0.0, 4), AgentState(2.5, 3), AgentState(6.0, 5), AgentState(1.2, 3)]

a = greedy_allocate(cluster, params, cost)
print("phone  deficit  own  sent  heard  decodes")
for i, s in enumerate(cluster):
    print(f"{i:>5}  {s.d:7.2f}  {s.e:3d}  {a.x[i]:4d}  {a.g[i]:5d}  {bool(a.chi[i])!s:>7}")
print(f"slots used {a.slots_used} of {params.T}")
sacrificed = sorted({i for i, ph in a.phase_log if ph == PHASE_SACRIFICE})
print("phones that transmit while giving up their own block:", sacrificed or "none")

b = brute_force_allocate(cluster, params, cost)
print(f"stage cost greedy {stage_cost(a, cluster, params, cost):.3f}, "
      f"exhaustive optimum {stage_cost(b, cluster, params, cost):.3f}")
