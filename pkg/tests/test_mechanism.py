import itertools

import numpy as np
import pytest

from d2dstream import AgentState, CostFunction, MeanField, SystemParams, uniform_counts
from d2dstream.mechanism import (
    TablesNotConverged,
    audit_tolerance,
    compute_transfer,
    net_cost,
    run_audit,
)
from d2dstream.values import ValueEngine, full_profile_value_oracle

LIN = CostFunction("linear")


def tiny(M=2, delta=0.9):
    p = SystemParams(M=M, N=3, T=2, eta=0.5, delta=delta, d_max=1.0)
    mf = MeanField(rho=np.ones(3) / 3, zeta=uniform_counts([1, 2], 3), psi=np.ones(3) / 3)
    return p, mf


@pytest.fixture(scope="module")
def tiny_tables():
    p, mf = tiny()
    return p, mf, ValueEngine(mf, p, LIN, exact_limit=1000).build_tables(tol=1e-12)


def test_single_agent_transfer_is_zero():
    p, mf = tiny(M=1)
    t = ValueEngine(mf, p, LIN, exact_limit=1000).build_tables(tol=1e-12)
    for d, e in itertools.product([0.0, 0.5, 1.0], [1, 2]):
        rec = compute_transfer([AgentState(d, e)], 0, t, p, LIN)
        assert abs(rec.transfer) <= 1e-9
        assert rec.net_cost == pytest.approx(rec.V_tilde_term, abs=1e-9)
    rep = run_audit(mf, p, LIN, t, 100, rng=3)
    assert rep.max_truth_violation <= rep.tolerance
    assert abs(rep.max_ir_violation) <= rep.tolerance


def test_transfer_matches_oracle(tiny_tables):
    p, mf, t = tiny_tables
    o = full_profile_value_oracle(mf, p, LIN, tol=1e-13, candidates="two")
    g = p.grid
    own = {s: i for i, s in enumerate(o.own)}
    for j, ((k2, e2),) in enumerate(o.opp):
        for (k1, e1), i in own.items():
            th = [AgentState(float(g.values[k1]), int(e1)), AgentState(float(g.values[k2]), int(e2))]
            rec = compute_transfer(th, 0, t, p, LIN)
            expect = o.V_star[i, j] + o.H[i, j] - o.W_tilde[i, j]
            assert rec.transfer == pytest.approx(expect, abs=1e-6)


def test_identity_and_sign(tiny_tables):
    p, mf, t = tiny_tables
    g = p.grid
    rng = np.random.default_rng(5)
    for _ in range(300):
        th = [AgentState(float(g.values[rng.integers(3)]), int(rng.integers(1, 3))) for _ in range(2)]
        rec = compute_transfer(th, 1, t, p, LIN)
        assert rec.transfer >= -1e-9
        assert rec.net_cost == pytest.approx(rec.W_tilde_term - rec.H_term, abs=1e-9)
        assert net_cost(th[1], th, 1, t, p, LIN) == pytest.approx(rec.net_cost, abs=1e-9)


def test_rejects_bad_reports_and_unconverged_tables(tiny_tables):
    p, mf, t = tiny_tables
    with pytest.raises(ValueError):
        compute_transfer([AgentState(0.0, 4), AgentState(0.0, 1)], 0, t, p, LIN)
    bad = ValueEngine(mf, p, LIN, exact_limit=1000).build_tables(tol=1e-300, max_iter=1)
    assert not bad.converged
    with pytest.raises(TablesNotConverged):
        compute_transfer([AgentState(0.0, 1), AgentState(0.0, 1)], 0, bad, p, LIN)


def test_audit_tolerance():
    p, _ = tiny(delta=0.99)
    assert audit_tolerance(p, 1e-6) == pytest.approx(1e-3)


def test_audit_is_reproducible(tiny_tables):
    p, mf, t = tiny_tables
    a = run_audit(mf, p, LIN, t, 50, rng=9).to_dict()
    b = run_audit(mf, p, LIN, t, 50, rng=9).to_dict()
    assert a == b


def test_tiny_audit_sign_and_participation(tiny_tables):
    p, mf, t = tiny_tables
    rep = run_audit(mf, p, LIN, t, 500, rng=1)
    assert rep.passed_sign and rep.sign_violations == 0
    assert rep.passed_ir and rep.ir_violations == 0
    assert rep.max_identity_error <= 1e-9


def test_tiny_audit_truthfulness(tiny_tables):
    # exact tables, so any violation is structural rather than sampling noise
    p, mf, t = tiny_tables
    rep = run_audit(mf, p, LIN, t, 500, rng=1)
    assert rep.truth_violations == 0, rep.witness_instances[:3]
