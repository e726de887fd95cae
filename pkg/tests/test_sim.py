import numpy as np
import pytest

from d2dstream import MeanField, SystemParams, point_mass, uniform_counts, uniform_on
from d2dstream.sim import SimConfig, empirical_deficit_distribution, lifetime_discounted_transfer, run_simulation
from d2dstream.values import ValueEngine, build_value_tables


def setup(delta=0.9, d_max=20.0, zeta=None):
    p = SystemParams(M=4, N=10, T=8, eta=0.95, delta=delta, d_max=d_max)
    g = p.grid
    psi = uniform_on(g, 0, 13)
    mf = MeanField(rho=psi, zeta=uniform_counts([3, 4, 5], 10) if zeta is None else zeta, psi=psi)
    return p, mf


def test_config_validation():
    p, mf = setup()
    with pytest.raises(ValueError):
        SimConfig(p, mf, J=0)
    with pytest.raises(ValueError):
        SimConfig(p, mf, mode="bits")
    with pytest.raises(ValueError):
        SimConfig(p, mf, frames=-1)


def test_zero_frames():
    p, mf = setup()
    m = run_simulation(SimConfig(p, mf, J=5, frames=0, transfers=False))
    assert not m.defined
    assert m.summary()["delivery_ratio"] is None
    assert np.all(np.isnan(m.deficit_histogram))


def test_always_decode_point_mass():
    p, _ = setup()
    z = point_mass(p.grid.size, 0)
    mf = MeanField(rho=z, zeta=point_mass(11, 10), psi=z)
    m = run_simulation(SimConfig(p, mf, J=10, frames=400, transfers=False, seed=1))
    h = empirical_deficit_distribution(m)
    assert m.delivery_ratio == 1.0
    assert h[0] == 1.0


def test_histogram_and_ratio_ranges():
    p, mf = setup()
    m = run_simulation(SimConfig(p, mf, J=20, frames=300, transfers=False, seed=2))
    assert m.deficit_histogram.sum() == pytest.approx(1.0)
    assert 0 <= m.delivery_ratio <= 1


def test_same_seed_same_bytes(tmp_path):
    p, mf = setup()
    t = build_value_tables(mf, p, tol=1e-6, mc_samples=256)
    for name in ("a", "b"):
        m = run_simulation(SimConfig(p, mf, J=10, frames=200, seed=7), t)
        m.write(tmp_path / name, p.grid)
    for f in ("metrics.json", "deficit_histogram.csv", "transfer_histogram.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    m2 = run_simulation(SimConfig(p, mf, J=10, frames=200, seed=8), t)
    assert m2.summary() != m.summary()


def test_lifetime_discounted_transfer():
    assert lifetime_discounted_transfer(np.zeros(10), 0.9) == 0.0
    p, d, L = 3.0, 0.97, 40
    assert lifetime_discounted_transfer(np.full(L, p), d) == pytest.approx(p * (1 - d**L) / (1 - d))


def test_transfers_non_negative_and_lifetimes():
    p, mf = setup(delta=0.9)
    t = build_value_tables(mf, p, tol=1e-6, mc_samples=512)
    m = run_simulation(SimConfig(p, mf, J=25, frames=1500, seed=3), t)
    assert m.frame_transfer_min >= -1e-9
    s = m.lifetime_summary()
    assert s["count"] > 1000
    assert abs(s["mean"] - 10.0) <= 3 * s["stderr"]


def test_transfers_need_converged_tables():
    p, mf = setup()
    bad = ValueEngine(mf, p, mc_samples=64).build_tables(tol=1e-300, max_iter=1)
    with pytest.raises(RuntimeError):
        run_simulation(SimConfig(p, mf, J=2, frames=2), bad)


def test_codec_agrees_with_counting():
    p, mf = setup()
    m = run_simulation(SimConfig(p, mf, J=50, frames=40, mode="codec", transfers=False, seed=4))
    assert m.codec_agreement >= 0.995


def test_no_mobility_runs():
    p, mf = setup()
    m = run_simulation(SimConfig(p, mf, J=5, frames=50, mobility=False, transfers=False))
    assert m.defined


def test_is_unimodal():
    from d2dstream.sim import is_unimodal

    assert is_unimodal([1, 5, 20, 40, 30, 10])
    assert is_unimodal([40, 41, 39, 40, 42])
    assert not is_unimodal([50, 5, 50])
    assert not is_unimodal([100, 60, 100])
