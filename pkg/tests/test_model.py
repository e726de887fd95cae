from fractions import Fraction

import numpy as np
import pytest

from d2dstream import (
    GridError,
    MeanField,
    RandomStream,
    SystemParams,
    build_deficit_grid,
    chi_indicator,
    deficit_update,
    point_mass,
    uniform_counts,
    uniform_on,
)
from d2dstream.model import regenerate_deficit, sample_agent_state


def test_grid_095():
    g = build_deficit_grid(0.95, 13.0)
    assert g.step == Fraction(1, 20)
    assert (g.up, g.down) == (19, 20)
    # inclusive endpoints: 0, 0.05, ..., 13.0
    assert g.size == 261
    assert g.values[-1] == pytest.approx(13.0)


def test_grid_small_cases():
    assert np.allclose(build_deficit_grid(1.0, 5.0).values, [0, 1, 2, 3, 4, 5])
    assert np.allclose(build_deficit_grid(0.5, 1.0).values, [0, 0.5, 1.0])


def test_grid_rejects_bad_eta():
    with pytest.raises(GridError):
        build_deficit_grid(0.123456789, 5.0)
    with pytest.raises(ValueError):
        build_deficit_grid(0.0, 5.0)
    with pytest.raises(ValueError):
        build_deficit_grid(0.5, -1.0)


def test_grid_closure_and_monotonicity():
    for eta, dmax in ((0.95, 13.0), (0.5, 4.0), (2 / 3, 6.0), (1.0, 3.0)):
        g = build_deficit_grid(eta, dmax)
        k = np.arange(g.size)
        n0, n1 = g.update_index(k, 0), g.update_index(k, 1)
        assert n0.min() >= 0 and n0.max() <= g.kmax
        assert n1.min() >= 0 and n1.max() <= g.kmax
        assert np.all(np.diff(n0) >= 0) and np.all(np.diff(n1) >= 0)
        assert np.all(n1 <= n0)


def test_chi_indicator():
    assert chi_indicator(4, 6, 10) == 1
    assert chi_indicator(4, 5, 10) == 0
    assert chi_indicator(10, 0, 10) == 1
    with pytest.raises(ValueError):
        chi_indicator(-1, 0, 10)


def test_deficit_update_examples():
    p = SystemParams(M=4, N=10, T=8, eta=0.95, delta=0.9)
    assert deficit_update(1.0, 1, p) == pytest.approx(0.95)
    assert deficit_update(0.0, 1, p) == 0.0
    assert deficit_update(2.0, 0, p) == pytest.approx(2.95)
    assert deficit_update(20.0, 0, p) == pytest.approx(20.0)
    assert p.grid.clamps(p.grid.kmax, 0)


def test_params_validation():
    with pytest.raises(ValueError):
        SystemParams(M=0, N=10, T=8, eta=0.95, delta=0.9)
    with pytest.raises(ValueError):
        SystemParams(M=4, N=10, T=8, eta=0.95, delta=1.0)
    SystemParams(M=4, N=10, T=8, eta=0.95, delta=0.0)


def test_meanfield_validation():
    with pytest.raises(ValueError):
        MeanField(rho=np.array([0.5, 0.6]), zeta=np.array([1.0]), psi=np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        MeanField(rho=np.array([1.0]), zeta=np.array([1.0]), psi=np.array([0.5, 0.5]))


def test_sampling():
    g = build_deficit_grid(0.95, 13.0)
    mf = MeanField(rho=point_mass(g.size, 0), zeta=point_mass(11, 4), psi=point_mass(g.size, 0))
    s = sample_agent_state(mf, RandomStream(1), g)
    assert (s.d, s.e) == (0.0, 4)

    rho = np.zeros(g.size)
    rho[[0, 19]] = 0.5
    mf = MeanField(rho=rho, zeta=uniform_counts([3, 4, 5], 10), psi=rho)
    k, e = sample_agent_state(mf, RandomStream(2), g, size=10**6)
    assert abs(np.mean(k == 0) - 0.5) <= 0.002
    assert set(np.unique(e)) == {3, 4, 5}

    a = sample_agent_state(mf, RandomStream(7, 3), g, size=100)
    b = sample_agent_state(mf, RandomStream(7, 3), g, size=100)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_regeneration():
    g = build_deficit_grid(0.95, 20.0)
    assert regenerate_deficit(point_mass(g.size, 0), 0, g) == 0.0
    psi = uniform_on(g, 0, 13)
    d = regenerate_deficit(psi, 3, g, size=10**6)
    assert abs(d.mean() - 6.5) <= 0.05
    assert np.array_equal(regenerate_deficit(psi, 5, g, size=50), regenerate_deficit(psi, 5, g, size=50))
