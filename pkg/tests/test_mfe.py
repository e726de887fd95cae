import numpy as np
import pytest

from d2dstream import CostFunction, MeanField, SystemParams, point_mass, uniform_counts, uniform_on
from d2dstream.mfe import (
    MfeConfig,
    build_transition_kernel,
    decode_probability_table,
    estimate_decode_probability,
    kernel_from_q,
    mean_bound,
    mfe_fixed_point,
    no_decode_law,
    stationary_distribution,
)

LIN = CostFunction("linear")


def cluster(delta=0.9, d_max=8.0, M=4):
    return SystemParams(M=M, N=10, T=8, eta=0.95, delta=delta, d_max=d_max)


def random_pmf(rng, n):
    p = rng.random(n)
    return p / p.sum()


def test_decode_probability_boundaries():
    p = cluster()
    g = p.grid
    rng = np.random.default_rng(0)
    rho, zeta = random_pmf(rng, g.size), uniform_counts([3, 4, 5], 10)
    q = decode_probability_table(rho, zeta, p, LIN)
    assert np.all((q >= 0) & (q <= 1))
    assert np.allclose(q[:, 10], 1.0)
    assert np.allclose(q[:, :2], 0.0)  # N - e > T


def test_higher_deficit_is_protected():
    p = SystemParams(M=2, N=3, T=1, eta=0.5, delta=0.9, d_max=2.0)
    g = p.grid
    rho = point_mass(g.size, g.index(0.5))
    zeta = point_mass(4, 2)
    q, se = estimate_decode_probability(1.5, 2, rho, zeta, p, LIN)
    assert (q, se) == (1.0, 0.0)
    q_low, _ = estimate_decode_probability(0.0, 2, rho, zeta, p, LIN)
    assert q_low == 0.0


@pytest.mark.parametrize("ties", ["first", "random"])
def test_exact_q_matches_monte_carlo(ties):
    p = cluster(d_max=3.0)
    g = p.grid
    rng = np.random.default_rng(1)
    rho = random_pmf(rng, g.size)
    rho[::3] = 0
    rho /= rho.sum()
    zeta = uniform_counts([3, 4, 5], 10)
    exact = decode_probability_table(rho, zeta, p, LIN, ties=ties)
    for d, e in ((0.0, 3), (1.0, 4), (2.5, 5), (g.values[3], 4)):
        q, se = estimate_decode_probability(d, e, rho, zeta, p, LIN, mc_samples=40_000, rng=2, ties=ties)
        assert abs(q - exact[g.index(d), e]) <= 3 * se + 1e-12


def test_kernel_rows_and_doeblin():
    rng = np.random.default_rng(3)
    p = cluster()
    g = p.grid
    for _ in range(5):
        rho, psi = random_pmf(rng, g.size), random_pmf(rng, g.size)
        zeta = random_pmf(rng, 11)
        P = build_transition_kernel(rho, zeta, psi, p, LIN).dense()
        assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(P >= (1 - p.delta) * psi[None, :] - 1e-15)


def test_always_decode_absorbs_at_zero():
    p = cluster()
    g = p.grid
    psi = point_mass(g.size, 0)
    kern = kernel_from_q(np.ones(g.size), psi, p)
    assert np.allclose(kern.dense()[0], psi)
    for method in ("direct", "power", "series"):
        pi = stationary_distribution(kern, method=method, tol=1e-12).pi
        assert pi[0] == pytest.approx(1.0, abs=1e-10)


def test_no_decode_chain_geometric():
    p = SystemParams(M=4, N=10, T=8, eta=0.95, delta=0.9, d_max=40.0)
    g = p.grid
    kern = kernel_from_q(np.zeros(g.size), point_mass(g.size, 0), p)
    law = no_decode_law(p)
    k, path = 0, []
    while k not in path:
        path.append(k)
        k = g.update_index(k, 0)
    for i, kk in enumerate(path[:-1]):
        assert law[kk] == pytest.approx((1 - p.delta) * p.delta**i, abs=1e-15)
    assert law[path[-1]] == pytest.approx(p.delta ** (len(path) - 1))
    for method in ("direct", "series", "power"):
        pi = stationary_distribution(kern, method=method, tol=1e-13).pi
        assert np.max(np.abs(pi - law)) <= 1e-12, method


def test_power_and_series_agree():
    rng = np.random.default_rng(4)
    tol = 1e-9
    for delta in (0.5, 0.9, 0.99):
        p = cluster(delta=delta, d_max=20.0)
        g = p.grid
        kern = build_transition_kernel(random_pmf(rng, g.size), uniform_counts([3, 4, 5], 10),
                                       random_pmf(rng, g.size), p, LIN)
        a = stationary_distribution(kern, method="power", tol=tol).pi
        b = stationary_distribution(kern, method="series", tol=tol).pi
        c = stationary_distribution(kern, method="direct").pi
        assert np.abs(a - b).sum() <= 2 * tol
        assert np.abs(c - b).sum() <= 2 * tol


def test_mean_bound_holds():
    rng = np.random.default_rng(6)
    for delta in (0.8, 0.95, 0.99):
        p = cluster(delta=delta, d_max=60.0)
        g = p.grid
        for _ in range(3):
            psi = uniform_on(g, 0, 13)
            kern = build_transition_kernel(random_pmf(rng, g.size), random_pmf(rng, 11), psi, p, LIN)
            pi = stationary_distribution(kern, method="direct").pi
            assert pi @ g.values <= mean_bound(psi, p)


def test_fixed_point_all_decode():
    p = cluster()
    g = p.grid
    psi = point_mass(g.size, 0)
    res = mfe_fixed_point(MfeConfig(), p, point_mass(11, 10), psi, LIN)
    assert res.converged and res.residual == 0.0
    assert res.rho[0] == pytest.approx(1.0)


def test_two_initialisations_agree():
    p = cluster(delta=0.95, d_max=20.0)
    g = p.grid
    psi = uniform_on(g, 0, 13)
    zeta = uniform_counts([3, 4, 5], 10)
    cfg = MfeConfig(tol=1e-9, alpha=1.0, max_outer_iterations=5000)
    a = mfe_fixed_point(cfg, p, zeta, psi, LIN, init_rho=point_mass(g.size, 0))
    b = mfe_fixed_point(cfg, p, zeta, psi, LIN, init_rho=np.ones(g.size) / g.size)
    assert a.converged and b.converged
    assert np.max(np.abs(a.rho - b.rho)) <= 2e-8
    assert a.mean <= a.mean_bound
    assert res_history_decreasing(a.residual_history)


def res_history_decreasing(h):
    h = np.asarray(h)
    tail = h[len(h) // 2:]
    return tail[-1] <= tail[0]


def test_monte_carlo_kernel_near_exact():
    p = cluster(delta=0.9, d_max=5.0)
    g = p.grid
    rng = np.random.default_rng(8)
    rho = random_pmf(rng, g.size)
    zeta = uniform_counts([3, 4, 5], 10)
    ex = build_transition_kernel(rho, zeta, uniform_on(g, 0, 5), p, LIN)
    mc = build_transition_kernel(rho, zeta, uniform_on(g, 0, 5), p, LIN, mc_samples=4000, rng=9)
    assert np.max(np.abs(ex.q[:, 3:6] - mc.q[:, 3:6])) <= 0.05


def test_continuity_probe():
    p = cluster(delta=0.95, d_max=20.0)
    g = p.grid
    psi = uniform_on(g, 0, 13)
    zeta = uniform_counts([3, 4, 5], 10)
    rng = np.random.default_rng(10)
    rho = random_pmf(rng, g.size)

    def Pi(r):
        return stationary_distribution(build_transition_kernel(r, zeta, psi, p, LIN), method="direct").pi

    base = Pi(rho)
    ratios = []
    for eps in (1e-2, 1e-3, 1e-4):
        pert = np.clip(rho + eps * rng.uniform(-1, 1, g.size) * rho.max(), 0, None)
        pert /= pert.sum()
        ratios.append(np.max(np.abs(Pi(pert) - base)) / np.max(np.abs(pert - rho)))
    assert max(ratios) < 50.0


def test_config_checks():
    p = cluster()
    psi = uniform_on(p.grid, 0, 5)
    with pytest.raises(ValueError):
        MfeConfig(F_bound=1.0).check(psi, p)
    with pytest.raises(ValueError):
        MfeConfig(alpha=0.0).check(psi, p)
    with pytest.raises(ValueError):
        mfe_fixed_point(MfeConfig(), p, uniform_counts([3], 10), psi, LIN, init_rho=np.ones(3))


def test_meanfield_rho_round_trip():
    p = cluster()
    g = p.grid
    res = mfe_fixed_point(MfeConfig(alpha=1.0), p, uniform_counts([3, 4, 5], 10), uniform_on(g, 0, 5), LIN)
    MeanField(rho=res.rho / res.rho.sum(), zeta=uniform_counts([3, 4, 5], 10), psi=uniform_on(g, 0, 5))
