import io
import itertools
import math

import numpy as np
import pytest
from scipy.optimize import minimize

from macopt.capacity import sic_rates, subset_capacity
from macopt.errors import ContractError, InfeasibleError, SizeError
from macopt.minpmac import (
    LN2,
    dual_solve,
    dump_solution,
    gap_target,
    inner_lagrangian_opt,
    min_pmac,
    oracle_energy,
    oracle_min_energy,
    solve_min_energy,
    tie_clusters,
    tie_orders,
    timeshare_lp,
)

from conftest import random_channel, scalar_channel, unit_noise_scenario


# -- inner problem -------------------------------------------------------------------


def test_inner_scalar_kkt():
    a = inner_lagrangian_opt(scalar_channel([[1.0]]), [2 * LN2], [1.0], (0,), 1.0)
    assert a.p[0, 0] == pytest.approx(1.0, abs=1e-9)


def test_inner_scalar_boundary():
    a = inner_lagrangian_opt(scalar_channel([[1.0]]), [LN2], [1.0], (0,), 1.0)
    assert a.p[0, 0] == 0.0


def test_inner_two_users_against_grid():
    g, lam, theta = (1.0, 2.0), (2 * LN2, 2 * LN2), (1.0, 1.0)
    a = inner_lagrangian_opt(scalar_channel([[g[0]], [g[1]]]), lam, theta, (0, 1), 1.0)
    grid = np.linspace(0.0, 4.0, 801)
    P1, P2 = np.meshgrid(grid, grid, indexing="ij")
    F = 2 * LN2 * np.log2(1 + g[0] * P1 + g[1] * P2) - P1 - P2
    i, j = np.unravel_index(np.argmax(F), F.shape)
    assert a.p[:, 0] == pytest.approx([grid[i], grid[j]], abs=grid[1])
    assert a.info["phi"] >= F.max() - 1e-12
    # Closed form of the same point: p = (0, 1.5), value 2 ln2 * log2(4) - 1.5.
    assert a.p[:, 0] == pytest.approx([0.0, 1.5], abs=1e-9)
    assert a.info["phi"] == pytest.approx(4 * LN2 - 1.5, abs=1e-9)


def test_inner_stationarity(rng):
    H = random_channel(rng, 3, 5, 2)
    lam = np.array([0.5, 1.2, 3.0])
    theta = np.array([1.0, 0.7, 1.3])
    a = inner_lagrangian_opt(H, lam, theta, (0, 1, 2), 0.2)
    eps = 1e-6
    for u in range(3):
        for n in range(5):
            q = a.p.copy()
            q[u, n] += eps
            plus = lam @ sic_rates(H, q, (0, 1, 2), 0.2) - theta @ q.sum(axis=1)
            q[u, n] = max(a.p[u, n] - eps, 0.0)
            minus = lam @ sic_rates(H, q, (0, 1, 2), 0.2) - theta @ q.sum(axis=1)
            grad = (plus - minus) / (a.p[u, n] + eps - q[u, n])
            if a.p[u, n] > 1e-6:
                assert abs(grad) <= 1e-5
            else:
                assert grad <= 1e-5


def test_inner_contract():
    with pytest.raises(ContractError):
        inner_lagrangian_opt(scalar_channel([[1.0], [1.0]]), [2.0, 1.0], [1.0, 1.0], (0, 1), 1.0)


# -- dual -------------------------------------------------------------------------------


def test_dual_single_user():
    res = dual_solve(scalar_channel([[1.0]]), [2.0], [1.0], 1.0)
    assert res.converged
    # The stopping rule is on the energy gap; the price is only pinned to ~sqrt(gap).
    assert res.lambdas[0] == pytest.approx(4 * LN2, rel=1e-2)
    res = dual_solve(scalar_channel([[1.0]]), [2.0], [1.0], 1.0, gap_tol=1e-13)
    assert res.lambdas[0] == pytest.approx(4 * LN2, rel=1e-5)
    assert res.vertex_allocations[0].p[0, 0] == pytest.approx(3.0, rel=1e-5)


def test_dual_asymmetric_order():
    res = dual_solve(scalar_channel([[1.0], [4.0]]), [1.0, 1.0], [1.0, 1.0], 1.0)
    assert res.converged
    assert res.orders == [(1, 0)]
    assert res.lambdas[1] < res.lambdas[0]


def test_dual_symmetric_tie():
    res = dual_solve(scalar_channel([[1.0], [1.0]]), [1.0, 1.0], [1.0, 1.0], 1.0)
    assert len(tie_clusters(res.lambdas)) == 1
    assert sorted(res.orders) == [(0, 1), (1, 0)]


def test_dual_zero_channel_infeasible():
    with pytest.raises(InfeasibleError):
        dual_solve(scalar_channel([[1.0], [0.0]]), [1.0, 1.0], [1.0, 1.0], 1.0)


def test_weak_duality_along_history(rng):
    H = random_channel(rng, 3, 4, 2, scale=3.0)
    b, theta = np.array([2.0, 3.0, 1.5]), np.array([1.0, 2.0, 0.5])
    sol = solve_min_energy(H, b, theta, 1.0)
    res = dual_solve(H, b, theta, 1.0)
    assert len(res.history) > 10
    for _, value in res.history:
        assert value <= sol.total_weighted_energy + 1e-9


# -- ties and time-sharing -----------------------------------------------------------------


def test_tie_clusters_tolerance():
    assert tie_clusters(np.array([1.0, 1.0 + 1e-7, 2.0])) == [[0, 1], [2]]
    assert tie_clusters(np.array([1.0, 1.0 + 1e-4, 2.0])) == [[0], [1], [2]]


def test_tie_orders_cap():
    orders, sampled = tie_orders(np.zeros(8), cap=5040)
    assert sampled and len(orders) == 5040 and len(set(orders)) == 5040
    orders, sampled = tie_orders(np.zeros(7))
    assert not sampled and len(orders) == 5040


def test_timeshare_symmetric():
    hi, lo = math.log2(4) - math.log2(2.5), math.log2(2.5)
    w = timeshare_lp([((hi, lo), 3.0), ((lo, hi), 3.0)], [1.0, 1.0])
    assert w == pytest.approx([0.5, 0.5], abs=1e-9)


def test_timeshare_single_vertex():
    assert timeshare_lp([((2.0, 2.0), 1.0)], [1.0, 1.0]) == pytest.approx([1.0])
    with pytest.raises(InfeasibleError):
        timeshare_lp([((0.5, 2.0), 1.0)], [1.0, 1.0])


# -- end to end ----------------------------------------------------------------------------


def scen(U, N=1, targets=None, weights=None):
    return unit_noise_scenario(num_users=U, num_ap_antennas=1, num_subcarriers=N, rate_targets=targets,
                               energy_weights=weights)


def check_solution(sol, b):
    assert sol.weights.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(sol.weights >= 0)
    blended = sum(w * a.rates for w, a in zip(sol.weights, sol.vertex_allocations))
    np.testing.assert_allclose(sol.blended_rates, blended, atol=1e-9)
    assert np.all(sol.blended_rates >= np.asarray(b) - 1e-6)


def test_min_pmac_single_user():
    s = scen(1, targets=(2.0,))
    sol = min_pmac(s, scalar_channel([[1.0]]))
    assert sol.converged
    assert sol.total_weighted_energy == pytest.approx(3.0, rel=1e-6)
    assert len(sol.orders) == 1 and sol.weights == pytest.approx([1.0])
    check_solution(sol, [2.0])


def test_min_pmac_asymmetric():
    sol = min_pmac(scen(2, targets=(1.0, 1.0)), scalar_channel([[1.0], [4.0]]))
    assert sol.converged
    assert sol.total_weighted_energy == pytest.approx(1.5, rel=1e-6)
    assert sol.orders == [(1, 0)]
    assert sol.blended_power[:, 0] == pytest.approx([1.0, 0.5], rel=1e-5)


def test_min_pmac_time_sharing():
    sol = min_pmac(scen(2, targets=(1.0, 1.0)), scalar_channel([[1.0], [1.0]]))
    assert sol.converged
    assert sol.total_weighted_energy == pytest.approx(3.0, rel=1e-6)
    assert sorted(sol.orders) == [(0, 1), (1, 0)]
    assert sol.weights == pytest.approx([0.5, 0.5], abs=1e-6)
    assert sol.blended_power[:, 0] == pytest.approx([1.5, 1.5], rel=1e-5)
    check_solution(sol, [1.0, 1.0])


def test_min_pmac_invariants(rng):
    H = random_channel(rng, 3, 8, 2, scale=10.0)
    b = np.full(3, 16.7)
    theta = np.array([1.0, 2.0, 0.5])
    sol = solve_min_energy(H, b, theta, 1.0)
    assert sol.converged
    check_solution(sol, b)
    assert sol.duality_gap <= gap_target(sol.total_weighted_energy)
    assert sol.dual_value <= sol.total_weighted_energy + 1e-9
    e = sum(w * theta @ a.energy for w, a in zip(sol.weights, sol.vertex_allocations))
    assert sol.total_weighted_energy == pytest.approx(e, abs=1e-9)
    lam = sol.lambdas
    assert np.all(lam * (b - sol.blended_rates) <= 1e-5 * (1 + lam))


@pytest.mark.parametrize("seed", range(5))
def test_swapping_non_tied_users_never_helps(seed):
    rng = np.random.default_rng(500 + seed)
    H = random_channel(rng, 3, 2, 1, scale=2.0)
    b, theta = rng.uniform(0.5, 2.0, 3), np.ones(3)
    sol = solve_min_energy(H, b, theta, 1.0)
    lam = sol.lambdas
    opt = tuple(int(u) for u in np.argsort(lam, kind="stable"))
    best = inner_lagrangian_opt(H, lam, theta, opt, 1.0).info["phi"]
    clusters = tie_clusters(lam)
    cluster_of = {u: k for k, c in enumerate(clusters) for u in c}
    for i, j in itertools.combinations(range(3), 2):
        if cluster_of[opt[i]] == cluster_of[opt[j]]:
            continue
        swapped = list(opt)
        swapped[i], swapped[j] = swapped[j], swapped[i]

        def neg_phi(x):
            p = np.maximum(x.reshape(3, 2), 0.0)
            return -(lam @ sic_rates(H, p, swapped, 1.0) - theta @ p.sum(axis=1))

        # The swapped objective is not concave: take the best of several local searches.
        starts = [np.zeros(6), sol.blended_power.ravel()] + [rng.uniform(0, 3, 6) for _ in range(4)]
        worst = min(minimize(neg_phi, x0, bounds=[(0, None)] * 6).fun for x0 in starts)
        assert -worst <= best + 1e-7


def test_scaling_covariance(rng):
    H = random_channel(rng, 3, 4, 2, scale=3.0)
    b = np.array([2.0, 2.5, 1.0])
    theta = np.array([1.0, 1.5, 0.8])
    a = solve_min_energy(H, b, theta, 1.0)
    c = solve_min_energy(H, b, 3.0 * theta, 1.0)
    assert c.total_weighted_energy == pytest.approx(3.0 * a.total_weighted_energy, rel=1e-5)
    np.testing.assert_allclose(c.lambdas, 3.0 * a.lambdas, rtol=1e-2)
    scale = a.blended_power.max()
    np.testing.assert_allclose(c.blended_power, a.blended_power, atol=1e-3 * scale)


def test_power_cap_reported():
    sol = solve_min_energy(scalar_channel([[1.0]]), [10.0], [1.0], 1.0, p_max=50.0)
    assert sol.power_cap_violations == [0]


def test_dump_solution():
    sol = min_pmac(scen(2, targets=(1.0, 1.0)), scalar_channel([[1.0], [1.0]]))
    buf = io.StringIO()
    dump_solution(sol, buf)
    text = buf.getvalue()
    assert "lambdas" in text and "duality_gap" in text and text.count("vertex ") == 2


# -- oracle ----------------------------------------------------------------------------------


def test_oracle_single_user_closed_form():
    g = np.array([[0.5, 2.0]])
    sol = oracle_energy(scalar_channel(g), [3.0], [1.0], 1.0)
    # Water level mu with both subcarriers active: log2(mu*0.5) + log2(mu*2) = 3.
    mu = math.sqrt(8.0)
    assert sol.total_weighted_energy == pytest.approx(2 * mu - 1 / 0.5 - 1 / 2.0, rel=1e-12)


def test_oracle_enumerates_orders():
    sol = oracle_min_energy(scen(3, targets=(1.0, 1.0, 1.0)), scalar_channel([[1.0], [2.0], [3.0]]))
    assert len(sol.orders) == 6


def test_oracle_size_guard():
    with pytest.raises(SizeError):
        oracle_energy(scalar_channel(np.ones((5, 1))), np.ones(5), np.ones(5), 1.0)


@pytest.mark.parametrize("seed", range(100))
def test_agrees_with_oracle(seed):
    rng = np.random.default_rng(seed)
    U, L, N = rng.integers(1, 4), rng.integers(1, 3), rng.integers(1, 3)
    H = random_channel(rng, U, N, L, scale=rng.uniform(0.5, 3.0))
    b = rng.uniform(0.2, 3.0, U)
    theta = rng.uniform(0.5, 2.0, U)
    ours = solve_min_energy(H, b, theta, 1.0)
    ref = oracle_energy(H, b, theta, 1.0)
    assert ours.converged
    assert abs(ours.total_weighted_energy - ref.total_weighted_energy) <= 1e-4 * ref.total_weighted_energy
    assert np.all(ours.blended_rates >= b - 1e-6)
    for S in range(1, 2**U):
        members = [u for u in range(U) if S >> u & 1]
        assert ours.blended_rates[members].sum() <= subset_capacity(H, ours.blended_power, members, 1.0) + 1e-9 \
            or len(ours.orders) > 1
