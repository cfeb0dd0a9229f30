import math

import numpy as np
import pytest

from macopt.baselines import (
    SchemeId,
    baseline_energy,
    baseline_max_sumrate,
    baseline_min_energy,
    baseline_sumrate,
    heuristic_order,
    oma_assignment,
)
from macopt.capacity import iwf_max_sumrate, waterfill_power, waterfill_rate
from macopt.errors import DomainError, InfeasibleError
from macopt.minpmac import solve_min_energy

from conftest import random_channel, scalar_channel, unit_noise_scenario


def test_scheme_parse():
    assert SchemeId.parse("MC-NOMA") is SchemeId.MC_NOMA
    assert SchemeId.parse("oma") is SchemeId.OMA
    with pytest.raises(DomainError):
        SchemeId.parse("tdma")


def test_heuristic_order_strongest_first():
    assert heuristic_order(scalar_channel([[1.0], [4.0], [2.0]])) == (1, 2, 0)
    assert heuristic_order(scalar_channel([[1.0], [1.0]])) == (0, 1)


# -- energy mode examples ---------------------------------------------------------


def test_oma_energy_flat():
    s = unit_noise_scenario(num_users=2, num_ap_antennas=1, num_subcarriers=2, rate_targets=(1.0, 1.0))
    a = baseline_min_energy("oma", s, scalar_channel(np.ones((2, 2))))
    assert a.total_energy == pytest.approx(2.0, abs=1e-12)
    assert sorted(a.p.ravel().tolist()) == pytest.approx([0.0, 0.0, 1.0, 1.0])


def test_noma_energy_example():
    a = baseline_energy("noma", scalar_channel([[1.0], [4.0]]), [1.0, 1.0], [1.0, 1.0], 1.0)
    assert a.order == (1, 0)
    assert a.p[:, 0] == pytest.approx([1.0, 0.5], rel=1e-12)
    assert a.total_energy == pytest.approx(1.5, rel=1e-12)


def test_noma_power_is_flat(rng):
    H = random_channel(rng, 3, 6, 2)
    a = baseline_energy("noma", H, [2.0, 3.0, 1.0], np.ones(3), 1.0)
    assert np.allclose(a.p, a.p[:, :1])
    assert np.all(a.rates >= np.array([2.0, 3.0, 1.0]) - 1e-9)


def test_mcnoma_dominated_by_minpmac(rng):
    H = random_channel(rng, 2, 4, 1)
    b, theta = np.array([2.0, 3.0]), np.ones(2)
    mc = baseline_energy("mcnoma", H, b, theta, 1.0)
    best = solve_min_energy(H, b, theta, 1.0)
    assert np.all(mc.rates >= b - 1e-6)
    assert best.total_weighted_energy <= mc.weighted_energy(theta) + 1e-6


def test_oma_rates_are_single_user(rng):
    H = random_channel(rng, 3, 8, 2)
    a = baseline_energy("oma", H, [1.0, 2.0, 3.0], np.ones(3), 0.5)
    frac = a.info["fractions"]
    g = (np.abs(H) ** 2).sum(axis=2) / 0.5
    for u in range(3):
        own = frac[u] > 0
        direct = np.log2(1 + a.info["active_power"][u, own] * g[u, own]).sum()
        assert a.rates[u] == pytest.approx(direct, abs=1e-12)
        assert a.rates[u] == pytest.approx([1.0, 2.0, 3.0][u], abs=1e-9)
    assert np.all(frac.sum(axis=0) == 1.0)


def test_oma_fewer_subcarriers_than_users():
    H = scalar_channel(np.ones((3, 2)))
    frac = oma_assignment(H, [0, 1, 2])
    np.testing.assert_allclose(frac.sum(axis=0), 1.0)
    assert frac[0].tolist() == [0.5, 0.0] and frac[2].tolist() == [0.5, 0.0] and frac[1].tolist() == [0.0, 1.0]
    a = baseline_energy("oma", H, [1.0, 1.0, 1.0], np.ones(3), 1.0)
    assert np.all(a.rates >= 1.0 - 1e-9)


def test_zero_channel_infeasible():
    for scheme in SchemeId:
        with pytest.raises(InfeasibleError):
            baseline_energy(scheme, scalar_channel([[1.0], [0.0]]), [1.0, 1.0], [1.0, 1.0], 1.0)


@pytest.mark.parametrize("seed", range(15))
def test_energy_dominance_chain(seed):
    rng = np.random.default_rng(200 + seed)
    H = random_channel(rng, 3, 8, 2, scale=10.0)
    b, theta = np.full(3, 16.7), np.ones(3)
    best = solve_min_energy(H, b, theta, 1.0).total_weighted_energy
    e = {s: baseline_energy(s, H, b, theta, 1.0) for s in SchemeId}
    for a in e.values():
        assert np.all(a.rates >= b - 1e-6)
    assert best <= e[SchemeId.MC_NOMA].total_energy + 1e-6
    assert e[SchemeId.MC_NOMA].total_energy <= e[SchemeId.NOMA].total_energy + 1e-6


# -- rate mode --------------------------------------------------------------------


def test_noma_sumrate_example():
    _, r = baseline_sumrate("noma", scalar_channel([[1.0], [1.0]]), [1.0, 1.0], 1.0)
    assert r == pytest.approx(math.log2(3), abs=1e-12)


def test_oma_sumrate_example():
    s = unit_noise_scenario(num_users=2, num_ap_antennas=1, num_subcarriers=2)
    a, r = baseline_max_sumrate("oma", s, scalar_channel(np.ones((2, 2))), budgets=[1.0, 1.0])
    assert r == pytest.approx(2.0, abs=1e-12)


def test_budgets_exhausted(rng):
    H = random_channel(rng, 3, 8, 2)
    P = np.array([0.3, 1.0, 2.0])
    for s in SchemeId:
        a, _ = baseline_sumrate(s, H, P, 0.1)
        np.testing.assert_allclose(a.energy, P, atol=1e-9)


def test_oma_starved_users_reported():
    a, _ = baseline_sumrate("oma", scalar_channel(np.ones((3, 2))), [1.0, 1.0, 1.0], 1.0)
    assert a.info["starved"] == []
    frac = a.info["fractions"]
    np.testing.assert_allclose(a.energy, [1.0, 1.0, 1.0])
    assert np.all(frac.sum(axis=0) == 1.0)


@pytest.mark.parametrize("seed", range(20))
def test_rate_dominance(seed):
    rng = np.random.default_rng(300 + seed)
    H = random_channel(rng, 3, 8, 2)
    P = np.full(3, 0.5)
    _, best = iwf_max_sumrate(H, P, 0.05)
    for s in SchemeId:
        _, r = baseline_sumrate(s, H, P, 0.05)
        assert r <= best + 1e-9


def test_mcnoma_beats_noma_on_average():
    rng = np.random.default_rng(99)
    mc, flat = [], []
    for _ in range(100):
        H = random_channel(rng, 3, 8, 2)
        mc.append(baseline_sumrate("mcnoma", H, np.ones(3), 0.1)[1])
        flat.append(baseline_sumrate("noma", H, np.ones(3), 0.1)[1])
    assert np.mean(mc) >= np.mean(flat)


def test_oma_waterfill_matches_closed_form():
    g = np.array([3.0, 1.0])
    p = waterfill_rate(g, 2.0)
    assert waterfill_power(g, p.sum()) == pytest.approx(p)
