import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from macopt.capacity import (
    Allocation,
    gdfe_synthesize,
    iwf_max_sumrate,
    logdet2,
    sic_rates,
    subset_capacity,
    waterfill_power,
    waterfill_rate,
)
from macopt.errors import DomainError

from conftest import random_channel, scalar_channel


def eye_channel():
    # Two users on orthogonal antennas, one subcarrier.
    return np.array([[[1.0, 0.0]], [[0.0, 1.0]]], dtype=complex)


# -- examples -----------------------------------------------------------------------


def test_single_user_rate():
    assert sic_rates(scalar_channel([[1.0]]), [[3.0]], (0,), 1.0) == pytest.approx([2.0], abs=1e-12)


def test_two_scalar_users():
    r = sic_rates(scalar_channel([[1.0], [1.0]]), [[1.0], [1.0]], (0, 1), 1.0)
    assert r == pytest.approx([math.log2(1.5), 1.0], abs=1e-12)


@pytest.mark.parametrize("order", [(0, 1), (1, 0)])
def test_orthogonal_users(order):
    assert sic_rates(eye_channel(), np.ones((2, 1)), order, 1.0) == pytest.approx([1.0, 1.0], abs=1e-12)


def test_subset_capacity_examples():
    H = scalar_channel([[1.0], [1.0]])
    p = np.ones((2, 1))
    assert subset_capacity(H, p, [], 1.0) == 0.0
    assert subset_capacity(H, p, [0, 1], 1.0) == pytest.approx(math.log2(3), abs=1e-12)
    assert subset_capacity(eye_channel(), p, [0, 1], 1.0) == pytest.approx(2.0, abs=1e-12)


def test_gdfe_orthogonal():
    f = gdfe_synthesize(eye_channel(), np.ones((2, 1)), (0, 1), 1.0)
    assert np.all(f.feedback == 0)
    assert f.unbiased_sinr[:, 0] == pytest.approx([1.0, 1.0], abs=1e-12)


def test_gdfe_single_user():
    f = gdfe_synthesize(scalar_channel([[1.0]]), [[3.0]], (0,), 1.0)
    assert f.unbiased_sinr[0, 0] == pytest.approx(3.0, rel=1e-12)
    assert f.rates() == pytest.approx([2.0], abs=1e-12)


def test_gdfe_rejects_zero_noise():
    with pytest.raises(DomainError):
        gdfe_synthesize(eye_channel(), np.ones((2, 1)), (0, 1), 0.0)


def test_gdfe_matches_sic_random(rng):
    H = random_channel(rng, 3, 4, 2)
    p = rng.uniform(0, 2, (3, 4))
    f = gdfe_synthesize(H, p, (2, 0, 1), 1.0)
    np.testing.assert_allclose(f.rates(), sic_rates(H, p, (2, 0, 1), 1.0), atol=1e-8)


def test_gdfe_feedback_strictly_lower(rng):
    H = random_channel(rng, 4, 3, 2)
    f = gdfe_synthesize(H, rng.uniform(0, 1, (4, 3)), (3, 1, 0, 2), 0.5)
    for n in range(3):
        assert np.all(np.triu(f.feedback[n]) == 0)
    assert np.all(np.isfinite(f.unbiased_sinr)) and np.all(f.unbiased_sinr >= 0)


def test_dimension_and_sign_errors():
    H = scalar_channel([[1.0], [1.0]])
    with pytest.raises(DomainError):
        sic_rates(H, np.ones((3, 1)), (0, 1), 1.0)
    with pytest.raises(DomainError):
        sic_rates(H, [[-1.0], [1.0]], (0, 1), 1.0)
    with pytest.raises(DomainError):
        sic_rates(H, np.ones((2, 1)), (0, 0), 1.0)


def test_logdet_high_snr_no_overflow():
    # 50 dB on 8 antennas with many users: a direct determinant would be huge but finite;
    # the log-det path must agree with slogdet.
    rng = np.random.default_rng(0)
    A = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    K = np.eye(8) + 1e5 * A @ A.conj().T
    assert logdet2(K) == pytest.approx(np.linalg.slogdet(K)[1] / math.log(2), rel=1e-12)


def test_logdet_marginally_indefinite():
    v = np.array([1.0, 1.0 + 1e-17])
    K = np.outer(v, v) * 1e20 - np.diag([0, 1e-3])
    assert np.isfinite(logdet2(K + np.eye(2)))


# -- water-filling and IWF -----------------------------------------------------------


def test_waterfill_levels():
    assert waterfill_power(np.array([1.0, 1 / 3]), 2.0) == pytest.approx([2.0, 0.0], abs=1e-12)
    assert waterfill_power(np.array([1.0, 1.0]), 2.0) == pytest.approx([1.0, 1.0], abs=1e-12)


@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=8), st.floats(0.01, 50))
def test_waterfill_rate_inverts_power(gains, bits):
    g = np.array(gains)
    p = waterfill_rate(g, bits)
    assert np.log2(1 + p * g).sum() == pytest.approx(bits, rel=1e-9)
    assert waterfill_power(g, p.sum()) == pytest.approx(p, rel=1e-7, abs=1e-9)


def test_iwf_single_user_examples():
    alloc, rate = iwf_max_sumrate(scalar_channel([[1.0, 1 / 3]]), [2.0], 1.0)
    assert alloc.p[0] == pytest.approx([2.0, 0.0], abs=1e-12)
    assert rate == pytest.approx(math.log2(3), abs=1e-12)
    alloc, rate = iwf_max_sumrate(scalar_channel([[1.0, 1.0]]), [2.0], 1.0)
    assert alloc.p[0] == pytest.approx([1.0, 1.0], abs=1e-12)
    assert rate == pytest.approx(2.0, abs=1e-12)


def test_iwf_two_scalar_users():
    _, rate = iwf_max_sumrate(scalar_channel([[1.0], [1.0]]), [1.0, 1.0], 1.0)
    assert rate == pytest.approx(math.log2(3), abs=1e-12)


def test_iwf_budgets_and_history(rng):
    H = random_channel(rng, 3, 8, 2)
    budgets = np.array([0.5, 1.0, 2.0])
    alloc, rate = iwf_max_sumrate(H, budgets, 0.1)
    assert alloc.converged
    np.testing.assert_allclose(alloc.energy, budgets, atol=1e-9)
    assert rate == pytest.approx(subset_capacity(H, alloc.p, range(3), 0.1), abs=1e-12)
    hist = np.array(alloc.info["history"])
    assert np.all(np.diff(hist) >= -1e-12)


def test_iwf_beats_random_feasible_points(rng):
    # Independent check of optimality: no random point on the budget simplex does better.
    H = random_channel(rng, 2, 3, 1)
    budgets = np.array([1.0, 2.0])
    _, best = iwf_max_sumrate(H, budgets, 1.0)
    for _ in range(300):
        p = rng.dirichlet(np.ones(3), size=2) * budgets[:, None]
        assert subset_capacity(H, p, [0, 1], 1.0) <= best + 1e-9


def test_allocation_energy():
    a = Allocation(p=[[1.0, 2.0], [0.5, 0.0]], rates=[1.0, 2.0])
    assert a.energy == pytest.approx([3.0, 0.5])
    assert a.total_energy == 3.5
    assert a.weighted_energy([2.0, 1.0]) == 6.5


# -- properties ---------------------------------------------------------------------

instances = st.tuples(
    st.integers(1, 4), st.integers(1, 4), st.integers(1, 8), st.integers(0, 2**32 - 1)
)


def build(params):
    U, L, N, seed = params
    rng = np.random.default_rng(seed)
    H = random_channel(rng, U, N, L)
    p = rng.uniform(0, 3, (U, N)) * (rng.uniform(size=(U, N)) > 0.2)
    order = tuple(int(u) for u in rng.permutation(U))
    return H, p, order, rng


@settings(max_examples=100, deadline=None)
@given(instances)
def test_chain_rule(params):
    H, p, order, _ = build(params)
    total = subset_capacity(H, p, range(H.shape[0]), 0.7)
    assert sic_rates(H, p, order, 0.7).sum() == pytest.approx(total, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(instances)
def test_vertex_of_polymatroid(params):
    H, p, order, _ = build(params)
    U = H.shape[0]
    r = sic_rates(H, p, order, 1.0)
    for k in range(1, U + 1):
        for S in itertools.combinations(range(U), k):
            assert r[list(S)].sum() <= subset_capacity(H, p, S, 1.0) + 1e-9
    for k in range(U):
        tail = order[k:]
        assert r[list(tail)].sum() == pytest.approx(subset_capacity(H, p, tail, 1.0), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(instances, st.floats(0.0, 5.0))
def test_monotone_in_power(params, bump):
    H, p, _, rng = build(params)
    U, N, _ = H.shape
    u, n = int(rng.integers(U)), int(rng.integers(N))
    q = p.copy()
    q[u, n] += bump
    S = [v for v in range(U) if v == u or rng.uniform() < 0.5]
    assert subset_capacity(H, q, S, 1.0) >= subset_capacity(H, p, S, 1.0) - 1e-12


@pytest.mark.parametrize("seed", range(100))
def test_gdfe_sic_equivalence(seed):
    rng = np.random.default_rng(1000 + seed)
    U, L, N = rng.integers(1, 5), rng.integers(1, 5), rng.integers(1, 9)
    H = random_channel(rng, U, N, L)
    p = rng.uniform(0, 2, (U, N))
    order = tuple(int(u) for u in rng.permutation(U))
    f = gdfe_synthesize(H, p, order, 0.3)
    np.testing.assert_allclose(f.rates(), sic_rates(H, p, order, 0.3), atol=1e-8)
