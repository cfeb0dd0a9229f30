"""OMA, NOMA and MC-NOMA reference schemes.

The three schemes are nested so that their ordering is testable:

* OMA gives every subcarrier (or time fraction of one) to a single user;
* NOMA puts every user on every subcarrier with a flat power level and a
  fixed SIC order (strongest aggregate channel decoded first);
* MC-NOMA keeps that order but lets each user shape its power across
  subcarriers.
"""

import enum
import math

import numpy as np
from scipy.optimize import brentq, minimize

from .capacity import (
    LN2,
    Allocation,
    covariance,
    noise_only_waterfill,
    sic_rates,
    single_user_rate,
    subset_capacity,
    waterfill_power,
    waterfill_rate,
)
from .errors import DomainError, InfeasibleError
from .scenario import require_valid


class SchemeId(enum.Enum):
    OMA = "oma"
    NOMA = "noma"
    MC_NOMA = "mcnoma"

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        key = str(text).lower().replace("-", "").replace("_", "")
        for s in cls:
            if s.value == key:
                return s
        raise DomainError(f"unknown scheme {text!r}")


def heuristic_order(H):
    """Descending aggregate channel norm ||h_u|| (strongest decoded first), ties by index."""
    norms = np.sqrt((np.abs(H) ** 2).sum(axis=(1, 2)))
    return tuple(int(u) for u in np.lexsort((np.arange(len(norms)), -norms)))


def _check_targets(H, b):
    power = (np.abs(H) ** 2).sum(axis=(1, 2))
    dead = np.flatnonzero((power == 0.0) & (b > 0))
    if dead.size:
        raise InfeasibleError(f"users {dead.tolist()} have an all-zero channel but a positive target")


def _gains_against(H, p, u, later, sigma2):
    """Effective SNR gain per subcarrier for user u with ``later`` users as noise."""
    K = covariance(H, p, later, sigma2)
    x = np.linalg.solve(K, H[u][..., None])[..., 0]
    return np.real(np.einsum("nl,nl->n", H[u].conj(), x)) / sigma2


def sequential_waterfill(H, b, order, sigma2):
    """Decode order fixed; from the last-decoded user backwards, each user
    water-fills the minimum energy for its target against noise plus the
    users decoded after it."""
    U, N, _ = H.shape
    p = np.zeros((U, N))
    for k in range(U - 1, -1, -1):
        u = order[k]
        if b[u] > 0:
            g = _gains_against(H, p, u, order[k + 1 :], sigma2)
            p[u] = waterfill_rate(g, b[u])
    return p


# -- OMA resource assignment ------------------------------------------------------


def oma_assignment(H, users, needs=None):
    """Exclusive subcarrier ownership for ``users``.

    Returns ``fractions`` of shape (U, N): the share of subcarrier n's time
    owned by user u. With at least as many subcarriers as users, each
    subcarrier goes to one user: (user, subcarrier) pairs are visited by
    descending |h|^2 and a subcarrier is taken if it is free and the user is
    below its quota (N // A, plus one for the A largest needs). With fewer
    subcarriers, users are placed round-robin and share a subcarrier in
    equal time fractions.
    """
    U, N, _ = H.shape
    users = list(users)
    frac = np.zeros((U, N))
    A = len(users)
    if A == 0:
        return frac
    if N < A:
        slots = [[] for _ in range(N)]
        for i, u in enumerate(users):
            slots[i % N].append(u)
        for n, owners in enumerate(slots):
            for u in owners:
                frac[u, n] = 1.0 / len(owners)
        return frac
    needs = np.zeros(U) if needs is None else np.asarray(needs, dtype=float)
    quota = {u: N // A for u in users}
    by_need = sorted(users, key=lambda u: (-needs[u], u))
    for u in by_need[: N % A]:
        quota[u] += 1
    energy = (np.abs(H) ** 2).sum(axis=2)
    pairs = sorted(((energy[u, n], u, n) for u in users for n in range(N)), key=lambda t: (-t[0], t[1], t[2]))
    taken = np.zeros(N, dtype=bool)
    for _, u, n in pairs:
        if not taken[n] and quota[u] > 0:
            frac[u, n] = 1.0
            taken[n] = True
            quota[u] -= 1
    return frac


def _oma_gains(H, sigma2):
    return (np.abs(H) ** 2).sum(axis=2) / sigma2


# -- energy mode --------------------------------------------------------------------


def _flat_level(g, bits):
    """Flat power p with sum_n log2(1 + p g_n) = bits."""
    if bits <= 0:
        return 0.0
    if not np.any(g > 0):
        raise InfeasibleError("positive target on an all-zero channel")
    f = lambda p: float(np.log2(1.0 + p * g).sum()) - bits
    hi = 1.0 / g.max()
    while f(hi) < 0:
        hi *= 2.0
    return brentq(f, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def noma_flat_powers(H, b, order, sigma2):
    U, N, _ = H.shape
    p = np.zeros((U, N))
    for k in range(U - 1, -1, -1):
        u = order[k]
        g = _gains_against(H, p, u, order[k + 1 :], sigma2)
        p[u] = _flat_level(g, b[u])
    return p


def _repair(H, p, b, order, sigma2):
    """Scale users up (last-decoded first) until every SIC rate meets its target.

    Raising user k's power only adds interference for users decoded before
    it, which are visited afterwards.
    """
    p = p.copy()
    U = H.shape[0]
    for k in range(U - 1, -1, -1):
        u = order[k]
        if b[u] <= 0:
            continue
        g = _gains_against(H, p, u, order[k + 1 :], sigma2)
        rate = float(np.log2(1.0 + p[u] * g).sum())
        if rate >= b[u]:
            continue
        if not np.any(p[u] * g > 0):
            p[u] = waterfill_rate(g, b[u])
            continue
        f = lambda c: float(np.log2(1.0 + c * p[u] * g).sum()) - b[u]
        hi = 2.0
        while f(hi) < 0:
            hi *= 2.0
        c = brentq(f, 1.0, hi, rtol=4 * np.finfo(float).eps)
        p[u] = p[u] * c * (1 + 1e-13)
    return p


def _fixed_order_refine(H, b, theta, order, sigma2, p0):
    """Local minimization of theta.E under the SIC-rate constraints of ``order``."""
    U, N, L = H.shape
    G = H / math.sqrt(sigma2)
    scale = max(float(p0.mean()), 1e-300)
    pos = {u: k for k, u in enumerate(order)}
    active = [u for u in range(U) if b[u] > 0]

    def rank_grad(x, members):
        X = x.reshape(U, N) * scale
        if not members:
            return 0.0, np.zeros(U * N)
        mask = np.zeros(U)
        mask[list(members)] = 1.0
        K = np.einsum("u,un,unl,unk->nlk", mask, X, G, G.conj()) + np.eye(L)
        val = float(np.log2(np.real(np.linalg.det(K))).sum())
        Kinv = np.linalg.inv(K)
        d = np.real(np.einsum("unl,nlk,unk->un", G.conj(), Kinv, G)) * mask[:, None] / LN2
        return val, (d * scale).ravel()

    def con(x):
        out = []
        for u in active:
            k = pos[u]
            a, _ = rank_grad(x, order[k:])
            c, _ = rank_grad(x, order[k + 1 :])
            out.append(a - c - b[u])
        return np.array(out)

    def con_jac(x):
        rows = []
        for u in active:
            k = pos[u]
            _, ga = rank_grad(x, order[k:])
            _, gc = rank_grad(x, order[k + 1 :])
            rows.append(ga - gc)
        return np.array(rows)

    c = np.repeat(theta, N) * scale
    res = minimize(
        lambda x: float(c @ x),
        p0.ravel() / scale,
        jac=lambda x: c,
        bounds=[(0.0, None)] * (U * N),
        constraints=[{"type": "ineq", "fun": con, "jac": con_jac}],
        method="SLSQP",
        options={"maxiter": 60, "ftol": 1e-12},
    )
    return np.maximum(res.x.reshape(U, N) * scale, 0.0)


def baseline_energy(scheme, H, b, theta, sigma2):
    """Minimum-energy allocation of ``scheme`` meeting targets ``b``."""
    scheme = SchemeId.parse(scheme)
    H = np.asarray(H, dtype=np.complex128)
    b = np.asarray(b, dtype=float)
    theta = np.asarray(theta, dtype=float)
    U, N, _ = H.shape
    _check_targets(H, b)

    if scheme is SchemeId.OMA:
        users = [u for u in range(U) if b[u] > 0]
        frac = oma_assignment(H, users, needs=b)
        g = _oma_gains(H, sigma2)
        level = np.zeros((U, N))
        rates = np.zeros(U)
        for u in users:
            own = frac[u] > 0
            if not np.any(g[u][own] > 0):
                raise InfeasibleError(f"user {u} owns no subcarrier with a usable channel")
            level[u, own] = waterfill_rate(g[u][own], b[u], frac[u][own])
            rates[u] = single_user_rate(g[u], level[u], frac[u])
        return Allocation(frac * level, rates, order=None, info={"fractions": frac, "active_power": level})

    order = heuristic_order(H)
    flat = noma_flat_powers(H, b, order, sigma2)
    if scheme is SchemeId.NOMA:
        return Allocation(flat, sic_rates(H, flat, order, sigma2), order=order)

    seq = _repair(H, sequential_waterfill(H, b, order, sigma2), b, order, sigma2)
    starts = sorted([flat, seq], key=lambda p: float(theta @ p.sum(axis=1)))
    candidates = [flat, seq]
    try:
        refined = _fixed_order_refine(H, b, theta, order, sigma2, starts[0])
        candidates.append(_repair(H, refined, b, order, sigma2))
    except (ValueError, np.linalg.LinAlgError):
        pass
    best = min(candidates, key=lambda p: float(theta @ p.sum(axis=1)))
    return Allocation(best, sic_rates(H, best, order, sigma2), order=order)


def baseline_min_energy(scheme, scenario, H):
    require_valid(scenario)
    return baseline_energy(scheme, H, scenario.targets, scenario.weights, scenario.noise_power_mw)


# -- rate mode ------------------------------------------------------------------------


def baseline_sumrate(scheme, H, budgets, sigma2):
    """Sum-rate allocation of ``scheme`` at per-user power budgets; returns (Allocation, sum_rate)."""
    scheme = SchemeId.parse(scheme)
    H = np.asarray(H, dtype=np.complex128)
    budgets = np.asarray(budgets, dtype=float)
    U, N, _ = H.shape
    if budgets.shape != (U,) or np.any(budgets < 0):
        raise DomainError("budgets must be a non-negative vector of length U")

    if scheme is SchemeId.OMA:
        users = [u for u in range(U) if budgets[u] > 0]
        frac = oma_assignment(H, users)
        g = _oma_gains(H, sigma2)
        level = np.zeros((U, N))
        rates = np.zeros(U)
        starved = []
        for u in users:
            own = frac[u] > 0
            if not np.any(own):
                starved.append(u)
                continue
            # Budget is an average power: sum_n frac * level = budget.
            level[u, own] = waterfill_power(g[u][own], budgets[u], frac[u][own])
            rates[u] = single_user_rate(g[u], level[u], frac[u])
        alloc = Allocation(frac * level, rates, info={"fractions": frac, "active_power": level, "starved": starved})
        return alloc, float(rates.sum())

    order = heuristic_order(H)
    if scheme is SchemeId.NOMA:
        p = np.repeat((budgets / N)[:, None], N, axis=1)
    else:
        p = noise_only_waterfill(H, budgets, sigma2)
    total = subset_capacity(H, p, range(U), sigma2)
    return Allocation(p, sic_rates(H, p, order, sigma2), order=order), total


def baseline_max_sumrate(scheme, scenario, H, budgets=None):
    require_valid(scenario)
    if budgets is None:
        budgets = np.full(scenario.num_users, scenario.max_power_mw)
    return baseline_sumrate(scheme, H, budgets, scenario.noise_power_mw)
