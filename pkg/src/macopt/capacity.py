"""Gaussian MAC rate computations.

Channel slices are arrays ``H`` of shape ``(U, N, L)`` (user, subcarrier,
AP antenna) and powers ``p`` have shape ``(U, N)`` in mW. All rates are
bits per subcarrier-use summed over subcarriers.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError

LN2 = np.log(2.0)


@dataclass
class Allocation:
    """Powers ``p[u, n]`` (mW) and the rates they achieve."""

    p: np.ndarray
    rates: np.ndarray
    order: tuple = None
    converged: bool = True
    iterations: int = 0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.rates = np.asarray(self.rates, dtype=float)

    @property
    def energy(self):
        """Per-user energy E_u = sum_n p[u, n]."""
        return self.p.sum(axis=1)

    @property
    def total_energy(self):
        return float(self.p.sum())

    def weighted_energy(self, theta):
        return float(np.dot(theta, self.energy))

    @property
    def sum_rate(self):
        return float(self.rates.sum())


@dataclass
class GdfeFilters:
    """MMSE-SIC receiver for one decoding order.

    ``feedforward[n, u]`` is user u's length-L MMSE vector on subcarrier n.
    ``feedback[n, k, j]`` (decoding positions, ``j < k``) is the coefficient
    with which the already-decided symbol of position j is cancelled before
    position k is sliced; the matrix is strictly lower triangular.
    """

    order: tuple
    feedforward: np.ndarray
    feedback: np.ndarray
    unbiased_sinr: np.ndarray

    def rates(self):
        return np.log2(1.0 + self.unbiased_sinr).sum(axis=1)


def check_inputs(H, p, sigma2):
    H = np.asarray(H, dtype=np.complex128)
    p = np.asarray(p, dtype=float)
    if H.ndim != 3:
        raise DomainError(f"H must have shape (U, N, L), got {H.shape}")
    if p.shape != H.shape[:2]:
        raise DomainError(f"power shape {p.shape} does not match channel {H.shape[:2]}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise DomainError("powers must be finite and non-negative")
    if not np.isfinite(sigma2) or sigma2 <= 0:
        raise DomainError("noise power must be positive")
    return H, p


def check_order(order, U):
    order = tuple(int(u) for u in order)
    if sorted(order) != list(range(U)):
        raise DomainError(f"{order} is not a permutation of range({U})")
    return order


def logdet2(K):
    """log2 det of a stack of Hermitian positive-definite matrices (..., L, L).

    Cholesky based; a stack that fails factorization is retried with a
    jitter of 1e-12 * trace on the diagonal.
    """
    try:
        C = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        tr = np.real(np.trace(K, axis1=-2, axis2=-1))
        eye = np.eye(K.shape[-1])
        C = np.linalg.cholesky(K + (1e-12 * tr)[..., None, None] * eye)
    d = np.real(np.diagonal(C, axis1=-2, axis2=-1))
    return 2.0 * np.log2(d).sum(axis=-1)


def covariance(H, p, members, sigma2):
    """I + sigma^-2 sum_{u in members} p[u, n] h h^H for every subcarrier, shape (N, L, L)."""
    U, N, L = H.shape
    w = np.zeros(U)
    w[list(members)] = 1.0
    q = (w[:, None] * p) / sigma2
    K = np.einsum("un,unl,unk->nlk", q, H, H.conj())
    K += np.eye(L)
    return K


def subset_capacity(H, p, subset, sigma2):
    """Polymatroid rank function f(S) = sum_n log2 det(I + sigma^-2 sum_S p h h^H)."""
    H, p = check_inputs(H, p, sigma2)
    subset = list(subset)
    if not subset:
        return 0.0
    return float(logdet2(covariance(H, p, subset, sigma2)).sum())


def sic_rates(H, p, order, sigma2):
    """Per-user SIC rates for decoding order ``order`` (``order[0]`` decoded first).

    The user decoded k-th sees the users decoded after it as noise, so its
    rate is the log-det difference of the nested sets {order[k:]} and
    {order[k+1:]}.
    """
    H, p = check_inputs(H, p, sigma2)
    U = H.shape[0]
    order = check_order(order, U)
    rates = np.zeros(U)
    upper = logdet2(covariance(H, p, order, sigma2)).sum()
    for k, u in enumerate(order):
        lower = logdet2(covariance(H, p, order[k + 1 :], sigma2)).sum() if k + 1 < U else 0.0
        rates[u] = upper - lower
        upper = lower
    return rates


def gdfe_synthesize(H, p, order, sigma2):
    """MMSE-SIC (GDFE) filters and unbiased SINRs for ``order``.

    Position k uses the MMSE vector ``w = (I*sigma2 + sum_{j>=k} p h h^H)^-1 sqrt(p) h``
    of its own user, i.e. users decoded later are treated as noise and users
    decoded earlier have been cancelled through the feedback taps.
    """
    if not np.isfinite(sigma2) or sigma2 <= 0:
        raise DomainError("GDFE needs a non-singular noise covariance (sigma2 > 0)")
    H, p = check_inputs(H, p, sigma2)
    U, N, L = H.shape
    order = check_order(order, U)
    ff = np.zeros((N, U, L), dtype=np.complex128)
    fb = np.zeros((N, U, U), dtype=np.complex128)
    sinr = np.zeros((U, N))
    amp = np.sqrt(p)
    for n in range(N):
        R = sigma2 * np.eye(L, dtype=np.complex128)
        for u in order:
            R += p[u, n] * np.outer(H[u, n], H[u, n].conj())
        for k, u in enumerate(order):
            hu = amp[u, n] * H[u, n]
            w = np.linalg.solve(R, hu)
            a = float(np.real(np.vdot(w, hu)))
            mse = 1.0 - a
            ff[n, u] = w
            sinr[u, n] = a / mse if a > 0 else 0.0
            gain = a if a > 0 else 1.0
            for j in range(k):
                v = order[j]
                fb[n, k, j] = np.vdot(w, amp[v, n] * H[v, n]) / gain
            R -= p[u, n] * np.outer(H[u, n], H[u, n].conj())
    return GdfeFilters(order=order, feedforward=ff, feedback=fb, unbiased_sinr=sinr)


# -- water-filling ------------------------------------------------------------


def _waterfill_level(inv, weights, budget):
    # Smallest active set is found by sorting the "floors" 1/g ascending.
    idx = np.argsort(inv, kind="stable")
    inv_s, w_s = inv[idx], weights[idx]
    cw = np.cumsum(w_s)
    cwi = np.cumsum(w_s * inv_s)
    level = inv_s[0]
    for k in range(len(inv_s)):
        level = (budget + cwi[k]) / cw[k]
        if k + 1 == len(inv_s) or level <= inv_s[k + 1]:
            break
    return level


def waterfill_power(gains, budget, weights=None):
    """Maximize sum w log(1 + p g) subject to sum w p = budget, p >= 0.

    ``gains`` are SNR gains per unit power; ``weights`` are time fractions
    (default 1). Entries with zero gain receive no power unless every gain
    is zero, in which case the budget is spread evenly.
    """
    g = np.asarray(gains, dtype=float)
    w = np.ones_like(g) if weights is None else np.asarray(weights, dtype=float)
    p = np.zeros_like(g)
    if budget <= 0 or g.size == 0:
        return p
    live = (g > 0) & (w > 0)
    if not np.any(live):
        usable = w > 0
        p[usable] = budget / w[usable].sum()
        return p
    inv = 1.0 / g[live]
    level = _waterfill_level(inv, w[live], budget)
    p[live] = np.maximum(level - inv, 0.0)
    # Put the rounding residue on the largest allocation so the budget is exact.
    k = np.argmax(p * w)
    p[k] += (budget - np.dot(w, p)) / w[k]
    return p


def waterfill_rate(gains, bits, weights=None):
    """Minimum-energy powers with sum w log2(1 + p g) = bits."""
    g = np.asarray(gains, dtype=float)
    w = np.ones_like(g) if weights is None else np.asarray(weights, dtype=float)
    p = np.zeros_like(g)
    if bits <= 0:
        return p
    live = np.flatnonzero((g > 0) & (w > 0))
    if live.size == 0:
        raise DomainError("positive rate requested on an all-zero channel")
    order = live[np.argsort(-g[live], kind="stable")]
    level = None
    for k in range(1, len(order) + 1):
        act = order[:k]
        log_level = (bits - np.dot(w[act], np.log2(g[act]))) / w[act].sum()
        level = 2.0**log_level
        if k == len(order) or level <= 1.0 / g[order[k]]:
            break
    p[act] = np.maximum(level - 1.0 / g[act], 0.0)
    return p


def single_user_rate(gains, p, weights=None):
    w = np.ones_like(gains) if weights is None else weights
    return float(np.dot(w, np.log2(1.0 + p * gains)))


# -- iterative water-filling ----------------------------------------------------


def effective_gains(H, p, u, sigma2):
    """h^H K^-1 h / sigma2 per subcarrier, K = I + sigma^-2 * (interference of all v != u)."""
    U = H.shape[0]
    K = covariance(H, p, [v for v in range(U) if v != u], sigma2)
    x = np.linalg.solve(K, H[u][..., None])[..., 0]
    return np.real(np.einsum("nl,nl->n", H[u].conj(), x)) / sigma2


def noise_only_waterfill(H, budgets, sigma2):
    """Every user water-fills its own budget against noise alone."""
    g = (np.abs(H) ** 2).sum(axis=2) / sigma2
    return np.stack([waterfill_power(g[u], budgets[u]) for u in range(H.shape[0])])


def iwf_max_sumrate(H, budgets, sigma2, tol=1e-10, max_iters=500, p0=None):
    """Cyclic iterative water-filling for the MAC sum capacity.

    Returns ``(Allocation, sum_rate)``. The allocation's ``converged`` flag
    is False when ``max_iters`` full cycles ran without the sum-rate
    improvement dropping below ``tol``; ``info["history"]`` holds the sum
    rate after every cycle.
    """
    H = np.asarray(H, dtype=np.complex128)
    budgets = np.asarray(budgets, dtype=float)
    U, N, L = H.shape
    if budgets.shape != (U,) or np.any(budgets < 0):
        raise DomainError("budgets must be a non-negative vector of length U")
    p = noise_only_waterfill(H, budgets, sigma2) if p0 is None else np.array(p0, dtype=float)
    everyone = range(U)
    current = subset_capacity(H, p, everyone, sigma2)
    history = [current]
    def cycle(start, damping):
        q = start.copy()
        for u in range(U):
            target = waterfill_power(effective_gains(H, q, u, sigma2), budgets[u])
            q[u] = q[u] + damping * (target - q[u])
        return q, subset_capacity(H, q, everyone, sigma2)

    damping = 1.0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        trial, value = cycle(p, damping)
        if damping == 1.0 and value < current - 1e-12 * max(1.0, abs(current)):
            damping = 0.5
            trial, value = cycle(p, damping)
        improvement = value - current
        p, current = trial, value
        history.append(current)
        if improvement < tol:
            converged = True
            break
    if not np.all(np.isfinite(p)):
        raise ConvergenceError("iterative water-filling produced non-finite powers")
    rates = sic_rates(H, p, tuple(range(U)), sigma2)
    alloc = Allocation(p, rates, order=tuple(range(U)), converged=converged, iterations=it,
                       info={"history": history, "damping": damping})
    return alloc, current
