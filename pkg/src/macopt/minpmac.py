"""Minimum weighted-energy allocation over the Gaussian MAC (minPMAC).

Problem: minimize sum_u theta_u E_u subject to user u receiving at least
b_u bits, where rates range over the MAC capacity region (all decoding
orders, time-shared). The solver works on the Lagrange dual in the rate
prices lambda:

* for fixed lambda the best decoding order sorts users by ascending lambda
  (the largest price is decoded last, free of interference), and the inner
  power problem is concave and separates per subcarrier;
* the dual is maximized with an ellipsoid method, which also certifies the
  duality gap;
* users whose prices tie are decoded in every relative order and the
  resulting vertices are mixed by a small time-sharing LP.

A log-barrier solve of the primal (rank-function constraints
``f_p(S) >= b(S)`` for every user subset) supplies the primal iterate used
for the certificate, a warm start for the dual and the power allocation
shared by tied vertices.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .capacity import LN2, Allocation, logdet2, sic_rates
from .channel import substream
from .errors import ContractError, ConvergenceError, DomainError, InfeasibleError, SizeError
from .lp import linprog_min
from .scenario import require_valid

EPS_RATE = 1e-6
TIE_RTOL = 1e-6
MAX_ORDERS = 5040
ELLIPSOID_MAX_USERS = 12


def gap_target(primal):
    return max(1e-5 * abs(primal), 1e-7)


@dataclass
class MacSolution:
    """Result of :func:`min_pmac` / :func:`oracle_min_energy`."""

    lambdas: np.ndarray
    orders: list
    vertex_allocations: list
    weights: np.ndarray
    blended_rates: np.ndarray
    total_weighted_energy: float
    duality_gap: float
    dual_value: float
    iterations: int
    converged: bool
    sampled_orders: bool = False
    power_cap_violations: list = field(default_factory=list)
    method: str = ""

    @property
    def blended_power(self):
        """Time-averaged per-(user, subcarrier) power."""
        return sum(w * a.p for w, a in zip(self.weights, self.vertex_allocations))

    @property
    def user_energy(self):
        return self.blended_power.sum(axis=1)

    @property
    def total_energy(self):
        return float(self.blended_power.sum())

    @property
    def sum_rate(self):
        return float(self.blended_rates.sum())


@dataclass
class DualResult:
    lambdas: np.ndarray
    dual_value: float
    orders: list
    vertex_allocations: list
    gap: float
    upper_bound: float
    iterations: int
    converged: bool
    history: list


# -- the per-subcarrier Lagrangian ---------------------------------------------


class _Chain:
    """Weighted nested-set objective sum_k dl_k f(S_k) - theta . p for one order.

    Works on noise-normalized channels ``G = H / sigma`` with shape (U, N, L).
    """

    def __init__(self, G, lam, theta, order):
        U = G.shape[0]
        self.G = G
        self.theta = theta
        lam_sorted = lam[list(order)]
        dl = np.diff(np.concatenate([[0.0], lam_sorted]))
        levels = [k for k in range(U) if dl[k] > 0]
        self.dl = dl[levels]
        self.masks = np.zeros((len(levels), U))
        for i, k in enumerate(levels):
            self.masks[i, list(order[k:])] = 1.0

    def evaluate(self, P, need_hess=True):
        """Value, gradient and Hessian per subcarrier for powers P of shape (N, U)."""
        G = self.G
        U, N, L = G.shape
        phi = -(P @ self.theta)
        grad = np.tile(-self.theta, (N, 1))
        hess = np.zeros((N, U, U)) if need_hess else None
        for dl, mask in zip(self.dl, self.masks):
            q = P * mask[None, :]
            K = np.einsum("nu,unl,unk->nlk", q, G, G.conj()) + np.eye(L)
            phi = phi + dl * logdet2(K)
            Kinv = np.linalg.inv(K)
            A = np.einsum("unl,nlk,vnk->nuv", G.conj(), Kinv, G)
            d = np.real(np.einsum("nuu->nu", A))
            grad = grad + (dl / LN2) * d * mask[None, :]
            if need_hess:
                mm = mask[:, None] * mask[None, :]
                hess = hess - (dl / LN2) * (np.abs(A) ** 2) * mm[None]
        return phi, grad, hess

    def value(self, P):
        return self.evaluate(P, need_hess=False)[0]


def _projected_newton(chain, P0, tol, max_iters=200):
    """Maximize the concave chain objective over P >= 0, independently per subcarrier.

    A subcarrier is finished when its projected gradient is below ``tol`` or
    when its Newton decrement has fallen to round-off level in the objective.
    """
    P = np.maximum(np.array(P0, dtype=float), 0.0)
    N, U = P.shape
    done = np.zeros(N, dtype=bool)
    it = 0
    for it in range(1, max_iters + 1):
        phi, g, Hs = chain.evaluate(P)
        active = (P <= 0.0) & (g <= 0.0)
        viol = np.where(P > 0.0, np.abs(g), np.maximum(g, 0.0)).max(axis=1)
        live = (viol > tol) & ~done
        if not np.any(live):
            break
        free = ~active
        A = -Hs
        diag = np.abs(np.einsum("nuu->nu", A))
        mu = 1e-12 * (diag.max(axis=1, keepdims=True) + 1e-300)
        # Inactive rows/columns become identity so a single batched solve works.
        fm = free[:, :, None] & free[:, None, :]
        A = np.where(fm, A, 0.0)
        A = A + np.where(free, mu, 1.0)[:, :, None] * np.eye(U)[None]
        rhs = np.where(free, g, 0.0)
        d = np.linalg.solve(A, rhs[..., None])[..., 0]
        dec = np.einsum("nu,nu->n", d, rhs)
        bad = dec <= 0.0
        d[bad] = rhs[bad]
        # At round-off level the line search cannot tell points apart; a pure
        # Newton step is still accurate there, so take it once and stop.
        tiny = live & (np.abs(dec) <= 1e-14 * (1.0 + np.abs(phi)))
        newP = P.copy()
        newP[tiny] = np.maximum(P[tiny] + d[tiny], 0.0)
        done |= tiny
        live &= ~tiny

        alpha = np.ones(N)
        todo = live.copy()
        for _ in range(60):
            if not np.any(todo):
                break
            cand = np.maximum(P + alpha[:, None] * d, 0.0)
            val = chain.value(cand)
            ok = val >= phi + 1e-4 * np.einsum("nu,nu->n", g, cand - P)
            accept = todo & ok
            newP[accept] = cand[accept]
            todo &= ~ok
            alpha[todo] *= 0.5
        # Subcarriers whose line search found nothing are stationary to round-off.
        done |= todo
        P = newP
    phi, g, _ = chain.evaluate(P, need_hess=False)
    viol = np.where(P > 0.0, np.abs(g), np.maximum(g, 0.0))
    converged = bool(np.all(viol <= max(tol, 1e-6)))
    return P, converged, it


def _check_ascending(lam, order):
    vals = lam[list(order)]
    if np.any(np.diff(vals) < -1e-12 * (1.0 + np.abs(vals[1:]))):
        raise ContractError(f"order {tuple(order)} is not ascending in lambda {lam}")


def inner_lagrangian_opt(H, lam, theta, order, sigma2, tol=1e-9, p0=None):
    """Maximize sum_u lam_u R_u(p, order) - sum_u theta_u E_u over p >= 0.

    ``order`` must sort the users by ascending ``lam``. Returns an
    :class:`Allocation` with the SIC rates of ``order``; ``info["phi"]`` is the
    attained objective.
    """
    H = np.asarray(H, dtype=np.complex128)
    lam = np.asarray(lam, dtype=float)
    theta = np.asarray(theta, dtype=float)
    U, N, L = H.shape
    order = tuple(int(u) for u in order)
    if sorted(order) != list(range(U)):
        raise DomainError(f"{order} is not a permutation")
    if np.any(lam < 0) or np.any(theta < 0):
        raise DomainError("lambda and theta must be non-negative")
    _check_ascending(lam, order)
    G = H / math.sqrt(sigma2)
    chain = _Chain(G, lam, theta, order)
    P0 = np.zeros((N, U)) if p0 is None else np.asarray(p0, dtype=float).T
    P, converged, it = _projected_newton(chain, P0, tol)
    p = P.T.copy()
    phi = float(chain.value(P).sum())
    rates = sic_rates(H, p, order, sigma2)
    return Allocation(p, rates, order=order, converged=converged, iterations=it, info={"phi": phi})


# -- dual function ----------------------------------------------------------------


def ascending_order(lam):
    """Users sorted by ascending lambda, ties by ascending index."""
    return tuple(int(u) for u in np.lexsort((np.arange(len(lam)), lam)))


class _DualOracle:
    def __init__(self, H, b, theta, sigma2, tol):
        self.H, self.b, self.theta, self.sigma2, self.tol = H, b, theta, sigma2, tol
        self.p = None

    def __call__(self, lam):
        order = ascending_order(lam)
        alloc = inner_lagrangian_opt(self.H, lam, self.theta, order, self.sigma2, tol=self.tol, p0=self.p)
        self.p = alloc.p
        value = float(self.theta @ alloc.energy - lam @ (alloc.rates - self.b))
        return value, self.b - alloc.rates, alloc


def lambda_upper_bound(G, theta, energy_bound):
    """Bound on the optimal prices from stationarity at an active subcarrier.

    For a user with positive power on subcarrier n,
    theta_u >= lam_u |h|^2 / (ln2 (1 + P_tot max|h|^2)) in noise-normalized units,
    and P_tot <= energy_bound / min(theta).
    """
    g = (np.abs(G) ** 2).sum(axis=2)
    nz = g[g > 0]
    if nz.size == 0:
        return 1.0
    p_tot = energy_bound / theta.min()
    return float(theta.max() * LN2 * (1.0 + p_tot * g.max()) / nz.min())


def dual_solve(H, b, theta, sigma2, eps_rate=EPS_RATE, max_iters=5000, primal_bound=None,
               gap_tol=None, lam0=None, radius0=None, energy_bound=None, tol=1e-9):
    """Maximize the Lagrange dual g(lam) = min_p [theta.E - lam.(R - b)].

    Parameters
    ----------
    primal_bound : float, optional
        Weighted energy of a known feasible point; used in the stopping test.
    lam0, radius0 : optional
        Warm start: initial ellipsoid is the ball of ``radius0`` around
        ``lam0`` instead of the ball enclosing ``[0, lam_max]^U``.
    energy_bound : float, optional
        Any feasible weighted energy, used for lam_max (computed from a
        sequential water-filling point if omitted).

    Returns
    -------
    DualResult
        ``history`` lists (lam, g(lam)) for every evaluated iterate.
    """
    H = np.asarray(H, dtype=np.complex128)
    b = np.asarray(b, dtype=float)
    theta = np.asarray(theta, dtype=float)
    U = H.shape[0]
    _check_feasible(H, b)
    if energy_bound is None:
        energy_bound = sequential_upper_bound(H, b, theta, sigma2)
    G = H / math.sqrt(sigma2)
    lam_max = lambda_upper_bound(G, theta, energy_bound)
    oracle = _DualOracle(H, b, theta, sigma2, tol)

    history = []
    best = (-np.inf, None, None)
    ub = np.inf

    def target():
        ref = primal_bound if primal_bound is not None else best[0]
        return gap_tol if gap_tol is not None else gap_target(ref)

    def bound():
        return min(ub, primal_bound) if primal_bound is not None else ub

    if U > ELLIPSOID_MAX_USERS:
        return _subgradient(oracle, b, U, lam_max, max_iters, primal_bound, gap_tol, history)

    if lam0 is None:
        c = np.full(U, lam_max / 2.0)
        P = np.eye(U) * (U * (lam_max / 2.0) ** 2)
    else:
        c = np.clip(np.asarray(lam0, dtype=float), 0.0, lam_max)
        r = radius0 if radius0 is not None else 1e-3 * (np.abs(c).max() + 1e-12)
        P = np.eye(U) * r**2

    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        low = np.flatnonzero(c < 0.0)
        high = np.flatnonzero(c > lam_max)
        if low.size:
            s = np.zeros(U)
            s[low[0]] = 1.0
        elif high.size:
            s = np.zeros(U)
            s[high[0]] = -1.0
        else:
            value, s, alloc = oracle(c)
            history.append((c.copy(), value))
            if value > best[0]:
                best = (value, c.copy(), alloc)
            width = math.sqrt(max(float(s @ P @ s), 0.0))
            ub = min(ub, value + width)
            if bound() - best[0] <= target():
                converged = True
                break
            if width == 0.0:
                # Zero supergradient: c maximizes the dual.
                ub = min(ub, value)
                converged = True
                break
        c, P = _ellipsoid_cut(c, P, s)
        if not np.all(np.isfinite(P)) or np.max(np.abs(np.diag(P))) == 0.0:
            break

    if best[1] is None:
        raise ConvergenceError("dual ellipsoid never evaluated a feasible center")
    value, lam, alloc = best
    orders, sampled = tie_orders(lam, seed=0)
    vertices = [_vertex_at(H, lam, theta, o, sigma2, alloc.p, tol) for o in orders]
    gap = bound() - value
    res = DualResult(lam, value, orders, vertices, gap, ub, it, converged and gap <= target(), history)
    res.sampled_orders = sampled
    return res


def _ellipsoid_cut(c, P, s):
    """Keep the half {x : s.(x - c) >= 0} of the ellipsoid (c, P)."""
    n = c.size
    Ps = P @ s
    denom = math.sqrt(max(float(s @ Ps), 1e-300))
    gt = Ps / denom
    if n == 1:
        return c + gt / 2.0, P / 4.0
    c_new = c + gt / (n + 1)
    P_new = (n * n / (n * n - 1.0)) * (P - (2.0 / (n + 1)) * np.outer(gt, gt))
    P_new = 0.5 * (P_new + P_new.T)
    return c_new, P_new


def _subgradient(oracle, b, U, lam_max, max_iters, primal_bound, gap_tol, history):
    lam = np.full(U, lam_max / 10.0)
    best = (-np.inf, lam, None)
    step0 = lam_max / 10.0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        value, s, alloc = oracle(lam)
        history.append((lam.copy(), value))
        if value > best[0]:
            best = (value, lam.copy(), alloc)
        tgt = gap_tol if gap_tol is not None else gap_target(primal_bound if primal_bound is not None else value)
        if primal_bound is not None and primal_bound - best[0] <= tgt:
            converged = True
            break
        norm = np.linalg.norm(s)
        if norm == 0.0:
            converged = True
            break
        lam = np.clip(lam + step0 / math.sqrt(it) * s / norm, 0.0, lam_max)
    value, lam, alloc = best
    orders, sampled = tie_orders(lam, seed=0)
    gap = (primal_bound - value) if primal_bound is not None else np.inf
    res = DualResult(lam, value, orders, [alloc], gap, np.inf, it, converged, history)
    res.sampled_orders = sampled
    return res


def _vertex_at(H, lam, theta, order, sigma2, p0, tol):
    # Tied users get a common price so the order is ascending for the inner solve.
    lam_eff = lam.copy()
    vals = lam[list(order)]
    lam_eff[list(order)] = np.maximum.accumulate(vals)
    return inner_lagrangian_opt(H, lam_eff, theta, order, sigma2, tol=tol, p0=p0)


# -- ties and orders -------------------------------------------------------------


def tie_clusters(lam, rtol=TIE_RTOL):
    """Group users whose prices agree within rtol * (1 + max); clusters ascend in lambda."""
    order = ascending_order(lam)
    clusters = [[order[0]]]
    for u in order[1:]:
        prev = clusters[-1][-1]
        if abs(lam[u] - lam[prev]) <= rtol * (1.0 + max(lam[u], lam[prev])):
            clusters[-1].append(u)
        else:
            clusters.append([u])
    return clusters


def tie_orders(lam, rtol=TIE_RTOL, cap=MAX_ORDERS, seed=0):
    """Every order consistent with the price ranking (permuting inside tied clusters).

    Returns ``(orders, sampled)``; beyond ``cap`` orders a uniform sample of
    ``cap`` distinct orders is drawn and ``sampled`` is True.
    """
    clusters = tie_clusters(np.asarray(lam, dtype=float), rtol)
    count = math.prod(math.factorial(len(c)) for c in clusters)
    if count <= cap:
        perms = [list(itertools.permutations(c)) for c in clusters]
        return [tuple(u for part in combo for u in part) for combo in itertools.product(*perms)], False
    rng = substream(seed, 0)
    seen = {}
    while len(seen) < cap:
        o = tuple(int(u) for c in clusters for u in rng.permutation(c))
        seen.setdefault(o, None)
    return list(seen), True


# -- time-sharing -----------------------------------------------------------------


def timeshare_lp(vertices, targets, tol=1e-9):
    """Cheapest convex combination of vertices whose blended rates dominate ``targets``.

    ``vertices`` is a list of ``(rates, weighted_energy)``.
    """
    if not vertices:
        raise DomainError("need at least one vertex")
    R = np.array([np.asarray(r, dtype=float) for r, _ in vertices])
    e = np.array([float(en) for _, en in vertices])
    b = np.asarray(targets, dtype=float)
    K = len(vertices)
    w, _ = linprog_min(e, A_ub=-R.T, b_ub=-b, A_eq=np.ones((1, K)), b_eq=[1.0], tol=tol)
    w = w / w.sum()
    if np.any(w @ R < b - 1e-9 * (1.0 + np.abs(b))):
        raise InfeasibleError("time-sharing LP returned an infeasible mix")
    return w


# -- primal barrier -----------------------------------------------------------------


def _subset_masks(U, b):
    masks = []
    for bits in range(1, 2**U):
        m = np.array([(bits >> u) & 1 for u in range(U)], dtype=float)
        if m @ b > 0:
            masks.append(m)
    return np.array(masks).reshape(-1, U)


class _Barrier:
    def __init__(self, G, b, theta):
        self.G = G
        self.U, self.N, self.L = G.shape
        self.M = _subset_masks(self.U, b)
        self.bS = self.M @ b
        self.theta = theta
        self.c = np.repeat(theta, self.N)

    def rank(self, x):
        X = x.reshape(self.U, self.N)
        K = np.einsum("su,un,unl,unk->snlk", self.M, X, self.G, self.G.conj()) + np.eye(self.L)
        return K, logdet2(K).sum(axis=1)

    def slack(self, x):
        return self.rank(x)[1] - self.bS

    def phi(self, x, t):
        s = self.slack(x)
        if np.any(s <= 0) or np.any(x <= 0):
            return np.inf
        return t * (self.c @ x) - np.log(s).sum() - np.log(x).sum()

    def derivatives(self, x, t):
        U, N = self.U, self.N
        K, f = self.rank(x)
        s = f - self.bS
        Kinv = np.linalg.inv(K)
        A = np.einsum("unl,snlk,vnk->snuv", self.G.conj(), Kinv, self.G)
        d = np.real(np.einsum("snuu->snu", A))  # (m, N, U)
        J = (self.M[:, None, :] * d / LN2).transpose(0, 2, 1).reshape(len(s), U * N)
        mm = self.M[:, :, None] * self.M[:, None, :]
        blocks = np.einsum("s,snuv->nuv", 1.0 / s, (np.abs(A) ** 2) * mm[:, None] / LN2)
        H4 = np.zeros((U, N, U, N))
        idx = np.arange(N)
        H4[:, idx, :, idx] = blocks
        hess = H4.reshape(U * N, U * N) + (J.T / s**2) @ J + np.diag(1.0 / x**2)
        grad = t * self.c - J.T @ (1.0 / s) - 1.0 / x
        return grad, hess, s


def primal_barrier(H, b, theta, sigma2, rel_gap=1e-8, abs_gap=1e-10, max_newton=2000):
    """Log-barrier interior-point solve of min theta.E s.t. f_p(S) >= b(S) for all S.

    Returns ``(p, weighted_energy, lam_hat, info)``; ``lam_hat`` aggregates the
    barrier multipliers of the subset constraints per user.
    """
    H = np.asarray(H, dtype=np.complex128)
    b = np.asarray(b, dtype=float)
    theta = np.asarray(theta, dtype=float)
    U, N, L = H.shape
    G = H / math.sqrt(sigma2)
    bar = _Barrier(G, b, theta)
    m_tot = len(bar.bS) + U * N

    # Strictly feasible start: a uniform power level large enough for every subset.
    x = np.ones(U * N)
    if len(bar.bS):
        for _ in range(400):
            if np.all(bar.slack(x) > 0):
                break
            x *= 4.0
        else:
            raise InfeasibleError("no strictly feasible power level found")
    x *= 2.0
    t = m_tot / max(bar.c @ x, 1e-300)
    newton = 0
    while True:
        for _ in range(200):
            grad, hess, _s = bar.derivatives(x, t)
            D = x
            Hs = hess * D[:, None] * D[None, :]
            gs = grad * D
            try:
                y = -np.linalg.solve(Hs, gs)
            except np.linalg.LinAlgError:
                y = -np.linalg.lstsq(Hs, gs, rcond=None)[0]
            dx = y * D
            dec2 = float(-(grad @ dx))
            newton += 1
            if dec2 / 2.0 <= 1e-10 or newton > max_newton:
                break
            alpha = 1.0
            f0 = bar.phi(x, t)
            while alpha > 1e-20:
                xn = x + alpha * dx
                if np.all(xn > 0):
                    fn = bar.phi(xn, t)
                    if fn <= f0 - 0.25 * alpha * dec2:
                        break
                alpha *= 0.5
            else:
                break
            x = xn
        energy = float(bar.c @ x)
        if m_tot / t <= max(rel_gap * energy, abs_gap) or newton > max_newton:
            break
        t *= 8.0
    s = bar.slack(x)
    mu = 1.0 / (t * s) if len(s) else np.zeros(0)
    lam_hat = bar.M.T @ mu if len(s) else np.zeros(U)
    info = {"t": t, "newton": newton, "gap_bound": m_tot / t, "slack": s}
    return x.reshape(U, N), float(bar.c @ x), lam_hat, info


# -- feasibility helpers ---------------------------------------------------------------


def _check_feasible(H, b):
    power = (np.abs(H) ** 2).sum(axis=(1, 2))
    dead = np.flatnonzero((power == 0.0) & (np.asarray(b) > 0))
    if dead.size:
        raise InfeasibleError(f"users {dead.tolist()} have an all-zero channel but a positive target")


def sequential_upper_bound(H, b, theta, sigma2):
    """Weighted energy of a feasible point: reverse-order sequential water-filling."""
    from .baselines import sequential_waterfill

    order = tuple(range(H.shape[0]))
    p = sequential_waterfill(H, b, order, sigma2)
    return float(theta @ p.sum(axis=1))


def cap_violations(user_energy, p_max):
    return [int(u) for u in np.flatnonzero(user_energy > p_max * (1 + 1e-9))]


# -- end-to-end solver -------------------------------------------------------------------


def _lift(H, allocs, w, b, sigma2):
    """Smallest common power scale c >= 1 with blended SIC rates >= b.

    Every SIC rate is non-decreasing in a common scale of all powers, so a
    bisection on c is exact.
    """
    def blended(c):
        return sum(wk * sic_rates(H, c * a.p, a.order, sigma2) for wk, a in zip(w, allocs))

    if np.all(blended(1.0) >= b):
        return 1.0
    hi = 1.0 + 1e-9
    while not np.all(blended(hi) >= b):
        hi = 1.0 + 2.0 * (hi - 1.0)
        if hi > 1e6:
            raise InfeasibleError("cannot lift the time-shared allocation to the targets")
    lo = 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.all(blended(mid) >= b):
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * hi:
            break
    return hi


def _blend(H, orders, p_list, theta, b, sigma2, eps_rate):
    """Time-share SIC vertices to meet ``b``.

    If the exact LP is infeasible by rounding, it is relaxed by eps_rate/2 and the
    mix is then lifted back onto the targets.
    """
    vertices = []
    allocs = []
    for o, p in zip(orders, p_list):
        r = sic_rates(H, p, o, sigma2)
        allocs.append(Allocation(p, r, order=o))
        vertices.append((r, float(theta @ p.sum(axis=1))))
    try:
        w = timeshare_lp(vertices, b)
    except InfeasibleError:
        w = timeshare_lp(vertices, np.maximum(b - 0.5 * eps_rate, 0.0))
    keep = np.flatnonzero(w > 1e-12)
    w = w[keep] / w[keep].sum()
    allocs = [allocs[k] for k in keep]
    c = _lift(H, allocs, w, b, sigma2)
    if c != 1.0:
        allocs = [Allocation(c * a.p, sic_rates(H, c * a.p, a.order, sigma2), order=a.order) for a in allocs]
    blended = sum(wk * a.rates for wk, a in zip(w, allocs))
    energy = float(sum(wk * theta @ a.energy for wk, a in zip(w, allocs)))
    return [a.order for a in allocs], allocs, w, blended, energy


def solve_min_energy(H, b, theta, sigma2, eps_rate=EPS_RATE, max_iters=5000, p_max=None, seed=0):
    """minPMAC on raw arrays; see :func:`min_pmac`."""
    H = np.asarray(H, dtype=np.complex128)
    b = np.asarray(b, dtype=float)
    theta = np.asarray(theta, dtype=float)
    U, N, L = H.shape
    if b.shape != (U,) or theta.shape != (U,):
        raise DomainError("targets and weights must have length U")
    _check_feasible(H, b)

    if not np.any(b > 0):
        p = np.zeros((U, N))
        o = tuple(range(U))
        alloc = Allocation(p, np.zeros(U), order=o)
        return MacSolution(np.zeros(U), [o], [alloc], np.ones(1), np.zeros(U), 0.0, 0.0, 0.0, 0, True,
                           method="trivial")

    p_bar, e_bar, lam_hat, binfo = primal_barrier(H, b, theta, sigma2)
    # Warm dual start at the barrier prices; fall back to the full box.
    dual = dual_solve(H, b, theta, sigma2, eps_rate=eps_rate, max_iters=max_iters, primal_bound=e_bar,
                      lam0=lam_hat, radius0=1e-3 * (np.abs(lam_hat).max() + 1e-12), energy_bound=e_bar)
    if not dual.converged:
        dual = dual_solve(H, b, theta, sigma2, eps_rate=eps_rate, max_iters=max_iters, primal_bound=e_bar,
                          energy_bound=e_bar)
    lam = dual.lambdas
    orders, sampled = dual.orders, dual.sampled_orders
    candidates = []
    # Vertices of the inner Lagrangian at the dual prices.
    try:
        p_list = [a.p for a in dual.vertex_allocations]
        candidates.append(("dual", _blend(H, orders, p_list, theta, b, sigma2, eps_rate)))
    except InfeasibleError:
        pass
    # Vertices sharing the barrier power allocation.
    try:
        candidates.append(("primal", _blend(H, orders, [p_bar] * len(orders), theta, b, sigma2, eps_rate)))
    except InfeasibleError:
        all_orders = list(itertools.permutations(range(U)))
        if len(all_orders) > MAX_ORDERS:
            rng = substream(seed, 1)
            all_orders = [tuple(int(v) for v in rng.permutation(U)) for _ in range(MAX_ORDERS)]
            sampled = True
        candidates.append(("primal-all", _blend(H, all_orders, [p_bar] * len(all_orders), theta, b, sigma2,
                                                eps_rate)))

    method, (orders_k, allocs, w, blended, energy) = min(candidates, key=lambda c: c[1][4])
    gap = energy - dual.dual_value
    feasible = bool(np.all(blended >= b - eps_rate))
    converged = dual.converged and feasible and gap <= gap_target(energy)
    user_energy = sum(wk * a.energy for wk, a in zip(w, allocs))
    viol = cap_violations(user_energy, p_max) if p_max is not None else []
    return MacSolution(lam, orders_k, allocs, w, blended, energy, gap, dual.dual_value, dual.iterations,
                       converged, sampled_orders=sampled, power_cap_violations=viol, method=method)


def min_pmac(scenario, H, eps_rate=EPS_RATE, max_iters=5000):
    """Minimum weighted-energy allocation for one trial of ``scenario``.

    Parameters
    ----------
    scenario : Scenario
    H : ndarray, shape (U, N, L)
        Channel slice of one trial (``trace.trial(t)``).
    """
    require_valid(scenario)
    return solve_min_energy(H, scenario.targets, scenario.weights, scenario.noise_power_mw, eps_rate=eps_rate,
                            max_iters=max_iters, p_max=scenario.max_power_mw, seed=scenario.seed)


# -- exhaustive oracle ----------------------------------------------------------------------


def oracle_energy(H, b, theta, sigma2, max_users=4, max_subcarriers=4):
    """Independent ground truth for small instances.

    Solves the convex program min theta.E s.t. f_p(S) >= b(S) for all S with
    a generic conic solver, then time-shares all U! SIC vertices at that
    power allocation. A single user is solved in closed form by water-filling.
    """
    H = np.asarray(H, dtype=np.complex128)
    b = np.asarray(b, dtype=float)
    theta = np.asarray(theta, dtype=float)
    U, N, L = H.shape
    if U > max_users or N > max_subcarriers:
        raise SizeError(f"oracle limited to U <= {max_users}, N <= {max_subcarriers} (got U={U}, N={N})")
    _check_feasible(H, b)
    orders = list(itertools.permutations(range(U)))

    if U == 1:
        from .capacity import waterfill_rate

        g = (np.abs(H[0]) ** 2).sum(axis=1) / sigma2
        p = waterfill_rate(g, b[0])[None, :]
    else:
        p = _conic_min_energy(H, b, theta, sigma2)

    vertices, allocs = [], []
    for o in orders:
        r = sic_rates(H, p, o, sigma2)
        allocs.append(Allocation(p, r, order=o))
        vertices.append((r, float(theta @ p.sum(axis=1))))
    w = timeshare_lp(vertices, np.maximum(b - 0.5 * EPS_RATE, 0.0))
    blended = sum(wk * a.rates for wk, a in zip(w, allocs))
    energy = float(theta @ p.sum(axis=1))
    return MacSolution(np.full(U, np.nan), orders, allocs, w, blended, energy, 0.0, np.nan, 0, True,
                       method="oracle")


def _conic_min_energy(H, b, theta, sigma2):
    import cvxpy as cp

    U, N, L = H.shape
    G = H / math.sqrt(sigma2)
    p = cp.Variable((U, N), nonneg=True)
    cons = []
    for m in _subset_masks(U, b):
        members = np.flatnonzero(m)
        terms = []
        for n in range(N):
            if L == 1:
                g = np.abs(G[members, n, 0]) ** 2
                terms.append(cp.log(1 + g @ p[members, n]))
            else:
                # Real embedding of the Hermitian matrix doubles the log-det.
                mats = []
                for u in members:
                    hh = np.outer(G[u, n], G[u, n].conj())
                    mats.append(np.block([[hh.real, -hh.imag], [hh.imag, hh.real]]))
                X = np.eye(2 * L) + sum(p[u, n] * M for u, M in zip(members, mats))
                terms.append(0.5 * cp.log_det(X))
        cons.append(sum(terms) >= float(m @ b) * LN2)
    prob = cp.Problem(cp.Minimize(theta @ cp.sum(p, axis=1)), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-11, tol_gap_rel=1e-11, tol_feas=1e-11)
    if p.value is None or prob.status not in ("optimal", "optimal_inaccurate"):
        raise ConvergenceError(f"conic oracle failed: {prob.status}")
    return np.maximum(np.asarray(p.value), 0.0)


def oracle_min_energy(scenario, H):
    require_valid(scenario)
    return oracle_energy(H, scenario.targets, scenario.weights, scenario.noise_power_mw)


# -- solution dump ---------------------------------------------------------------------------


def dump_solution(sol, fh):
    """Write a plain-text record of a :class:`MacSolution`."""
    fmt = lambda v: " ".join(repr(float(x)) for x in np.ravel(v))
    fh.write(f"method {sol.method}\n")
    fh.write(f"converged {int(sol.converged)}\n")
    fh.write(f"iterations {sol.iterations}\n")
    fh.write(f"lambdas {fmt(sol.lambdas)}\n")
    fh.write(f"total_weighted_energy {sol.total_weighted_energy!r}\n")
    fh.write(f"dual_value {float(sol.dual_value)!r}\n")
    fh.write(f"duality_gap {float(sol.duality_gap)!r}\n")
    fh.write(f"blended_rates {fmt(sol.blended_rates)}\n")
    fh.write(f"power_cap_violations {' '.join(map(str, sol.power_cap_violations))}\n")
    fh.write(f"vertices {len(sol.orders)}\n")
    for k, (o, w, a) in enumerate(zip(sol.orders, sol.weights, sol.vertex_allocations)):
        fh.write(f"vertex {k} order {' '.join(map(str, o))} weight {float(w)!r}\n")
        fh.write(f"  rates {fmt(a.rates)}\n")
        fh.write(f"  energy {fmt(a.energy)}\n")
        for u in range(a.p.shape[0]):
            fh.write(f"  p[{u}] {fmt(a.p[u])}\n")
