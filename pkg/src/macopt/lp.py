"""Dense two-phase tableau simplex with Bland's anti-cycling rule.

Sized for the time-sharing problems of this package: a handful of rows and
at most a few thousand columns.
"""

import numpy as np

from .errors import InfeasibleError, MacoptError


class UnboundedError(MacoptError):
    pass


def _pivot(T, row, col):
    T[row] /= T[row, col]
    for i in range(T.shape[0]):
        if i != row and T[i, col] != 0.0:
            T[i] -= T[i, col] * T[row]


def _run(T, basis, allowed, tol, max_pivots):
    """Minimize the objective held in the last row of ``T`` (reduced costs, -z in the corner)."""
    m = T.shape[0] - 1
    for _ in range(max_pivots):
        cost = T[-1, :-1]
        entering = next((j for j in allowed if cost[j] < -tol), None)
        if entering is None:
            return
        col = T[:m, entering]
        best, leave = None, None
        for i in range(m):
            if col[i] > tol:
                ratio = T[i, -1] / col[i]
                if best is None or ratio < best - tol or (abs(ratio - best) <= tol and basis[i] < basis[leave]):
                    best, leave = ratio, i
        if leave is None:
            raise UnboundedError("linear program is unbounded")
        _pivot(T, leave, entering)
        basis[leave] = entering
    raise MacoptError("simplex pivot limit reached")


def linprog_min(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, tol=1e-9, max_pivots=100000):
    """Solve ``min c.x  s.t.  A_ub x <= b_ub, A_eq x = b_eq, x >= 0``.

    Returns ``(x, value)``. Raises :class:`InfeasibleError` if the phase-one
    optimum exceeds ``tol`` (scaled by the right-hand side magnitude).
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq

    # Columns: x | slacks | artificials | rhs
    n_tot = n + m_ub + m
    T = np.zeros((m + 1, n_tot + 1))
    T[:m_ub, :n] = A_ub
    T[:m_ub, n : n + m_ub] = np.eye(m_ub)
    T[:m_ub, -1] = b_ub
    T[m_ub:m, :n] = A_eq
    T[m_ub:m, -1] = b_eq
    neg = T[:m, -1] < 0
    T[:m][neg] *= -1.0
    T[:m, n + m_ub : n + m_ub + m] = np.eye(m)
    basis = list(range(n + m_ub, n_tot))
    art = set(basis)

    # Phase one: minimize the sum of artificials.
    T[-1, :] = 0.0
    T[-1, n + m_ub : n_tot] = 1.0
    for i in range(m):
        T[-1] -= T[i]
    scale = 1.0 + float(np.abs(T[:m, -1]).max(initial=0.0))
    _run(T, basis, range(n_tot), tol * 1e-3, max_pivots)
    if -T[-1, -1] > tol * scale:
        raise InfeasibleError(f"linear program infeasible (phase-one residual {-T[-1, -1]:.3e})")

    # Drive zero-level artificials out of the basis; drop redundant rows.
    keep = []
    for i in range(m):
        if basis[i] in art:
            j = next((j for j in range(n + m_ub) if abs(T[i, j]) > tol), None)
            if j is None:
                continue
            _pivot(T, i, j)
            basis[i] = j
        keep.append(i)
    cols = list(range(n + m_ub)) + [n_tot]
    T = T[keep + [m]][:, cols]
    basis = [basis[i] for i in keep]

    # Phase two.
    T[-1, :] = 0.0
    T[-1, :n] = c
    for i, bj in enumerate(basis):
        if T[-1, bj] != 0.0:
            T[-1] -= T[-1, bj] * T[i]
    _run(T, basis, range(n + m_ub), tol * 1e-3, max_pivots)

    x = np.zeros(n + m_ub)
    for i, bj in enumerate(basis):
        x[bj] = T[i, -1]
    x = np.maximum(x[:n], 0.0)
    return x, float(c @ x)
