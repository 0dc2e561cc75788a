"""Convex hull membership of the chart origin.

The workhorse is Wolfe's minimum-norm-point algorithm: the origin lies in
``conv(P)`` iff the point of ``conv(P)`` closest to the origin has norm 0.
The solver state (corral ``S``, barycentric weights, current iterate) can be
kept between calls, so when the NNE loop appends one more neighbour the
previous optimum is the warm start.

:func:`exact_contains` is an independent oracle: phase-one simplex in
rational arithmetic on the same feasibility problem.
"""
from __future__ import annotations


import numpy as np
from gmpy2 import mpq
from numba import njit

from .geometry import Space, klein_coords

__all__ = [
    "HullFailure",
    "HullResult",
    "min_norm_point",
    "contains_in_hull",
    "hull_residual",
    "exact_contains",
]

# status codes shared with the NNE kernel
CONVERGED = 0
SEPARATED = 1
ITERATION_CAP = 2


class HullFailure(RuntimeError):
    """Minimum-norm-point iteration hit its cap without converging."""

    def __init__(self, message: str, residual: float, vertex: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.vertex = vertex


@njit(cache=True)
def _solve_small(A, b):
    """Gaussian elimination with partial pivoting; returns (x, ok)."""
    n = A.shape[0]
    M = A.copy()
    x = b.copy()
    scale = 0.0
    for i in range(n):
        for j in range(n):
            scale = max(scale, abs(M[i, j]))
    if scale == 0.0:
        return x, False
    for c in range(n):
        p = c
        for r in range(c + 1, n):
            if abs(M[r, c]) > abs(M[p, c]):
                p = r
        if abs(M[p, c]) <= 1e-14 * scale:
            return x, False
        if p != c:
            for j in range(n):
                tmp = M[c, j]
                M[c, j] = M[p, j]
                M[p, j] = tmp
            tmp = x[c]
            x[c] = x[p]
            x[p] = tmp
        for r in range(c + 1, n):
            f = M[r, c] / M[c, c]
            if f != 0.0:
                for j in range(c, n):
                    M[r, j] -= f * M[c, j]
                x[r] -= f * x[c]
    for c in range(n - 1, -1, -1):
        s = x[c]
        for j in range(c + 1, n):
            s -= M[c, j] * x[j]
        x[c] = s / M[c, c]
    return x, True


@njit(cache=True)
def _affine_min(P, S, ns, alpha):
    """Barycentric weights of the min-norm point of the affine hull of P[S[:ns]]."""
    if ns == 1:
        alpha[0] = 1.0
        return
    d = P.shape[1]
    k = ns - 1
    q0 = P[S[0]]
    D = np.empty((k, d))
    for i in range(k):
        for j in range(d):
            D[i, j] = P[S[i + 1], j] - q0[j]
    G = D @ D.T
    rhs = np.empty(k)
    for i in range(k):
        s = 0.0
        for j in range(d):
            s -= D[i, j] * q0[j]
        rhs[i] = s
    beta, ok = _solve_small(G, rhs)
    if not ok:
        beta = np.linalg.lstsq(G, rhs)[0]
    total = 0.0
    for i in range(k):
        alpha[i + 1] = beta[i]
        total += beta[i]
    alpha[0] = 1.0 - total


@njit(cache=True)
def _wolfe(P, m, S, lam, x, ns, tol, max_iter):
    """Run Wolfe's method on the first ``m`` rows of ``P`` from the given corral.

    ``S[:ns]``/``lam[:ns]``/``x`` must describe a point of the hull that is the
    affine minimiser of its corral (true after any completed call, and for a
    single-point corral).  Returns ``(residual, status, ns)``; ``residual`` is
    ``|x|`` unless status is SEPARATED, in which case it is the certified lower
    bound on the distance.
    """
    d = P.shape[1]
    eps = tol / 10.0
    alpha = np.empty(d + 2)
    it = 0
    while True:
        xx = 0.0
        for j in range(d):
            xx += x[j] * x[j]
        nx = np.sqrt(xx)
        if nx <= eps:
            return nx, CONVERGED, ns
        best = 0
        best_val = np.inf
        for i in range(m):
            s = 0.0
            for j in range(d):
                s += x[j] * P[i, j]
            if s < best_val:
                best_val = s
                best = i
        lb = best_val / nx
        if nx - lb <= eps:
            return nx, CONVERGED, ns
        if lb > 2.0 * tol:
            return lb, SEPARATED, ns
        for i in range(ns):
            if S[i] == best:
                # no further progress possible in floating point
                return nx, CONVERGED, ns
        it += 1
        if it > max_iter:
            return nx, ITERATION_CAP, ns
        S[ns] = best
        lam[ns] = 0.0
        ns += 1
        first = True
        while True:
            _affine_min(P, S, ns, alpha)
            positive = True
            for i in range(ns):
                if alpha[i] <= 1e-15:
                    positive = False
                    break
            if positive:
                for i in range(ns):
                    lam[i] = alpha[i]
                break
            theta = 1.0
            for i in range(ns):
                if alpha[i] <= 1e-15:
                    denom = lam[i] - alpha[i]
                    if denom > 0.0:
                        r = lam[i] / denom
                        if r < theta:
                            theta = r
            if first and alpha[ns - 1] <= 1e-15:
                # the improving point got no weight: rounding has stalled the solve
                ns -= 1
                return nx, ITERATION_CAP, ns
            first = False
            keep = 0
            for i in range(ns):
                w = theta * alpha[i] + (1.0 - theta) * lam[i]
                if w > 1e-15:
                    S[keep] = S[i]
                    lam[keep] = w
                    keep += 1
            if keep == ns:
                # guard against stalling: drop the smallest weight
                small = 0
                for i in range(1, ns):
                    if lam[i] < lam[small]:
                        small = i
                for i in range(small, ns - 1):
                    S[i] = S[i + 1]
                    lam[i] = lam[i + 1]
                keep = ns - 1
            ns = keep
            total = 0.0
            for i in range(ns):
                total += lam[i]
            for i in range(ns):
                lam[i] /= total
        for j in range(d):
            s = 0.0
            for i in range(ns):
                s += lam[i] * P[S[i], j]
            x[j] = s


@njit(cache=True)
def _min_norm_cold(P, tol, max_iter):
    m, d = P.shape
    S = np.empty(d + 2, np.int64)
    lam = np.empty(d + 2)
    best = 0
    best_val = np.inf
    for i in range(m):
        s = 0.0
        for j in range(d):
            s += P[i, j] * P[i, j]
        if s < best_val:
            best_val = s
            best = i
    S[0] = best
    lam[0] = 1.0
    x = P[best].copy()
    res, status, ns = _wolfe(P, m, S, lam, x, 1, tol, max_iter)
    return res, status, x


class HullResult:
    """Outcome of one minimum-norm-point solve."""

    __slots__ = ("residual", "status", "point")

    def __init__(self, residual: float, status: int, point: np.ndarray):
        self.residual = residual
        self.status = status
        self.point = point

    def contains(self, tol: float) -> bool:
        return self.status != SEPARATED and self.residual <= tol


def min_norm_point(P, tol: float = 1e-9, max_iter: int | None = None) -> HullResult:
    """Minimum-norm point of ``conv(P)`` (rows of ``P``), to within ``tol / 10``.

    Stops early once a separating hyperplane certifies a distance above
    ``2 * tol``.  Raises :class:`HullFailure` at the iteration cap
    (default ``10 * len(P) * dim``).
    """
    P = np.ascontiguousarray(P, dtype=float)
    if P.ndim != 2 or len(P) == 0:
        raise ValueError("need a non-empty 2-d array of points")
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    if max_iter is None:
        max_iter = 10 * P.shape[0] * P.shape[1]
    res, status, x = _min_norm_cold(P, tol, max_iter)
    if status == ITERATION_CAP:
        raise HullFailure(f"minimum-norm point did not converge (residual {res:.3g})", res)
    return HullResult(float(res), int(status), x)


def contains_in_hull(space: Space, x, pts, tol: float = 1e-9) -> bool:
    """Whether ``x`` lies within ``tol`` of the convex hull of ``pts`` (chart centred at ``x``)."""
    pts = np.asarray(pts, dtype=float).reshape(-1, space.ambient_dim)
    if len(pts) == 0:
        raise ValueError("need at least one hull point")
    return min_norm_point(klein_coords(space, x, pts), tol).contains(tol)


def hull_residual(space: Space, x, pts, tol: float = 1e-9) -> float:
    """Chart distance from ``x`` to the hull (a lower bound above ``2 * tol``)."""
    pts = np.asarray(pts, dtype=float).reshape(-1, space.ambient_dim)
    return min_norm_point(klein_coords(space, x, pts), tol).residual


def _pivot(T, basis, r, c):
    piv = T[r][c]
    row = [v / piv for v in T[r]]
    T[r] = row
    for i in range(len(T)):
        if i != r and T[i][c] != 0:
            f = T[i][c]
            Ti = T[i]
            T[i] = [a - f * b for a, b in zip(Ti, row)]
    basis[r] = c


def exact_contains(vectors) -> bool:
    """Exact test of ``0 in conv(vectors)`` for float input, via rational phase-one simplex.

    Solves ``sum l_i v_i = 0, sum l_i = 1, l >= 0`` with Bland's rule; the
    float coordinates are converted to rationals without rounding.
    """
    V = np.asarray(vectors, dtype=float)
    k, d = V.shape
    m = d + 1
    n_cols = k + m
    T = []
    for r in range(m):
        row = [mpq(float(V[j, r])) if r < d else mpq(1) for j in range(k)]
        row += [mpq(1) if a == r else mpq(0) for a in range(m)]
        row.append(mpq(1) if r == d else mpq(0))
        T.append(row)
    basis = list(range(k, k + m))
    # objective row: minimise the sum of artificials, expressed in non-basic terms
    obj = [mpq(0)] * (n_cols + 1)
    for r in range(m):
        for c in range(n_cols + 1):
            obj[c] -= T[r][c]
    for a in range(k, n_cols):
        obj[a] = mpq(0)
    T.append(obj)
    while True:
        entering = next((c for c in range(n_cols) if T[m][c] < 0), None)
        if entering is None:
            break
        best = None
        for r in range(m):
            a = T[r][entering]
            if a > 0:
                ratio = T[r][-1] / a
                key = (ratio, basis[r])
                if best is None or key < best[0]:
                    best = (key, r)
        if best is None:  # unbounded cannot happen in phase one
            break
        _pivot(T, basis, best[1], entering)
    return T[m][-1] == 0
