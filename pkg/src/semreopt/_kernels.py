"""Hot numeric kernels with numba-compiled and pure-numpy implementations.

Every kernel exists twice: a ``*_numpy`` version built on vectorized numpy
(scipy.sparse for the random-walk matvec) and a loop version compiled with
``numba.njit``. The public names (``energy_value``, ``jacobi_solve``,
``rwr_power_iteration``, ``iou_matrix``) are bound at import time: numba is
used when available unless the environment variable ``SEMREOPT_NO_NUMBA`` is
set to a truthy value, in which case the numpy path is selected.

``benchmarks/bench_kernels.py`` compares the two paths head to head.

Solver status codes shared by both paths:
    0  converged (residual <= tol)
    1  iteration budget exhausted
    2  non-finite values encountered (divergence)
    3  stationarity system has a non-positive diagonal (only possible
       in the weight>1 regime); the fixed-point update is ill-posed
"""

from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp

_TRUTHY = {"1", "true", "yes", "on"}

NUMBA_DISABLED = os.environ.get("SEMREOPT_NO_NUMBA", "").strip().lower() in _TRUTHY

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        return deco


JACOBI_CONVERGED = 0
JACOBI_MAX_ITER = 1
JACOBI_NON_FINITE = 2
JACOBI_BAD_DIAGONAL = 3


# ---------------------------------------------------------------------------
# consistency-weighted quadratic energy
#
# E(x) = (1-eps) * sum over ordered box pairs (b, b') admitted by `pair`
#            sum over active (b,l), (b',l') of S[l,l'] * (x[b,l]-x[b',l'])^2
#      + eps * sum over active (b,l) of B * S_row[l] * (x[b,l]-p[b,l])^2
# ---------------------------------------------------------------------------


def energy_value_numpy(x, p, s, eps, active, pair):
    """Energy of score matrix `x` against reference `p` (vectorized)."""
    nb = x.shape[0]
    act = active.astype(np.float64)
    xm = x * act
    x2m = x * xm
    u = act @ s  # u[b,l] = sum_{l' active in b} S[l,l']
    v = xm @ s
    pairf = pair.astype(np.float64)
    # ordered-pair expansion of (x_bl - x_b'l')^2 = x^2 + x'^2 - 2 x x'
    w_sq = x2m @ u.T  # w_sq[b,b'] = sum_l act*x^2[b,l] * u[b',l]
    w_cr = xm @ v.T
    pairwise = float(np.sum(pairf * (w_sq + w_sq.T - 2.0 * w_cr)))
    s_row = s.sum(axis=1)
    unary = float(np.sum(act * nb * s_row[None, :] * (x - p) ** 2))
    return (1.0 - eps) * pairwise + eps * unary


@njit(cache=True)
def energy_value_loops(x, p, s, eps, active, pair):
    # same expansion as the numpy path: (x - x')^2 = x^2 + x'^2 - 2 x x'
    # with per-box aggregates u[b,l] = sum_{l' active} S[l,l'] and
    # v[b,l] = sum_{l' active} S[l,l'] x[b,l']
    nb, nl = x.shape
    u = np.zeros((nb, nl))
    v = np.zeros((nb, nl))
    for b in range(nb):
        for l2 in range(nl):
            if active[b, l2]:
                xv = x[b, l2]
                for l in range(nl):
                    sv = s[l2, l]
                    u[b, l] += sv
                    v[b, l] += sv * xv
    pairwise = 0.0
    for b in range(nb):
        for b2 in range(nb):
            if not pair[b, b2]:
                continue
            acc = 0.0
            for l in range(nl):
                if active[b, l]:
                    xl = x[b, l]
                    acc += xl * xl * u[b2, l] - 2.0 * xl * v[b2, l]
                if active[b2, l]:
                    x2 = x[b2, l]
                    acc += x2 * x2 * u[b, l]
            pairwise += acc
    unary = 0.0
    for b in range(nb):
        for l in range(nl):
            if not active[b, l]:
                continue
            s_row = 0.0
            for l2 in range(nl):
                s_row += s[l, l2]
            d = x[b, l] - p[b, l]
            unary += nb * s_row * d * d
    return (1.0 - eps) * pairwise + eps * unary


# ---------------------------------------------------------------------------
# Jacobi fixed-point solver for the stationarity system grad E = 0
#
# For an active entry (b,l) the energy gradient is
#   g[b,l] = 4*(1-eps)*(x[b,l]*C[b,l] - V[b,l]) + 2*eps*B*S_row[l]*(x[b,l]-p[b,l])
# with C[b,l] = sum_{b' ~ b} sum_{l' active} S[l,l']        (constant)
#      V[b,l] = sum_{b' ~ b} sum_{l' active} S[l,l']*x[b',l']
# Solving g=0 for x[b,l] with the other entries frozen gives the update
#   x[b,l] <- (2*(1-eps)*V[b,l] + eps*B*S_row[l]*p[b,l]) / D[b,l]
#   D[b,l] = 2*(1-eps)*C[b,l] + eps*B*S_row[l]
# Entries with S_row[l] == 0 have an identically-zero gradient and are
# returned unchanged. Convergence is max-norm of g over active entries.
# ---------------------------------------------------------------------------


def jacobi_solve_numpy(p, s, eps, active, pair, tol, max_iter):
    nb = p.shape[0]
    act = active.astype(np.float64)
    pairf = pair.astype(np.float64)
    a = 1.0 - eps
    s_row = s.sum(axis=1)
    c_mat = pairf @ (act @ s)
    cu = eps * nb * s_row[None, :]
    solved = active & (s_row[None, :] > 0.0)
    if not solved.any():
        return p.copy(), 0, 0.0, JACOBI_CONVERGED
    diag = 2.0 * a * c_mat + cu
    if np.any(diag[solved] <= 0.0):
        return p.copy(), 0, np.inf, JACOBI_BAD_DIAGONAL

    x = p.copy()
    it = 0
    # overflow in a diverging weight>1 run is the expected detection signal
    with np.errstate(over="ignore", invalid="ignore"):
        while True:
            v = pairf @ ((x * act) @ s)
            g = 4.0 * a * (x * c_mat - v) + 2.0 * cu * (x - p)
            resid = float(np.max(np.abs(g[solved])))
            if not np.isfinite(resid):
                return p.copy(), it, resid, JACOBI_NON_FINITE
            if resid <= tol:
                return x, it, resid, JACOBI_CONVERGED
            if it >= max_iter:
                return x, it, resid, JACOBI_MAX_ITER
            x = np.where(solved, (2.0 * a * v + cu * p) / np.where(solved, diag, 1.0), x)
            it += 1


@njit(cache=True)
def jacobi_solve_loops(p, s, eps, active, pair, tol, max_iter):
    nb, nl = p.shape
    a = 1.0 - eps
    s_row = np.zeros(nl)
    for l in range(nl):
        acc = 0.0
        for l2 in range(nl):
            acc += s[l, l2]
        s_row[l] = acc

    # t[b,l] = sum_{l' active in box b} S[l,l']; C = pair-sum of t
    t = np.zeros((nb, nl))
    for b in range(nb):
        for l2 in range(nl):
            if active[b, l2]:
                for l in range(nl):
                    t[b, l] += s[l, l2]
    c_mat = np.zeros((nb, nl))
    for b in range(nb):
        for b2 in range(nb):
            if pair[b, b2]:
                for l in range(nl):
                    c_mat[b, l] += t[b2, l]

    solved = np.zeros((nb, nl), dtype=np.bool_)
    n_solved = 0
    for b in range(nb):
        for l in range(nl):
            if active[b, l] and s_row[l] > 0.0:
                solved[b, l] = True
                n_solved += 1
    if n_solved == 0:
        return p.copy(), 0, 0.0, JACOBI_CONVERGED

    diag = np.zeros((nb, nl))
    for b in range(nb):
        for l in range(nl):
            diag[b, l] = 2.0 * a * c_mat[b, l] + eps * nb * s_row[l]
            if solved[b, l] and diag[b, l] <= 0.0:
                return p.copy(), 0, np.inf, JACOBI_BAD_DIAGONAL

    x = p.copy()
    xs = np.zeros((nb, nl))
    v = np.zeros((nb, nl))
    it = 0
    while True:
        for b in range(nb):
            for l in range(nl):
                acc = 0.0
                for l2 in range(nl):
                    if active[b, l2]:
                        acc += s[l, l2] * x[b, l2]
                xs[b, l] = acc
        for b in range(nb):
            for l in range(nl):
                v[b, l] = 0.0
        for b in range(nb):
            for b2 in range(nb):
                if pair[b, b2]:
                    for l in range(nl):
                        v[b, l] += xs[b2, l]

        resid = 0.0
        for b in range(nb):
            for l in range(nl):
                if solved[b, l]:
                    g = 4.0 * a * (x[b, l] * c_mat[b, l] - v[b, l]) + 2.0 * eps * nb * s_row[
                        l
                    ] * (x[b, l] - p[b, l])
                    g = abs(g)
                    if g > resid:
                        resid = g
        if not np.isfinite(resid):
            return p.copy(), it, resid, JACOBI_NON_FINITE
        if resid <= tol:
            return x, it, resid, JACOBI_CONVERGED
        if it >= max_iter:
            return x, it, resid, JACOBI_MAX_ITER
        for b in range(nb):
            for l in range(nl):
                if solved[b, l]:
                    x[b, l] = (2.0 * a * v[b, l] + eps * nb * s_row[l] * p[b, l]) / diag[b, l]
        it += 1


# ---------------------------------------------------------------------------
# Random walk with restart: power iteration on a column-stochastic
# transition built from a symmetric CSR adjacency. Dangling columns
# (zero degree) redirect their whole mass to the restart node.
# ---------------------------------------------------------------------------


def rwr_power_iteration_numpy(indptr, indices, data, inv_deg, dangling, start, restart, tol, max_iter):
    n = inv_deg.shape[0]
    adj = sp.csr_matrix((data, indices, indptr), shape=(n, n), copy=False)
    r = np.zeros(n)
    r[start] = 1.0
    keep = 1.0 - restart
    has_dangling = bool(dangling.any())
    diff = np.inf
    for it in range(1, max_iter + 1):
        step = adj @ (r * inv_deg)
        dangl = float(r[dangling].sum()) if has_dangling else 0.0
        r_next = keep * step
        r_next[start] += restart + keep * dangl
        diff = float(np.abs(r_next - r).sum())
        if diff <= tol:
            return r_next, it, diff, JACOBI_CONVERGED
        r = r_next
    return r, max_iter, diff, JACOBI_MAX_ITER


@njit(cache=True)
def rwr_power_iteration_loops(indptr, indices, data, inv_deg, dangling, start, restart, tol, max_iter):
    n = inv_deg.shape[0]
    r = np.zeros(n)
    r[start] = 1.0
    keep = 1.0 - restart
    scaled = np.zeros(n)
    diff = np.inf
    for it in range(1, max_iter + 1):
        dangl = 0.0
        for i in range(n):
            scaled[i] = r[i] * inv_deg[i]
            if dangling[i]:
                dangl += r[i]
        r_next = np.zeros(n)
        for i in range(n):
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                acc += data[k] * scaled[indices[k]]
            r_next[i] = keep * acc
        r_next[start] += restart + keep * dangl
        diff = 0.0
        for i in range(n):
            diff += abs(r_next[i] - r[i])
        if diff <= tol:
            return r_next, it, diff, JACOBI_CONVERGED
        r = r_next
    return r, max_iter, diff, JACOBI_MAX_ITER


# ---------------------------------------------------------------------------
# Pairwise IoU for (x, y, w, h) boxes
# ---------------------------------------------------------------------------


def iou_matrix_numpy(boxes_a, boxes_b):
    ax1, ay1 = boxes_a[:, 0], boxes_a[:, 1]
    ax2, ay2 = ax1 + boxes_a[:, 2], ay1 + boxes_a[:, 3]
    bx1, by1 = boxes_b[:, 0], boxes_b[:, 1]
    bx2, by2 = bx1 + boxes_b[:, 2], by1 + boxes_b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(ax1[:, None], bx1[None, :])
    ih = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(ay1[:, None], by1[None, :])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_a = boxes_a[:, 2] * boxes_a[:, 3]
    area_b = boxes_b[:, 2] * boxes_b[:, 3]
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


@njit(cache=True)
def iou_matrix_loops(boxes_a, boxes_b):
    n, m = boxes_a.shape[0], boxes_b.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        ax1 = boxes_a[i, 0]
        ay1 = boxes_a[i, 1]
        ax2 = ax1 + boxes_a[i, 2]
        ay2 = ay1 + boxes_a[i, 3]
        area_a = boxes_a[i, 2] * boxes_a[i, 3]
        for j in range(m):
            bx1 = boxes_b[j, 0]
            by1 = boxes_b[j, 1]
            iw = min(ax2, bx1 + boxes_b[j, 2]) - max(ax1, bx1)
            if iw <= 0.0:
                continue
            ih = min(ay2, by1 + boxes_b[j, 3]) - max(ay1, by1)
            if ih <= 0.0:
                continue
            inter = iw * ih
            union = area_a + boxes_b[j, 2] * boxes_b[j, 3] - inter
            if union > 0.0:
                out[i, j] = inter / union
    return out


USE_NUMBA = NUMBA_AVAILABLE and not NUMBA_DISABLED

if USE_NUMBA:
    energy_value = energy_value_loops
    jacobi_solve = jacobi_solve_loops
    rwr_power_iteration = rwr_power_iteration_loops
    iou_matrix = iou_matrix_loops
else:
    energy_value = energy_value_numpy
    jacobi_solve = jacobi_solve_numpy
    rwr_power_iteration = rwr_power_iteration_numpy
    iou_matrix = iou_matrix_numpy
