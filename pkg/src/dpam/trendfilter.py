"""Trend filtering on unequally spaced knots.

Solves ``min 0.5 sum w (r - theta)^2 + lam ||D theta||_1`` where ``D`` is
the scaled divided-difference operator of order ``m`` from
:func:`dpam.model.difference_operator`.

For ``m = 2`` the solution is continuous piecewise linear with kinks at
knots, so each active set ("which rows of ``D theta`` are nonzero, with
which sign") pins down a face whose primal solve is a tridiagonal system in
a hat-function basis on the kink knots.  Dual variables are recovered from
the primal residual by repeated cumulative sums, never by inverting
``D W^-1 D^T`` (which is numerically singular for clustered knots).

Higher orders use the same active-set iteration, with each face solved as a
sparse equality-constrained least-squares problem.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from . import _kernels
from .model import difference_operator, solve_banded_spd

EPS = np.finfo(float).eps


class TrendFilterError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def dual_from_residual(v, knots, m):
    """Solve ``D^T y = v`` by cumulative sums.

    ``v`` must be orthogonal to polynomials of degree ``< m`` (the null
    space of ``D``); any such component is silently dropped.
    """
    t = np.asarray(knots, dtype=np.float64)
    a = np.asarray(v, dtype=np.float64) / math.factorial(m - 1)
    for k in range(1, m):
        b = -np.cumsum(a)[:-1]
        a = (t[k:] - t[:-k]) * b
    return -np.cumsum(a)[:-1]


# ----------------------------------------------------------------------
# m = 2: active-set method with primal face solves
# ----------------------------------------------------------------------

class _Face:
    __slots__ = ("theta", "y", "kinks", "coef", "breaks", "noise")


def _face_solve(r, t, w, lam, rows, signs):
    """Primal solve on the face where ``D theta`` may be nonzero only on ``rows``."""
    K = r.size
    P = np.concatenate(([0], rows + 1, [K - 1]))
    nb = P.size
    L = np.diff(t[P])
    seg = np.clip(np.searchsorted(P, np.arange(K), side="right") - 1, 0, nb - 2)
    a = (t[P[seg + 1]] - t) / L[seg]
    b = 1.0 - a
    diag = np.bincount(seg, w * a * a, nb) + np.bincount(seg + 1, w * b * b, nb)
    off = np.bincount(seg, w * a * b, nb - 1)
    rhs = np.bincount(seg, w * a * r, nb) + np.bincount(seg + 1, w * b * r, nb)
    if rows.size:
        cs = np.zeros(nb - 1)
        cs[1:] += signs
        cs[:-1] -= signs
        g = np.zeros(nb)
        g[1:] += cs / L
        g[:-1] -= cs / L
        rhs -= lam * g
    ab = np.zeros((2, nb))
    ab[0, 1:] = off
    ab[1] = diag
    c = solve_banded_spd(ab, rhs)
    f = _Face()
    f.coef = c
    f.breaks = P
    f.theta = a * c[seg] + b * c[seg + 1]
    s = np.diff(c) / L
    f.kinks = np.diff(s)
    v = w * (r - f.theta)
    f.y = dual_from_residual(v, t, 2)
    return f


def _face_solve_general(r, t, w, lam, rows, signs, m, D=None):
    """Face solve for any order through the sparse saddle-point system.

    Equality rows of ``D`` are normalised to unit length, which removes the
    spacing-driven scale spread that ruins the dual Gram matrix.
    """
    K = r.size
    nrow = K - m
    if D is None:
        D = difference_operator(t, m)
    free = np.ones(nrow, dtype=bool)
    free[rows] = False
    eq = np.flatnonzero(free)
    cols = eq[:, None] + np.arange(m + 1)[None, :]
    vals = D[eq]
    vals = vals / np.linalg.norm(vals, axis=1, keepdims=True)
    C = sparse.csr_matrix((vals.ravel(), (np.repeat(np.arange(eq.size), m + 1), cols.ravel())),
                          shape=(eq.size, K))
    rhs = w * r
    if rows.size:
        g = np.zeros(K)
        for j in range(m + 1):
            np.add.at(g, rows + j, D[rows, j] * signs)
        rhs = rhs - lam * g
    KKT = sparse.bmat([[sparse.diags(w), C.T], [C, None]], format="csc")
    sol = splinalg.spsolve(KKT, np.concatenate((rhs, np.zeros(eq.size))))
    f = _Face()
    f.theta = sol[:K]
    f.coef = None
    f.breaks = rows
    Dth = _kernels.band_apply(D, f.theta)
    f.kinks = Dth[rows]
    f.noise = 16.0 * EPS * _kernels.band_apply(np.abs(D), np.abs(f.theta))[rows]
    f.y = dual_from_residual(w * (r - f.theta), t, m)
    return f


def _kink_noise(face):
    if face.coef is None:
        return face.noise
    s = np.abs(np.diff(face.coef) / np.diff(face.breaks.astype(float)))
    return 0.0 if s.size < 2 else 16.0 * EPS * (s[1:] + s[:-1] + 1.0)


def _pdas(face_solve, nrow, lam, rows, signs, max_iter):
    # Primal-dual active-set swaps.  Plain swaps can oscillate, so once the
    # violation count stops falling only the ``cap`` worst rows are changed,
    # with ``cap`` halved on every further stall.
    cap = nrow
    best = np.inf
    seen = set()
    fallback = None
    for _ in range(max_iter):
        face = face_solve(rows, signs)
        y = face.y
        mask = np.zeros(nrow, dtype=bool)
        mask[rows] = True
        score = np.full(nrow, -1.0)
        score[~mask] = np.abs(y[~mask]) / lam - (1.0 + 1e-11)
        if rows.size:
            scale = max(np.abs(face.kinks).max(), 1e-300)
            score[rows] = -(signs * face.kinks + _kink_noise(face)) / scale
        bad = np.flatnonzero(score > 0)
        if bad.size == 0:
            return face, (face, rows, signs)
        key = (rows.tobytes(), signs.tobytes())
        if bad.size >= best or key in seen:
            cap = max(1, cap // 2)
        else:
            fallback = (face, rows, signs)
        best = min(best, bad.size)
        seen.add(key)
        if bad.size > cap:
            bad = bad[np.argsort(-score[bad], kind="stable")[:cap]]
        sg = np.zeros(nrow)
        sg[rows] = signs
        flip = np.zeros(nrow, dtype=bool)
        flip[bad] = True
        entering = flip & ~mask
        sg[entering] = np.sign(y[entering])
        rows = np.flatnonzero(mask ^ flip)
        signs = sg[rows]
    return None, fallback


def _feasible_active_set(face_solve, nrow, lam, max_iter):
    # Primal active-set method on the dual box QP, kept feasible throughout.
    y = np.zeros(nrow)
    rows = np.zeros(0, dtype=np.int64)
    signs = np.zeros(0)
    for _ in range(max_iter):
        face = face_solve(rows, signs)
        ys = face.y.copy()
        ys[rows] = lam * signs
        mask = np.zeros(nrow, dtype=bool)
        mask[rows] = True
        d = ys - y
        alpha = 1.0
        block = -1
        hi = (~mask) & (ys > lam) & (d > 0)
        lo = (~mask) & (ys < -lam) & (d < 0)
        if hi.any() or lo.any():
            steps = np.full(nrow, np.inf)
            steps[hi] = (lam - y[hi]) / d[hi]
            steps[lo] = (-lam - y[lo]) / d[lo]
            block = int(np.argmin(steps))
            alpha = float(np.clip(steps[block], 0.0, 1.0))
        if block >= 0 and alpha < 1.0:
            y = y + alpha * d
            y[block] = lam * np.sign(d[block])
            pos = np.searchsorted(rows, block)
            rows = np.insert(rows, pos, block)
            signs = np.insert(signs, pos, np.sign(d[block]))
            continue
        y = ys
        viol = signs * face.kinks
        noise = _kink_noise(face)
        if rows.size == 0 or np.all(viol >= -noise):
            return face, rows, signs
        drop = int(np.argmin(viol / np.maximum(noise, 1e-300)))
        rows = np.delete(rows, drop)
        signs = np.delete(signs, drop)
    raise TrendFilterError("active-set iteration limit reached", {"rows": nrow, "lam": lam})


def _active_set_solve(face_solve, nrow, lam, warm, max_iter, strict=True):
    if warm is not None:
        rows = np.asarray(warm[0], dtype=np.int64)
        signs = np.asarray(warm[1], dtype=np.float64)
        ok = rows < nrow
        rows, signs = rows[ok], signs[ok]
    else:
        rows = np.zeros(0, dtype=np.int64)
        signs = np.zeros(0)
    face, best = _pdas(face_solve, nrow, lam, rows, signs, max_iter=300)
    if face is not None:
        _, rows, signs = best
    elif strict or best is None:
        face, rows, signs = _feasible_active_set(face_solve, nrow, lam, max_iter)
    else:
        # best face seen; primal feasible but only approximately optimal
        face, rows, signs = best
    return face.theta, face.y, (rows.copy(), signs.copy())


def tf2_solve(r, t, w, lam, warm=None, max_iter=None):
    """Exact second-order trend filter; returns ``(theta, y, state)``.

    ``warm`` is a previous ``state`` (kink rows and signs) used to start the
    primal-dual active-set iteration; the feasible active-set method takes
    over if that iteration cycles.
    """
    K = r.size
    if max_iter is None:
        max_iter = 4 * K + 50

    def face_solve(rows, signs):
        return _face_solve(r, t, w, lam, rows, signs)

    return _active_set_solve(face_solve, K - 2, lam, warm, max_iter)


def tfm_active_set(r, t, w, lam, m, warm=None, max_iter=None):
    """Same active-set scheme for any order, using sparse saddle-point faces.

    Dual recovery loses accuracy as the order grows, so when the swaps fail
    to settle the face with the fewest violations is returned instead of
    raising; higher orders are an approximate class anyway.
    """
    K = r.size
    if max_iter is None:
        max_iter = 4 * K + 50
    D = difference_operator(t, m)

    def face_solve(rows, signs):
        return _face_solve_general(r, t, w, lam, rows, signs, m, D)

    return _active_set_solve(face_solve, K - m, lam, warm, max_iter, strict=False)
