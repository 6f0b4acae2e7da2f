"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``DPAM_DISABLE_NUMBA`` is unset (or ``0``).  Both paths expose the
same call signatures; ``numba_kernels()`` and ``numpy_kernels()`` return the
two tables side by side for benchmarking.

Banded matrices use a row-offset layout: a ``(r, b+1)`` array ``B`` stands
for the ``r x (r+b)`` matrix with ``M[i, i+j] = B[i, j]``.  Symmetric banded
matrices are stored in LAPACK upper form (``ab[b+i-j, j] = M[i, j]``) so
they can go straight into :func:`scipy.linalg.solveh_banded`.
"""

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_FLAG = os.environ.get("DPAM_DISABLE_NUMBA", "0").strip().lower()
HAVE_NUMBA = numba is not None and _FLAG in ("", "0", "false", "no")


# ----------------------------------------------------------------------
# loop kernels (plain python, numba-compilable)
# ----------------------------------------------------------------------

def _tv1_dp_loop(y, w, lam):
    # Exact weighted 1d fused lasso by dynamic programming over the
    # piecewise-linear derivative of the forward message:
    #   min_b  0.5 * sum w_i (y_i - b_i)^2 + lam * sum |b_{i+1} - b_i|
    n = y.shape[0]
    beta = np.empty(n)
    if n == 1 or lam <= 0.0:
        for i in range(n):
            beta[i] = y[i]
        return beta

    x = np.empty(2 * n)
    a = np.empty(2 * n)
    b = np.empty(2 * n)
    tm = np.empty(n - 1)
    tp = np.empty(n - 1)

    tm[0] = -lam / w[0] + y[0]
    tp[0] = lam / w[0] + y[0]
    lo_i = n - 1
    hi_i = n
    x[lo_i] = tm[0]
    x[hi_i] = tp[0]
    a[lo_i] = w[0]
    b[lo_i] = -w[0] * y[0] + lam
    a[hi_i] = -w[0]
    b[hi_i] = w[0] * y[0] + lam
    afirst = w[1]
    bfirst = -lam - w[1] * y[1]
    alast = -w[1]
    blast = -lam + w[1] * y[1]

    for k in range(1, n - 1):
        alo = afirst
        blo = bfirst
        lo = lo_i
        while lo <= hi_i:
            if alo * x[lo] + blo > -lam:
                break
            alo += a[lo]
            blo += b[lo]
            lo += 1
        tm[k] = (-lam - blo) / alo
        lo_i = lo - 1
        x[lo_i] = tm[k]

        ahi = alast
        bhi = blast
        hi = hi_i
        while hi >= lo_i:
            if -ahi * x[hi] - bhi < lam:
                break
            ahi += a[hi]
            bhi += b[hi]
            hi -= 1
        tp[k] = (lam + bhi) / (-ahi)
        hi_i = hi + 1
        x[hi_i] = tp[k]

        a[lo_i] = alo
        b[lo_i] = blo + lam
        a[hi_i] = ahi
        b[hi_i] = bhi + lam
        afirst = w[k + 1]
        bfirst = -lam - w[k + 1] * y[k + 1]
        alast = -w[k + 1]
        blast = -lam + w[k + 1] * y[k + 1]

    alo = afirst
    blo = bfirst
    lo = lo_i
    while lo <= hi_i:
        if alo * x[lo] + blo > 0.0:
            break
        alo += a[lo]
        blo += b[lo]
        lo += 1
    beta[n - 1] = -blo / alo

    for k in range(n - 2, -1, -1):
        if beta[k + 1] > tp[k]:
            beta[k] = tp[k]
        elif beta[k + 1] < tm[k]:
            beta[k] = tm[k]
        else:
            beta[k] = beta[k + 1]
    return beta


def _divdiff_band_loop(t, m):
    # Row i: (m-1)! * (t[i+m] - t[i]) * f[t_i, ..., t_{i+m}]
    K = t.shape[0]
    r = K - m
    out = np.zeros((max(r, 0), m + 1))
    fact = 1.0
    for k in range(2, m):
        fact *= k
    for i in range(r):
        span = t[i + m] - t[i]
        for j in range(m + 1):
            den = 1.0
            for l in range(m + 1):
                if l != j:
                    den *= t[i + j] - t[i + l]
            out[i, j] = fact * span / den
    return out


def _gram_band_loop(B, d):
    # Upper LAPACK storage of B diag(d) B^T for a row-offset band B.
    r = B.shape[0]
    bw = B.shape[1] - 1
    ab = np.zeros((bw + 1, r))
    for i in range(r):
        for k in range(0, bw + 1):
            ii = i + k
            if ii >= r:
                break
            s = 0.0
            # column c = i + l = ii + l2  ->  l2 = l - k
            for l in range(k, bw + 1):
                s += B[i, l] * B[ii, l - k] * d[i + l]
            ab[bw - k, ii] = s
    return ab


def _subband_loop(ab, idx):
    # Principal submatrix of a symmetric upper-banded matrix on sorted idx.
    bw = ab.shape[0] - 1
    f = idx.shape[0]
    out = np.zeros((bw + 1, f))
    for c in range(f):
        jc = idx[c]
        for k in range(0, bw + 1):
            rr = c - k
            if rr < 0:
                break
            ir = idx[rr]
            gap = jc - ir
            if gap > bw:
                break
            out[bw - k, c] = ab[bw - gap, jc]
    return out


# ----------------------------------------------------------------------
# numpy kernels
# ----------------------------------------------------------------------

def _divdiff_band_np(t, m):
    K = t.shape[0]
    r = K - m
    if r <= 0:
        return np.zeros((0, m + 1))
    fact = float(math.factorial(m - 1))
    win = np.lib.stride_tricks.sliding_window_view(t, m + 1)[:r]
    diff = win[:, :, None] - win[:, None, :]
    eye = np.eye(m + 1, dtype=bool)
    den = np.prod(np.where(eye, 1.0, diff), axis=2)
    span = (win[:, -1] - win[:, 0])[:, None]
    return fact * span / den


def _gram_band_np(B, d):
    r, bw1 = B.shape
    bw = bw1 - 1
    ab = np.zeros((bw1, r))
    if r == 0:
        return ab
    dw = np.lib.stride_tricks.sliding_window_view(d, bw1)[:r]
    Bd = B * dw
    for k in range(bw1):
        # sum_l B[i, l] * d[i+l] * B[i+k, l-k]
        s = np.einsum("il,il->i", Bd[: r - k, k:], B[k:, : bw1 - k])
        ab[bw - k, k:] = s
    return ab


def _subband_np(ab, idx):
    bw = ab.shape[0] - 1
    f = idx.shape[0]
    out = np.zeros((bw + 1, f))
    for k in range(bw + 1):
        if k >= f:
            break
        gap = idx[k:] - idx[:-k or None]
        ok = gap <= bw
        cols = idx[k:]
        vals = np.where(ok, ab[bw - np.minimum(gap, bw), cols], 0.0)
        out[bw - k, k:] = vals
    return out


def _compile():
    sig = numba.njit(cache=True)
    return {
        "tv1_dp": sig(_tv1_dp_loop),
        "divdiff_band": sig(_divdiff_band_loop),
        "gram_band": sig(_gram_band_loop),
        "subband": sig(_subband_loop),
    }


_NUMPY = {
    "tv1_dp": _tv1_dp_loop,
    "divdiff_band": _divdiff_band_np,
    "gram_band": _gram_band_np,
    "subband": _subband_np,
}
_NUMBA = None


def numpy_kernels():
    return dict(_NUMPY)


def numba_kernels():
    global _NUMBA
    if numba is None:
        raise RuntimeError("numba is not importable")
    if _NUMBA is None:
        _NUMBA = _compile()
    return dict(_NUMBA)


_ACTIVE = numba_kernels() if HAVE_NUMBA else numpy_kernels()


def tv1_dp(y, w, lam):
    """Weighted 1d fused lasso, ``min 0.5 sum w (y-b)^2 + lam TV(b)``."""
    y = np.ascontiguousarray(y, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    return _ACTIVE["tv1_dp"](y, w, float(lam))


def divdiff_band(t, m):
    """Row-offset band of the order-``m`` scaled divided-difference operator."""
    return _ACTIVE["divdiff_band"](np.ascontiguousarray(t, dtype=np.float64), int(m))


def gram_band(B, d):
    """Upper-banded storage of ``B diag(d) B^T``."""
    return _ACTIVE["gram_band"](
        np.ascontiguousarray(B, dtype=np.float64), np.ascontiguousarray(d, dtype=np.float64)
    )


def subband(ab, idx):
    """Upper-banded storage of the principal submatrix on sorted ``idx``."""
    return _ACTIVE["subband"](
        np.ascontiguousarray(ab, dtype=np.float64), np.ascontiguousarray(idx, dtype=np.int64)
    )


def band_apply(B, x):
    """``M @ x`` for a row-offset band ``B``."""
    r, bw1 = B.shape
    out = np.zeros(r)
    for j in range(bw1):
        out += B[:, j] * x[j : j + r]
    return out


def band_apply_t(B, y):
    """``M.T @ y`` for a row-offset band ``B``."""
    r, bw1 = B.shape
    out = np.zeros(r + bw1 - 1)
    for j in range(bw1):
        out[j : j + r] += B[:, j] * y
    return out
