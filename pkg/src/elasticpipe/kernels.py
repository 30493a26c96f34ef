"""Numeric inner loops.

Each kernel is plain numpy-compatible Python decorated with :func:`njit`, so
it runs compiled when numba is enabled and interpreted otherwise.  Where the
interpreted loop would be too slow, a vectorized numpy twin is provided and
selected automatically when JIT is off.
"""

import numpy as np

from ._jit import JIT_ENABLED, njit

OK = 0
DEADLOCK = 1

LP_OPTIMAL = 0
LP_INFEASIBLE = 1
LP_UNBOUNDED = 2
LP_ITERATION_LIMIT = 3


@njit
def schedule_times(op_chunk, op_bwd, fwd_dur, bwd_dur, pred, succ, hop):
    """Start/end times of a static per-stage op sequence.

    ``op_chunk[p, j]`` / ``op_bwd[p, j]`` give the j-th op of stage ``p``.  An op
    starts when its stage is free and its dependencies finished: the same
    chunk on the neighbouring stage (forward from p-1, backward from p+1,
    plus ``hop`` latency), the previous slice's forward, and the next slice's
    backward on the same stage.  Returns ``(status, f_start, f_end, b_start,
    b_end)``; ``b_*`` span recompute plus backward.
    """
    dp, nops = op_chunk.shape
    n = fwd_dur.shape[1]
    f_start = np.zeros((dp, n))
    f_end = np.zeros((dp, n))
    b_start = np.zeros((dp, n))
    b_end = np.zeros((dp, n))
    f_done = np.zeros((dp, n), dtype=np.bool_)
    b_done = np.zeros((dp, n), dtype=np.bool_)
    ptr = np.zeros(dp, dtype=np.int64)
    free = np.zeros(dp)
    remaining = dp * nops
    while remaining > 0:
        progress = False
        for p in range(dp):
            while ptr[p] < nops:
                k = op_chunk[p, ptr[p]]
                ready = free[p]
                if not op_bwd[p, ptr[p]]:
                    if p > 0:
                        if not f_done[p - 1, k]:
                            break
                        ready = max(ready, f_end[p - 1, k] + hop)
                    q = pred[k]
                    if q >= 0:
                        if not f_done[p, q]:
                            break
                        ready = max(ready, f_end[p, q])
                    f_start[p, k] = ready
                    f_end[p, k] = ready + fwd_dur[p, k]
                    f_done[p, k] = True
                    free[p] = f_end[p, k]
                else:
                    if not f_done[p, k]:
                        break
                    if p < dp - 1:
                        if not b_done[p + 1, k]:
                            break
                        ready = max(ready, b_end[p + 1, k] + hop)
                    q = succ[k]
                    if q >= 0:
                        if not b_done[p, q]:
                            break
                        ready = max(ready, b_end[p, q])
                    b_start[p, k] = ready
                    b_end[p, k] = ready + bwd_dur[p, k]
                    b_done[p, k] = True
                    free[p] = b_end[p, k]
                ptr[p] += 1
                remaining -= 1
                progress = True
        if not progress:
            return DEADLOCK, f_start, f_end, b_start, b_end
    return OK, f_start, f_end, b_start, b_end


@njit
def _brute_force_loop(A, b, ub, c, tol):
    m, n = A.shape
    x = np.zeros(n, dtype=np.int64)
    best = np.zeros(n, dtype=np.int64)
    lhs = np.zeros(m)
    best_obj = np.inf
    found = False
    while True:
        feasible = True
        for i in range(m):
            if lhs[i] > b[i] + tol[i]:
                feasible = False
                break
        if feasible:
            obj = 0.0
            for j in range(n):
                obj += c[j] * x[j]
            if obj < best_obj - 1e-12:
                best_obj = obj
                best[:] = x
                found = True
        # mixed-radix increment, last variable fastest
        j = n - 1
        while j >= 0:
            if x[j] < ub[j]:
                x[j] += 1
                for i in range(m):
                    lhs[i] += A[i, j]
                break
            for i in range(m):
                lhs[i] -= A[i, j] * x[j]
            x[j] = 0
            j -= 1
        if j < 0:
            break
    return found, best, best_obj


def _brute_force_numpy(A, b, ub, c, tol, block=1 << 16):
    n = len(ub)
    radices = ub + 1
    total = int(np.prod(radices)) if n else 1
    best, best_obj = None, np.inf
    for start in range(0, total, block):
        idx = np.arange(start, min(total, start + block), dtype=np.int64)
        pts = np.empty((idx.size, n), dtype=np.int64)
        rem = idx
        for j in range(n - 1, -1, -1):
            pts[:, j] = rem % radices[j]
            rem = rem // radices[j]
        ok = np.all(pts @ A.T <= b + tol, axis=1) if A.shape[0] else np.ones(idx.size, bool)
        if not ok.any():
            continue
        objs = pts[ok] @ c
        i = int(np.argmin(objs))
        if objs[i] < best_obj - 1e-12:
            best_obj, best = float(objs[i]), pts[ok][i].copy()
    if best is None:
        return False, np.zeros(n, dtype=np.int64), np.inf
    return True, best, best_obj


def brute_force_search(A, b, ub, c, tol):
    """Exhaustive minimum of ``c @ x`` over integer ``0 <= x <= ub`` with ``A x <= b + tol``.

    Ties keep the lexicographically smallest point.
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    args = (A, np.asarray(b, dtype=np.float64), np.asarray(ub, dtype=np.int64),
            np.asarray(c, dtype=np.float64), np.asarray(tol, dtype=np.float64))
    if JIT_ENABLED:
        return _brute_force_loop(*args)
    return _brute_force_numpy(*args)


@njit
def dual_simplex(T, basis, at_upper, d, lo, hi, max_iter):
    """Bounded dual simplex on a tableau, in place.

    ``T`` is ``B^-1 [A I b]`` for ``A x + s = b`` with structural bounds
    ``lo <= x <= hi`` and slacks ``s >= 0``; ``basis`` lists the basic column
    of each row; ``at_upper`` marks nonbasic columns resting at their upper
    bound; ``d`` holds reduced costs and must be dual feasible (``>= 0`` at
    lower, ``<= 0`` at upper).  Bound changes keep dual feasibility, so a
    parent's final tableau warm-starts its children.  Returns a status code.
    """
    m = T.shape[0]
    ncol = T.shape[1] - 1
    n = lo.shape[0]
    eps = 1e-9
    is_basic = np.zeros(ncol, dtype=np.bool_)
    for i in range(m):
        is_basic[basis[i]] = True
    low = np.zeros(ncol)
    up = np.full(ncol, np.inf)
    low[:n] = lo
    up[:n] = hi
    val = np.zeros(ncol)
    xb = np.zeros(m)
    it = 0
    while True:
        it += 1
        if it > max_iter:
            return LP_ITERATION_LIMIT
        for j in range(ncol):
            val[j] = up[j] if at_upper[j] else low[j]
        worst = eps
        r = -1
        for i in range(m):
            v = T[i, ncol]
            for j in range(ncol):
                if not is_basic[j] and val[j] != 0.0:
                    v -= T[i, j] * val[j]
            xb[i] = v
            k = basis[i]
            gap = max(low[k] - v, v - up[k])
            if gap > worst * (1.0 + 1e-12):
                if it > 20 * m and r >= 0:
                    continue
                worst = gap
                r = i
        if r < 0:
            return LP_OPTIMAL
        increase = xb[r] < low[basis[r]]
        q = -1
        best = np.inf
        piv = 0.0
        for j in range(ncol):
            if is_basic[j] or low[j] == up[j]:
                continue
            a = T[r, j]
            if increase:
                ok = (a < -eps and not at_upper[j]) or (a > eps and at_upper[j])
            else:
                ok = (a > eps and not at_upper[j]) or (a < -eps and at_upper[j])
            if not ok:
                continue
            ratio = abs(d[j]) / abs(a)
            if ratio < best - 1e-12 or (ratio <= best + 1e-12 and abs(a) > piv):
                best = ratio
                q = j
                piv = abs(a)
        if q < 0:
            return LP_INFEASIBLE
        leave = basis[r]
        T[r] /= T[r, q]
        for i in range(m):
            if i != r:
                f = T[i, q]
                if f != 0.0:
                    T[i] -= f * T[r]
        dq = d[q]
        for j in range(ncol):
            d[j] -= dq * T[r, j]
        basis[r] = q
        is_basic[q] = True
        is_basic[leave] = False
        at_upper[q] = False
        at_upper[leave] = not increase
