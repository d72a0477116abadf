# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops (see _kernels_py for the reference)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs
from libc.stdlib cimport malloc, free
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

BACKEND = "compiled"

cdef enum:
    C_COLLISION = 0
    C_SAFE = 1
    C_UNFINISHED = 2

OUTCOME_COLLISION = C_COLLISION
OUTCOME_SAFE = C_SAFE
OUTCOME_UNFINISHED = C_UNFINISHED

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t MIX1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t MIX2 = 0x94D049BB133111EBULL
cdef double TWO53 = 1.0 / 9007199254740992.0


# -- graph structure --------------------------------------------------------

def scc(Py_ssize_t n, const int64_t[::1] indptr, const int64_t[::1] indices):
    cdef int64_t[::1] index = np.full(n, -1, dtype=np.int64)
    cdef int64_t[::1] low = np.zeros(n, dtype=np.int64)
    cdef int64_t[::1] comp = np.full(n, -1, dtype=np.int64)
    cdef cnp.uint8_t[::1] on_stack = np.zeros(n, dtype=np.uint8)
    cdef int64_t[::1] stack = np.zeros(n, dtype=np.int64)
    cdef int64_t[::1] work_v = np.zeros(n, dtype=np.int64)
    cdef int64_t[::1] work_pos = np.zeros(n, dtype=np.int64)
    cdef Py_ssize_t sp = 0, wp = 0, root, v, w, u, pos, end
    cdef int64_t counter = 0, n_comp = 0
    cdef bint pushed
    for root in range(n):
        if index[root] >= 0:
            continue
        work_v[0] = root
        work_pos[0] = indptr[root]
        wp = 1
        index[root] = counter
        low[root] = counter
        counter += 1
        stack[sp] = root
        sp += 1
        on_stack[root] = 1
        while wp > 0:
            v = work_v[wp - 1]
            pos = work_pos[wp - 1]
            end = indptr[v + 1]
            pushed = False
            while pos < end:
                w = indices[pos]
                pos += 1
                if index[w] < 0:
                    work_pos[wp - 1] = pos
                    index[w] = counter
                    low[w] = counter
                    counter += 1
                    stack[sp] = w
                    sp += 1
                    on_stack[w] = 1
                    work_v[wp] = w
                    work_pos[wp] = indptr[w]
                    wp += 1
                    pushed = True
                    break
                if on_stack[w] and index[w] < low[v]:
                    low[v] = index[w]
            if pushed:
                continue
            wp -= 1
            if low[v] == index[v]:
                while True:
                    sp -= 1
                    w = stack[sp]
                    on_stack[w] = 0
                    comp[w] = n_comp
                    if w == v:
                        break
                n_comp += 1
            if wp > 0:
                u = work_v[wp - 1]
                if low[v] < low[u]:
                    low[u] = low[v]
    return np.asarray(comp), int(n_comp)


def component_levels(Py_ssize_t n_comp, const int64_t[::1] comp,
                     const int64_t[::1] indptr, const int64_t[::1] indices):
    cdef Py_ssize_t n = comp.shape[0], i, v, e, c, d
    cdef int64_t[::1] level = np.zeros(n_comp, dtype=np.int64)
    cdef int64_t[::1] order = np.argsort(np.asarray(comp), kind="stable").astype(np.int64)
    for i in range(n):
        v = order[i]
        c = comp[v]
        for e in range(indptr[v], indptr[v + 1]):
            d = comp[indices[e]]
            if d != c and level[d] + 1 > level[c]:
                level[c] = level[d] + 1
    return np.asarray(level)


# -- robust Bellman operator ------------------------------------------------

cdef double row_value(const int64_t[::1] row_ptr, const int64_t[::1] succ,
                      const double[::1] lo, const double[::1] hi,
                      const double[::1] values, Py_ssize_t r, bint maximize,
                      int64_t *buf) noexcept nogil:
    cdef Py_ssize_t a = row_ptr[r], b = row_ptr[r + 1], k = b - a
    cdef Py_ssize_t i, j
    cdef int64_t e, f
    cdef double ve, vf, base = 0.0, lsum = 0.0, remaining, add, extra = 0.0
    cdef bint before
    # insertion sort of edge ids by value (desc for max, asc for min), ties by state id
    for i in range(k):
        e = a + i
        j = i
        while j > 0:
            f = buf[j - 1]
            ve = values[succ[e]]
            vf = values[succ[f]]
            if maximize:
                before = ve > vf or (ve == vf and succ[e] < succ[f])
            else:
                before = ve < vf or (ve == vf and succ[e] < succ[f])
            if not before:
                break
            buf[j] = f
            j -= 1
        buf[j] = e
    for i in range(k):
        e = buf[i]
        base += lo[e] * values[succ[e]]
    for i in range(k):
        lsum += lo[buf[i]]
    remaining = 1.0 - lsum
    if remaining < 0.0:
        remaining = 0.0
    for i in range(k):
        e = buf[i]
        add = hi[e] - lo[e]
        if remaining < add:
            add = remaining
        remaining -= add
        extra += add * values[succ[e]]
    return base + extra


cdef inline double state_value(const int64_t[::1] state_ptr, const int64_t[::1] row_ptr,
                               const int64_t[::1] succ, const double[::1] lo,
                               const double[::1] hi, const double[::1] values,
                               Py_ssize_t s, bint maximize, int64_t *buf) noexcept nogil:
    cdef Py_ssize_t r
    cdef double best = 0.0, x
    for r in range(state_ptr[s], state_ptr[s + 1]):
        x = row_value(row_ptr, succ, lo, hi, values, r, maximize, buf)
        if r == state_ptr[s]:
            best = x
        elif maximize:
            if x > best:
                best = x
        elif x < best:
            best = x
    return best


cdef inline bint settled(double diff, double prev, double tol) noexcept nogil:
    # projected remaining error of a geometric tail, diff * r / (1 - r), with margin
    cdef double r
    if diff == 0.0:
        return True
    if prev <= 0.0:
        return False
    r = diff / prev
    if r >= 1.0:
        return False
    return diff * r / (1.0 - r) < tol * 0.125


cdef Py_ssize_t max_row_len(const int64_t[::1] row_ptr):
    cdef Py_ssize_t r, m = 1
    for r in range(row_ptr.shape[0] - 1):
        if row_ptr[r + 1] - row_ptr[r] > m:
            m = row_ptr[r + 1] - row_ptr[r]
    return m


def bellman_sweep(const int64_t[::1] state_ptr, const int64_t[::1] row_ptr,
                  const int64_t[::1] succ, const double[::1] lo, const double[::1] hi,
                  const double[::1] values_in, double[::1] values_out,
                  fixed, bint maximize):
    cdef const cnp.uint8_t[::1] fx = np.ascontiguousarray(fixed, dtype=np.uint8)
    cdef Py_ssize_t n = state_ptr.shape[0] - 1, s
    cdef double diff = 0.0, x
    cdef int64_t *buf = <int64_t *> malloc(max_row_len(row_ptr) * sizeof(int64_t))
    try:
        for s in range(n):
            if fx[s]:
                values_out[s] = values_in[s]
                continue
            x = state_value(state_ptr, row_ptr, succ, lo, hi, values_in, s, maximize, buf)
            if fabs(x - values_in[s]) > diff:
                diff = fabs(x - values_in[s])
            values_out[s] = x
    finally:
        free(buf)
    return diff


def solve_reach(const int64_t[::1] state_ptr, const int64_t[::1] row_ptr,
                const int64_t[::1] succ, const double[::1] lo, const double[::1] hi,
                double[::1] values, fixed, const int64_t[::1] comp, Py_ssize_t n_comp,
                cyclic, graph_indptr, graph_indices, bint maximize, double tol,
                long max_iter):
    cdef const cnp.uint8_t[::1] fx = np.ascontiguousarray(fixed, dtype=np.uint8)
    cdef const cnp.uint8_t[::1] cyc = np.ascontiguousarray(cyclic, dtype=np.uint8)
    cdef Py_ssize_t n = state_ptr.shape[0] - 1, c, i, s, a, b
    cdef int64_t[::1] members = np.argsort(np.asarray(comp), kind="stable").astype(np.int64)
    cdef int64_t[::1] start = np.searchsorted(np.asarray(comp)[np.asarray(members)],
                                              np.arange(n_comp + 1)).astype(np.int64)
    cdef double[::1] scratch = np.zeros(max(n, 1))
    cdef double diff, x, prev
    cdef long it, sweeps = 0
    cdef bint converged = True
    cdef int64_t *buf = <int64_t *> malloc(max_row_len(row_ptr) * sizeof(int64_t))
    try:
        with nogil:
            for c in range(n_comp):
                a = start[c]
                b = start[c + 1]
                if not cyc[c]:
                    s = members[a]
                    if not fx[s]:
                        values[s] = state_value(state_ptr, row_ptr, succ, lo, hi, values,
                                                s, maximize, buf)
                        if sweeps < 1:
                            sweeps = 1
                    continue
                it = 0
                prev = -1.0
                while True:
                    diff = 0.0
                    for i in range(a, b):
                        s = members[i]
                        if fx[s]:
                            scratch[i - a] = values[s]
                        else:
                            scratch[i - a] = state_value(state_ptr, row_ptr, succ, lo, hi,
                                                         values, s, maximize, buf)
                            x = fabs(scratch[i - a] - values[s])
                            if x > diff:
                                diff = x
                    for i in range(a, b):
                        values[members[i]] = scratch[i - a]
                    it += 1
                    if diff < tol and settled(diff, prev, tol):
                        break
                    prev = diff
                    if it >= max_iter:
                        converged = False
                        break
                if it > sweeps:
                    sweeps = it
                if not converged:
                    break
    finally:
        free(buf)
    return sweeps, converged


# -- braking simulation -----------------------------------------------------

cdef inline double draw(uint64_t key, long step) noexcept nogil:
    cdef uint64_t z = key + <uint64_t>(step + 1) * GOLDEN
    z = (z ^ (z >> 30)) * MIX1
    z = (z ^ (z >> 27)) * MIX2
    z = z ^ (z >> 31)
    return <double>(z >> 11) * TWO53


def uniforms(const uint64_t[::1] keys, long step):
    cdef Py_ssize_t i, n = keys.shape[0]
    cdef double[::1] out = np.empty(n)
    for i in range(n):
        out[i] = draw(keys[i], step)
    return np.asarray(out)


def simulate_batch(keys, params, long max_steps):
    cdef const uint64_t[::1] ks = np.ascontiguousarray(keys, dtype=np.uint64)
    cdef const double[::1] pr = np.ascontiguousarray(params, dtype=np.float64)
    cdef double tau = pr[0], amax = pr[1], b1 = pr[2], b2 = pr[3], c1 = pr[4]
    cdef double c2 = pr[5], th = pr[6], ts = pr[7], ufric = pr[8], big_l = pr[9]
    cdef double d0 = pr[10], v0 = pr[11], slope = pr[12], mid = pr[13], const_p = pr[14]
    cdef bint use_const = const_p == const_p
    cdef Py_ssize_t n = ks.shape[0], i
    cdef long t
    cdef double d, v, p, ttc, dbr, wi, b
    cdef bint hit1, hit2
    outcome_arr = np.full(n, OUTCOME_UNFINISHED, dtype=np.int8)
    steps_arr = np.zeros(n, dtype=np.int32)
    cdef cnp.int8_t[::1] outcome = outcome_arr
    cdef cnp.int32_t[::1] steps = steps_arr
    if d0 <= big_l:
        outcome_arr[:] = OUTCOME_COLLISION
        return outcome_arr, steps_arr
    if v0 <= 0.0:
        outcome_arr[:] = OUTCOME_SAFE
        return outcome_arr, steps_arr
    with nogil:
        for i in range(n):
            d = d0
            v = v0
            steps[i] = max_steps
            for t in range(max_steps):
                if use_const:
                    p = const_p
                else:
                    p = 1.0 / (1.0 + exp(-slope * (d - mid)))
                b = 0.0
                if draw(ks[i], t) < p:
                    ttc = d / v
                    dbr = v * ts + ufric * v * v / (2.0 * amax)
                    wi = (d - dbr) / (v * th)
                    hit1 = wi <= c1
                    hit2 = ttc <= c2
                    if hit1 and hit2:
                        b = b2
                    elif hit1 or hit2:
                        b = b1
                d = d - tau * v
                v = v - tau * b
                if v < 0.0:
                    v = 0.0
                if d <= big_l:
                    outcome[i] = C_COLLISION
                    steps[i] = t + 1
                    break
                if v == 0.0:
                    outcome[i] = C_SAFE
                    steps[i] = t + 1
                    break
    return outcome_arr, steps_arr
