"""Pure numpy implementations of the hot loops.

Same signatures and results as the compiled ``_kernels`` module.  The robust
value iteration here works on whole topological layers at once instead of one
component at a time, which keeps it vectorised.
"""

import numpy as np

BACKEND = "python"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TWO53 = 1.0 / 9007199254740992.0

OUTCOME_COLLISION = 0
OUTCOME_SAFE = 1
OUTCOME_UNFINISHED = 2


# -- graph structure --------------------------------------------------------

def scc(n, indptr, indices):
    """Strongly connected components (iterative Tarjan).

    Returns ``comp`` with components numbered in the order Tarjan closes
    them, so every edge goes from a component to one with a smaller or equal
    number, and the component count.
    """
    indptr = np.asarray(indptr).tolist()
    indices = np.asarray(indices).tolist()
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    comp = [-1] * n
    stack = []
    counter = 0
    n_comp = 0
    for root in range(n):
        if index[root] >= 0:
            continue
        work = [(root, indptr[root])]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, pos = work[-1]
            end = indptr[v + 1]
            pushed = False
            while pos < end:
                w = indices[pos]
                pos += 1
                if index[w] < 0:
                    work[-1] = (v, pos)
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, indptr[w]))
                    pushed = True
                    break
                if on_stack[w] and index[w] < low[v]:
                    low[v] = index[w]
            if pushed:
                continue
            work.pop()
            if low[v] == index[v]:
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp[w] = n_comp
                    if w == v:
                        break
                n_comp += 1
            if work:
                u = work[-1][0]
                if low[v] < low[u]:
                    low[u] = low[v]
    return np.asarray(comp, dtype=np.int64), n_comp


def component_levels(n_comp, comp, indptr, indices):
    """Longest-path depth of each component above the sinks (sinks are 0)."""
    level = np.zeros(n_comp, dtype=np.int64)
    order = np.argsort(comp, kind="stable")
    indptr = np.asarray(indptr)
    indices = np.asarray(indices)
    for v in order.tolist():
        c = comp[v]
        nbrs = comp[indices[indptr[v]:indptr[v + 1]]]
        nbrs = nbrs[nbrs != c]
        if len(nbrs):
            cand = level[nbrs].max() + 1
            if cand > level[c]:
                level[c] = cand
    return level


# -- robust Bellman operator ------------------------------------------------

def _row_values(row_ptr, succ, lo, hi, values, rows, maximize):
    """Greedy extremal expectation for the given rows (vectorised)."""
    if len(rows) == 0:
        return np.zeros(0)
    starts = row_ptr[rows]
    lengths = row_ptr[rows + 1] - starts
    edge_row = np.repeat(np.arange(len(rows)), lengths)
    offsets = np.arange(lengths.sum()) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    edges = np.repeat(starts, lengths) + offsets
    t = succ[edges]
    v = values[t]
    key = -v if maximize else v
    order = np.lexsort((t, key, edge_row))
    edges, v, er = edges[order], v[order], edge_row[order]
    l, h = lo[edges], hi[edges]
    slack = h - l
    n_rows = len(rows)
    base = np.bincount(er, weights=l * v, minlength=n_rows)
    remaining = np.maximum(1.0 - np.bincount(er, weights=l, minlength=n_rows), 0.0)
    # hand out the free mass position by position, exactly as a sequential loop would
    pos = np.arange(len(er)) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    extra = np.zeros(len(er))
    for k in range(int(lengths.max())):
        sel = np.flatnonzero(pos == k)
        r = er[sel]
        add = np.minimum(slack[sel], remaining[r])
        extra[sel] = add
        remaining[r] -= add
    return base + np.bincount(er, weights=extra * v, minlength=n_rows)


def _state_best(state_ptr, row_vals, states, maximize):
    counts = state_ptr[states + 1] - state_ptr[states]
    seg = np.concatenate(([0], np.cumsum(counts)[:-1]))
    red = np.maximum if maximize else np.minimum
    return red.reduceat(row_vals, seg)


def _rows_of_states(state_ptr, states):
    counts = state_ptr[states + 1] - state_ptr[states]
    base = np.repeat(state_ptr[states], counts)
    offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    return base + offs


def settled(diff, prev, tol):
    """Stop test on top of ``diff < tol``: the projected remaining error of
    a geometric tail, diff * r / (1 - r), must also be below ``tol / 8``
    (the observed ratio underestimates the true rate early on)."""
    if diff == 0.0:
        return True
    if prev <= 0.0:
        return False
    r = diff / prev
    if r >= 1.0:
        return False
    return diff * r / (1.0 - r) < tol * 0.125


def bellman_sweep(state_ptr, row_ptr, succ, lo, hi, values_in, values_out, fixed, maximize):
    """One Jacobi sweep over all non-fixed states; returns the sup-norm change."""
    free = np.flatnonzero(~fixed.astype(bool))
    values_out[:] = values_in
    if len(free) == 0:
        return 0.0
    rows = _rows_of_states(state_ptr, free)
    rv = _row_values(row_ptr, succ, lo, hi, values_in, rows, maximize)
    new = _state_best(state_ptr, rv, free, maximize)
    values_out[free] = new
    return float(np.max(np.abs(new - values_in[free])))


def solve_reach(state_ptr, row_ptr, succ, lo, hi, values, fixed, comp, n_comp,
                cyclic, graph_indptr, graph_indices, maximize, tol, max_iter):
    """Solve the reachability fixed point component by component.

    ``values`` is updated in place.  Returns (sweeps, converged) where sweeps
    counts the Bellman updates applied to the slowest component.
    """
    fixed = fixed.astype(bool)
    level = component_levels(n_comp, comp, graph_indptr, graph_indices)
    state_level = level[comp]
    by_level = np.argsort(state_level, kind="stable")
    bounds = np.searchsorted(state_level[by_level], np.arange(level.max() + 2 if n_comp else 1))
    sweeps = 0
    for lv in range(len(bounds) - 1):
        states = by_level[bounds[lv]:bounds[lv + 1]]
        states = states[~fixed[states]]
        if len(states) == 0:
            continue
        loop = cyclic[comp[states]].astype(bool)
        single = states[~loop]
        if len(single):
            rv = _row_values(row_ptr, succ, lo, hi, values,
                             _rows_of_states(state_ptr, single), maximize)
            values[single] = _state_best(state_ptr, rv, single, maximize)
            sweeps = max(sweeps, 1)
        looped = states[loop]
        if len(looped):
            rows = _rows_of_states(state_ptr, looped)
            it = 0
            prev = -1.0
            while True:
                rv = _row_values(row_ptr, succ, lo, hi, values, rows, maximize)
                new = _state_best(state_ptr, rv, looped, maximize)
                diff = float(np.max(np.abs(new - values[looped])))
                values[looped] = new
                it += 1
                if diff < tol and settled(diff, prev, tol):
                    break
                prev = diff
                if it >= max_iter:
                    return max(sweeps, it), False
            sweeps = max(sweeps, it)
    return sweeps, True


# -- braking simulation -----------------------------------------------------

def uniforms(keys, step):
    """Counter-based uniform draws in [0, 1): one per key for a given step."""
    with np.errstate(over="ignore"):
        z = keys + np.uint64(step + 1) * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * _TWO53


def simulate_batch(keys, params, max_steps):
    """Run independent braking episodes, one per key.

    ``params`` is the packed float vector built by ``aebs.pack_params``.
    Returns (outcome, steps) arrays.
    """
    (tau, amax, b1, b2, c1, c2, th, ts, ufric, big_l, d0, v0,
     slope, mid, const_p) = [float(x) for x in params]
    keys = np.asarray(keys, dtype=np.uint64)
    n = len(keys)
    outcome = np.full(n, OUTCOME_UNFINISHED, dtype=np.int8)
    steps = np.zeros(n, dtype=np.int32)
    if d0 <= big_l:
        outcome[:] = OUTCOME_COLLISION
        return outcome, steps
    if v0 <= 0.0:
        outcome[:] = OUTCOME_SAFE
        return outcome, steps
    idx = np.arange(n)
    d = np.full(n, d0)
    v = np.full(n, v0)
    for t in range(max_steps):
        if len(idx) == 0:
            break
        u = uniforms(keys[idx], t)
        if const_p == const_p:  # not NaN
            p = np.full(len(idx), const_p)
        else:
            p = 1.0 / (1.0 + np.exp(-slope * (d - mid)))
        det = u < p
        ttc = d / v
        dbr = v * ts + ufric * v * v / (2.0 * amax)
        wi = (d - dbr) / (v * th)
        hit1 = wi <= c1
        hit2 = ttc <= c2
        b = np.where(hit1 & hit2, b2, np.where(hit1 | hit2, b1, 0.0))
        b = np.where(det, b, 0.0)
        d = d - tau * v
        v = np.maximum(0.0, v - tau * b)
        crashed = d <= big_l
        stopped = ~crashed & (v == 0.0)
        done = crashed | stopped
        outcome[idx[crashed]] = OUTCOME_COLLISION
        outcome[idx[stopped]] = OUTCOME_SAFE
        steps[idx[done]] = t + 1
        keep = ~done
        idx, d, v = idx[keep], d[keep], v[keep]
    steps[idx] = max_steps
    return outcome, steps
