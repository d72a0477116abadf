"""Min/max reachability and invariant-safety probabilities on interval MDPs.

Robust value iteration: the inner step resolves each interval row greedily
(sort successors by current value, hand out upper bounds in that order, keep
everything else at its lower bound) and the outer step takes the best or
worst action.  States are solved one strongly connected component at a time
in reverse topological order, so acyclic models need a single pass.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NonConvergence, TooLarge
from .models import Imdp, Mdp

MAX_ITERATIONS = 10**6
BRUTE_FORCE_LIMITS = {"states": 8, "actions": 3, "successors": 4, "strategies": 200_000}


@dataclass(frozen=True)
class ReachQuery:
    model: Imdp
    target_label: str
    horizon: int | None = None
    tolerance: float = 1e-9
    max_iterations: int = MAX_ITERATIONS

    def __post_init__(self):
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be a positive integer")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class SafetyInterval:
    p_min: float
    p_max: float
    iterations: int = 0
    converged: bool = True

    @property
    def width(self):
        return self.p_max - self.p_min

    def contains(self, p, slack=0.0):
        return self.p_min - slack <= p <= self.p_max + slack


@dataclass(frozen=True)
class Witness:
    scheduler: dict
    adversary: dict


def _as_imdp(model):
    return model.to_imdp() if isinstance(model, Mdp) else model


def _structure(model, target_mask):
    """SCC decomposition of the graph with target states made absorbing
    (cached on the model, keyed by the target set)."""
    cache = model.__dict__.setdefault("_scc_cache", {})
    key = target_mask.tobytes()
    if key in cache:
        return cache[key]
    indptr, indices = model.successor_graph()
    if target_mask.any():
        # drop edges leaving targets: they are absorbing for the query
        counts = np.diff(indptr)
        counts[target_mask] = 0
        src = np.repeat(np.arange(model.n_states), np.diff(indptr))
        keep = ~target_mask[src]
        indices = indices[keep]
        indptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
    comp, n_comp = kernels.scc(model.n_states, indptr, indices)
    comp = np.asarray(comp, dtype=np.int64)
    sizes = np.bincount(comp, minlength=n_comp)
    cyclic = sizes > 1
    src = np.repeat(np.arange(model.n_states), np.diff(indptr))
    self_loop = src == indices
    cyclic[comp[src[self_loop]]] = True
    cache[key] = (indptr, indices, comp, n_comp, cyclic.astype(np.uint8))
    if len(cache) > 8:
        cache.pop(next(iter(cache)))
    return cache[key]


def solve_values(model, target_mask, maximize, tolerance=1e-9, horizon=None,
                 max_iterations=MAX_ITERATIONS):
    """Value vector of the min or max reachability problem.

    Returns (values, iterations, converged)."""
    model = _as_imdp(model)
    target_mask = np.asarray(target_mask, dtype=bool)
    values = target_mask.astype(np.float64)
    fixed = target_mask.astype(np.uint8)
    if horizon is not None:
        out = np.empty_like(values)
        for _ in range(horizon):
            kernels.bellman_sweep(model.state_ptr, model.row_ptr, model.succ, model.lo,
                                  model.hi, values, out, fixed, maximize)
            values, out = out, values
        return values, horizon, True
    indptr, indices, comp, n_comp, cyclic = _structure(model, target_mask)
    sweeps, converged = kernels.solve_reach(
        model.state_ptr, model.row_ptr, model.succ, model.lo, model.hi, values, fixed,
        comp, n_comp, cyclic, indptr, indices, maximize, tolerance, max_iterations)
    np.clip(values, 0.0, 1.0, out=values)
    return values, int(sweeps), bool(converged)


def reach_interval(q):
    """[min, max] probability of eventually (or within ``horizon`` steps)
    reaching a state labelled ``target_label``."""
    model = _as_imdp(q.model)
    target = model.label_mask(q.target_label)
    lo, it_lo, ok_lo = solve_values(model, target, False, q.tolerance, q.horizon, q.max_iterations)
    hi, it_hi, ok_hi = solve_values(model, target, True, q.tolerance, q.horizon, q.max_iterations)
    if not (ok_lo and ok_hi):
        raise NonConvergence(f"value iteration hit the cap of {q.max_iterations} sweeps")
    p_min, p_max = float(lo[model.initial]), float(hi[model.initial])
    return SafetyInterval(p_min, max(p_min, p_max), max(it_lo, it_hi), True)


def safety_interval(model, bad_label, tolerance=1e-9):
    """[min, max] probability of never visiting a ``bad_label`` state."""
    r = reach_interval(ReachQuery(_as_imdp(model), bad_label, tolerance=tolerance))
    return SafetyInterval(1.0 - r.p_max, 1.0 - r.p_min, r.iterations, r.converged)


def terminating_safety_interval(model, bad_label, goal_label, tolerance=1e-9):
    """Safety bounds for systems whose every run ends in ``bad`` or ``goal``.

    The lower bound is 1 - max P(reach bad) as in :func:`safety_interval`;
    the upper bound is max P(reach goal).  The latter discards abstract runs
    that stall forever between the two, which a concrete run never does.
    """
    model = _as_imdp(model)
    bad = reach_interval(ReachQuery(model, bad_label, tolerance=tolerance))
    goal_mask = model.label_mask(goal_label)
    good, it, ok = solve_values(model, goal_mask, True, tolerance)
    if not ok:
        raise NonConvergence("value iteration hit the iteration cap")
    lo = 1.0 - bad.p_max
    hi = min(float(good[model.initial]), 1.0 - bad.p_min)
    return SafetyInterval(lo, max(lo, hi), max(bad.iterations, it), True)


# -- greedy resolution and witnesses ----------------------------------------

def greedy_distribution(edges, values, maximize):
    """Extremal distribution of one interval row for a fixed value vector.

    ``edges`` is a list of (successor, lo, hi)."""
    order = sorted(edges, key=lambda e: ((-values[e[0]] if maximize else values[e[0]]), e[0]))
    remaining = max(1.0 - sum(lo for _, lo, _ in order), 0.0)
    dist = {}
    for t, lo, hi in order:
        add = min(hi - lo, remaining)
        remaining -= add
        dist[t] = lo + add
    return dict(sorted(dist.items()))


def chain_reach_probability(n, rows, target_mask):
    """Reach probabilities of an induced Markov chain ``rows[s] = {t: p}`` by
    a direct linear solve restricted to states that can reach the target."""
    target_mask = np.asarray(target_mask, dtype=bool)
    preds = [[] for _ in range(n)]
    for s, dist in rows.items():
        for t, p in dist.items():
            if p > 0:
                preds[t].append(s)
    can = target_mask.copy()
    stack = list(np.flatnonzero(target_mask))
    while stack:
        t = stack.pop()
        for s in preds[t]:
            if not can[s]:
                can[s] = True
                stack.append(s)
    unknown = np.flatnonzero(can & ~target_mask)
    x = target_mask.astype(float)
    if len(unknown) == 0:
        return x
    pos = {s: i for i, s in enumerate(unknown.tolist())}
    a = np.eye(len(unknown))
    b = np.zeros(len(unknown))
    for s, i in pos.items():
        for t, p in rows.get(s, {s: 1.0}).items():
            if target_mask[t]:
                b[i] += p
            elif t in pos:
                a[i, pos[t]] -= p
    x[unknown] = np.linalg.solve(a, b)
    return x


def extract_witness(q, mode):
    """Scheduler and interval resolution attaining the min or max bound."""
    if mode not in ("min", "max"):
        raise ValueError("mode must be 'min' or 'max'")
    model = _as_imdp(q.model)
    maximize = mode == "max"
    target = model.label_mask(q.target_label)
    values, _, ok = solve_values(model, target, maximize, q.tolerance, None, q.max_iterations)
    if not ok:
        raise NonConvergence("value iteration hit the iteration cap")
    options = {}
    for s in range(model.n_states):
        if target[s] or model.is_terminal(s):
            continue
        opts = []
        for a, edges in model.rows_of(s):
            dist = greedy_distribution(edges, values, maximize)
            opts.append((sum(p * values[t] for t, p in dist.items()), a, dist))
        options[s] = opts
    choice = {}
    if not maximize:
        for s, opts in options.items():
            best = min(v for v, _, _ in opts)
            choice[s] = next(o for o in opts if o[0] == best)
    else:
        # optimal actions that make progress towards the target, grown outward
        slack = max(10 * q.tolerance, 1e-12)
        done = target.copy()
        changed = True
        while changed:
            changed = False
            for s, opts in options.items():
                if s in choice:
                    continue
                best = max(v for v, _, _ in opts)
                if best <= 0:
                    continue
                for o in opts:
                    if o[0] >= best - slack and any(done[t] and p > 0 for t, p in o[2].items()):
                        choice[s] = o
                        done[s] = True
                        changed = True
                        break
        for s, opts in options.items():
            if s not in choice:
                best = max(v for v, _, _ in opts)
                choice[s] = next(o for o in opts if o[0] == best)
    scheduler = {s: c[1] for s, c in sorted(choice.items())}
    adversary = {(s, c[1]): c[2] for s, c in sorted(choice.items())}
    return Witness(scheduler, adversary)


def witness_values(model, witness, target_label):
    """Reach probabilities of the chain induced by a witness."""
    model = _as_imdp(model)
    target = model.label_mask(target_label)
    rows = {}
    for s in range(model.n_states):
        if target[s]:
            continue
        if s in witness.scheduler:
            rows[s] = witness.adversary[(s, witness.scheduler[s])]
        else:
            rows[s] = {s: 1.0}
    return chain_reach_probability(model.n_states, rows, target)


# -- brute-force oracle -----------------------------------------------------

def polytope_vertices(edges):
    """Vertices of an interval row's distribution polytope: the greedy
    assignment under every ordering of the successors."""
    verts = {}
    for perm in itertools.permutations(range(len(edges))):
        remaining = max(1.0 - sum(e[1] for e in edges), 0.0)
        dist = [e[1] for e in edges]
        for i in perm:
            add = min(edges[i][2] - edges[i][1], remaining)
            remaining -= add
            dist[i] += add
        verts.setdefault(tuple(round(p, 15) for p in dist), dist)
    return [dict(zip((e[0] for e in edges), d)) for d in verts.values()]


def brute_force_reach(model, target_label, chunk=20_000):
    """Exact min/max reachability by enumerating every memoryless scheduler
    crossed with every vertex resolution of every row."""
    model = _as_imdp(model)
    lim = BRUTE_FORCE_LIMITS
    n = model.n_states
    if n > lim["states"]:
        raise TooLarge(f"{n} states exceed the limit of {lim['states']}")
    target = model.label_mask(target_label)
    choices = []
    for s in range(n):
        rows = list(model.rows_of(s))
        if len(rows) > lim["actions"]:
            raise TooLarge(f"state {s} has {len(rows)} actions")
        if any(len(e) > lim["successors"] for _, e in rows):
            raise TooLarge(f"state {s} has a row with more than {lim['successors']} successors")
        if target[s]:
            choices.append([{s: 1.0}])
        else:
            choices.append([v for _, e in rows for v in polytope_vertices(e)])
    total = int(np.prod([len(c) for c in choices], dtype=np.float64))
    if total > lim["strategies"]:
        raise TooLarge(f"{total} strategy combinations exceed {lim['strategies']}")
    mats = []
    for c in choices:
        m = np.zeros((len(c), n))
        for i, dist in enumerate(c):
            for t, p in dist.items():
                m[i, t] = p
        mats.append(m)
    sizes = [len(c) for c in choices]
    best_lo, best_hi = 1.0, 0.0
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        p = np.empty((len(idx), n, n))
        rem = idx.copy()
        for s in range(n - 1, -1, -1):
            p[:, s, :] = mats[s][rem % sizes[s]]
            rem //= sizes[s]
        x = _batch_chain_reach(p, target)
        best_lo = min(best_lo, float(x[:, model.initial].min()))
        best_hi = max(best_hi, float(x[:, model.initial].max()))
    return SafetyInterval(best_lo, best_hi, total, True)


def _batch_chain_reach(p, target):
    b, n, _ = p.shape
    # states that can reach the target, per chain (boolean closure)
    reach = np.broadcast_to(target, (b, n)).copy()
    edge = p > 0
    for _ in range(n):
        reach = reach | np.any(edge & reach[:, None, :], axis=2)
    solve = reach & ~target
    a = np.broadcast_to(np.eye(n), (b, n, n)).copy()
    rhs = np.zeros((b, n))
    mask = solve[:, :, None] & ~target[None, None, :] & solve[:, None, :]
    a -= np.where(mask, p, 0.0)
    rhs = np.where(solve, (p * target[None, None, :]).sum(axis=2), 0.0)
    x = np.linalg.solve(a, rhs[..., None])[..., 0]
    return np.where(target, 1.0, np.where(solve, x, 0.0))
