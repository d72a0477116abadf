"""Finite MDPs and interval MDPs, their parallel composition and the
state-matched implementation check.

Both model types store their transition rows in compressed sparse row form:
rows are grouped by state (``state_ptr``), each row owns a slice of the edge
arrays (``row_ptr``), and successors inside a row are sorted by state id.
Models are immutable after construction.
"""

import functools
import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import (
    DanglingSuccessor, DomainError, InfeasibleRow, IntervalOrderError,
    NoActions, RowSumError, StateSetMismatch,
)

PROB_TOL = 1e-9
_CONTAIN_TOL = 1e-12


@dataclass(frozen=True)
class ActionLabel:
    """Action made of an optional perception bit and an optional
    reachability index."""

    per: int | None = None
    reach: int | None = None

    def __post_init__(self):
        if self.per is None and self.reach is None:
            raise DomainError("action label needs a perception or reachability part")
        if self.per is not None and self.per not in (0, 1):
            raise DomainError(f"perception action must be 0 or 1, got {self.per!r}")
        if self.reach is not None and (int(self.reach) != self.reach or self.reach < 0):
            raise DomainError(f"reachability index must be a nonnegative integer, got {self.reach!r}")

    def sort_key(self):
        return (self.per is None, self.per or 0, self.reach is None, self.reach or 0)

    def to_json(self):
        return {"per": self.per, "reach": self.reach}

    def __str__(self):
        parts = []
        if self.per is not None:
            parts.append(f"per={self.per}")
        if self.reach is not None:
            parts.append(f"reach={self.reach}")
        return ",".join(parts)


@functools.lru_cache(maxsize=None)
def action_label(per, reach):
    """Interned ActionLabel; ``-1`` or None mark an absent part."""
    per = None if per is None or per < 0 else int(per)
    reach = None if reach is None or reach < 0 else int(reach)
    return ActionLabel(per, reach)


def action_codes(actions):
    """(per, reach) integer arrays for a sequence of labels, -1 for absent."""
    per = np.fromiter((-1 if a.per is None else a.per for a in actions), dtype=np.int64,
                      count=len(actions))
    reach = np.fromiter((-1 if a.reach is None else a.reach for a in actions), dtype=np.int64,
                        count=len(actions))
    return per, reach


def as_action(a):
    if isinstance(a, ActionLabel):
        return a
    if isinstance(a, dict):
        return ActionLabel(a.get("per"), a.get("reach"))
    if isinstance(a, tuple) and len(a) == 2:
        return ActionLabel(*a)
    if isinstance(a, (int, np.integer)):
        return ActionLabel(reach=int(a))
    raise DomainError(f"cannot interpret {a!r} as an action label")


@dataclass(frozen=True)
class ImplementsVerdict:
    holds: bool
    counterexample: tuple | None = None


class _RowModel:
    """Shared storage and queries for Mdp and Imdp."""

    empty_row_error = RowSumError

    def __init__(self, n_states, initial, labels, row_state, row_per, row_reach,
                 row_ptr, succ, lo, hi, state_names=None):
        self.n_states = int(n_states)
        self.initial = int(initial)
        self.labels = {int(s): frozenset(v) for s, v in labels.items() if v}
        self.row_state = np.asarray(row_state, dtype=np.int64)
        self.row_per = np.asarray(row_per, dtype=np.int64)
        self.row_reach = np.asarray(row_reach, dtype=np.int64)
        self.row_ptr = np.asarray(row_ptr, dtype=np.int64)
        self.succ = np.asarray(succ, dtype=np.int64)
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        self.state_names = tuple(state_names) if state_names is not None else None
        counts = np.bincount(self.row_state, minlength=self.n_states)
        self.state_ptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        self._actions = None
        for arr in (self.row_state, self.row_per, self.row_reach, self.row_ptr, self.succ,
                    self.lo, self.hi, self.state_ptr):
            arr.setflags(write=False)

    @property
    def row_action(self):
        if self._actions is None:
            self._actions = tuple(action_label(p, r) for p, r in
                                  zip(self.row_per.tolist(), self.row_reach.tolist()))
        return self._actions

    # structure checks shared by both model kinds
    def _validate_structure(self):
        n = self.n_states
        if n < 1:
            raise NoActions("model has no states")
        if not 0 <= self.initial < n:
            raise DanglingSuccessor(f"initial state {self.initial} outside 0..{n - 1}")
        nr = len(self.row_state)
        if len(self.row_per) != nr or len(self.row_reach) != nr or len(self.row_ptr) != nr + 1:
            raise DomainError("row arrays disagree in length")
        if nr and (self.row_per.min() < -1 or self.row_per.max() > 1 or self.row_reach.min() < -1
                   or np.any((self.row_per < 0) & (self.row_reach < 0))):
            raise DomainError("malformed action codes")
        if np.any(np.diff(self.row_state) < 0):
            raise DomainError("rows must be grouped by state in increasing order")
        if len(self.succ) and (self.succ.min() < 0 or self.succ.max() >= n):
            bad = int(self.succ[(self.succ < 0) | (self.succ >= n)][0])
            raise DanglingSuccessor(f"successor {bad} is not a state of the model")
        for s in self.labels:
            if not 0 <= s < n:
                raise DanglingSuccessor(f"label attached to unknown state {s}")
        empty = np.flatnonzero(np.diff(self.state_ptr) == 0)
        if len(empty):
            raise NoActions(f"state {int(empty[0])} has no actions")
        lengths = np.diff(self.row_ptr)
        if np.any(lengths == 0):
            r = int(np.flatnonzero(lengths == 0)[0])
            raise self.empty_row_error(f"row {self._row_name(r)} has no successors")
        # successors strictly increasing inside every row
        if len(self.succ) > 1:
            step = np.diff(self.succ)
            same_row = np.ones(len(step), dtype=bool)
            same_row[self.row_ptr[1:-1] - 1] = False
            if np.any(same_row & (step <= 0)):
                raise DomainError("successors must be unique and sorted inside each row")

    def _row_name(self, r):
        return f"({int(self.row_state[r])}, {self.row_action[r]})"

    @property
    def n_rows(self):
        return len(self.row_state)

    @property
    def n_edges(self):
        return len(self.succ)

    @property
    def actions(self):
        """Sorted action alphabet."""
        return sorted(set(self.row_action), key=ActionLabel.sort_key)

    def rows_of(self, s):
        """Yield (action, [(successor, lo, hi), ...]) for state s."""
        for r in range(self.state_ptr[s], self.state_ptr[s + 1]):
            a, b = self.row_ptr[r], self.row_ptr[r + 1]
            yield self.row_action[r], list(zip(self.succ[a:b].tolist(),
                                               self.lo[a:b].tolist(),
                                               self.hi[a:b].tolist()))

    def enabled(self, s):
        return [self.row_action[r] for r in range(self.state_ptr[s], self.state_ptr[s + 1])]

    def row_index(self, s, action):
        action = as_action(action)
        for r in range(self.state_ptr[s], self.state_ptr[s + 1]):
            if self.row_action[r] == action:
                return r
        raise KeyError((s, action))

    def label_mask(self, label):
        mask = np.zeros(self.n_states, dtype=bool)
        for s, props in self.labels.items():
            if label in props:
                mask[s] = True
        return mask

    def states_with(self, label):
        return np.flatnonzero(self.label_mask(label))

    def labels_of(self, s):
        return self.labels.get(s, frozenset())

    def is_terminal(self, s):
        for r in range(self.state_ptr[s], self.state_ptr[s + 1]):
            a, b = self.row_ptr[r], self.row_ptr[r + 1]
            if b - a != 1 or self.succ[a] != s:
                return False
        return True

    def successor_graph(self):
        """State-level adjacency (CSR indptr, indices) over edges with hi > 0."""
        src = np.repeat(self.row_state, np.diff(self.row_ptr))
        order = np.lexsort((self.succ, src))
        src, dst = src[order], self.succ[order]
        keep = np.ones(len(src), dtype=bool)
        keep[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
        src, dst = src[keep], dst[keep]
        indptr = np.concatenate(([0], np.cumsum(np.bincount(src, minlength=self.n_states))))
        return indptr.astype(np.int64), dst.astype(np.int64)

    def reachable_from_initial(self):
        """Boolean mask of states reachable over edges with hi > 0."""
        indptr, indices = self.successor_graph()
        seen = np.zeros(self.n_states, dtype=bool)
        seen[self.initial] = True
        frontier = np.array([self.initial])
        while len(frontier):
            counts = indptr[frontier + 1] - indptr[frontier]
            starts = np.repeat(indptr[frontier], counts)
            offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
            nxt = np.unique(indices[starts + offs])
            frontier = nxt[~seen[nxt]]
            seen[frontier] = True
        return seen

    def name(self, s):
        return self.state_names[s] if self.state_names is not None else str(s)


class Mdp(_RowModel):
    """MDP with exact transition probabilities (``lo`` and ``hi`` coincide)."""

    kind = "mdp"

    def __init__(self, n_states, initial, labels, row_state, row_per, row_reach,
                 row_ptr, succ, prob, state_names=None, validate=True):
        prob = np.asarray(prob, dtype=np.float64)
        super().__init__(n_states, initial, labels, row_state, row_per, row_reach,
                         row_ptr, succ, prob, prob, state_names)
        if validate:
            self._validate()

    @property
    def prob(self):
        return self.lo

    def _validate(self):
        self._validate_structure()
        if len(self.prob) and (self.prob.min() < 0 or self.prob.max() > 1):
            raise RowSumError("transition probability outside [0, 1]")
        sums = np.add.reduceat(self.prob, self.row_ptr[:-1]) if self.n_rows else np.zeros(0)
        off = np.abs(sums - 1.0) > PROB_TOL
        if np.any(off):
            r = int(np.flatnonzero(off)[0])
            raise RowSumError(f"row {self._row_name(r)} sums to {sums[r]!r}")

    def to_imdp(self):
        return Imdp(self.n_states, self.initial, self.labels, self.row_state,
                    self.row_per, self.row_reach, self.row_ptr, self.succ, self.prob,
                    self.prob, self.state_names, validate=False)


class Imdp(_RowModel):
    """MDP whose transition probabilities are only known up to intervals."""

    kind = "imdp"
    empty_row_error = InfeasibleRow

    def __init__(self, n_states, initial, labels, row_state, row_per, row_reach,
                 row_ptr, succ, lo, hi, state_names=None, validate=True):
        super().__init__(n_states, initial, labels, row_state, row_per, row_reach,
                         row_ptr, succ, lo, hi, state_names)
        if validate:
            self._validate()

    def _validate(self):
        self._validate_structure()
        if np.any(self.lo > self.hi):
            e = int(np.flatnonzero(self.lo > self.hi)[0])
            raise IntervalOrderError(f"interval [{self.lo[e]!r}, {self.hi[e]!r}] has lo > hi")
        if len(self.lo) and (self.lo.min() < 0 or self.hi.max() > 1):
            raise IntervalOrderError("interval bound outside [0, 1]")
        if np.any(self.hi <= 0):
            raise IntervalOrderError("entries with hi = 0 must be omitted")
        if self.n_rows:
            slo = np.add.reduceat(self.lo, self.row_ptr[:-1])
            shi = np.add.reduceat(self.hi, self.row_ptr[:-1])
            bad = (slo > 1 + PROB_TOL) | (shi < 1 - PROB_TOL)
            if np.any(bad):
                r = int(np.flatnonzero(bad)[0])
                raise InfeasibleRow(
                    f"row {self._row_name(r)} admits no distribution "
                    f"(sum lo = {slo[r]!r}, sum hi = {shi[r]!r})")


def restrict(m, keep):
    """Sub-model on the states in ``keep`` (a boolean mask closed under
    successors), renumbered in increasing order of the old ids."""
    keep = np.asarray(keep, dtype=bool)
    new_id = np.cumsum(keep) - 1
    row_keep = keep[m.row_state]
    lengths = np.diff(m.row_ptr)[row_keep]
    edge_keep = np.repeat(row_keep, np.diff(m.row_ptr))
    row_ptr = np.concatenate(([0], np.cumsum(lengths)))
    labels = {int(new_id[s]): v for s, v in m.labels.items() if keep[s]}
    names = None if m.state_names is None else [n for n, k in zip(m.state_names, keep) if k]
    args = (int(keep.sum()), int(new_id[m.initial]), labels, new_id[m.row_state[row_keep]],
            m.row_per[row_keep], m.row_reach[row_keep], row_ptr, new_id[m.succ[edge_keep]])
    if isinstance(m, Mdp):
        return Mdp(*args, m.prob[edge_keep], names, validate=False)
    return Imdp(*args, m.lo[edge_keep], m.hi[edge_keep], names, validate=False)


def degenerate(m):
    """Lift an Mdp to the Imdp with point intervals [p, p]."""
    return m.to_imdp()


# -- constructors from plain python data ------------------------------------

def _state_count(states):
    if isinstance(states, (int, np.integer)):
        return int(states)
    ids = sorted(int(s) for s in states)
    if ids != list(range(len(ids))):
        raise DomainError("state ids must be dense 0..n-1")
    return len(ids)


def _normalise_row(entries, interval):
    items = entries.items() if isinstance(entries, dict) else entries
    out = {}
    for item in items:
        t, *rest = item
        if len(rest) == 2:
            lo, hi = rest
        elif isinstance(rest[0], (tuple, list)):
            lo, hi = rest[0]
        else:
            lo = hi = rest[0]
        if not interval and lo != hi:
            raise DomainError("exact models take a single probability per edge")
        t = int(t)
        if t in out:
            raise DomainError(f"duplicate successor {t} in one row")
        out[t] = (float(lo), float(hi))
    return out


def _arrays_from_rows(n, rows, interval):
    keyed = []
    for key, entries in rows.items():
        s, a = key
        keyed.append((int(s), as_action(a), _normalise_row(entries, interval)))
    keyed.sort(key=lambda r: (r[0], r[1].sort_key()))
    seen = set()
    row_state, row_action, row_ptr, succ, lo, hi = [], [], [0], [], [], []
    for s, a, entries in keyed:
        if (s, a) in seen:
            raise DomainError(f"row ({s}, {a}) given twice")
        seen.add((s, a))
        if not 0 <= s < n:
            raise DanglingSuccessor(f"row for unknown state {s}")
        row_state.append(s)
        row_action.append(a)
        for t in sorted(entries):
            l, h = entries[t]
            if h == 0 and l == 0:
                continue
            succ.append(t)
            lo.append(l)
            hi.append(h)
        row_ptr.append(len(succ))
    return row_state, row_action, row_ptr, succ, lo, hi


def _labels(labels):
    labels = labels or {}
    return {int(s): frozenset([v] if isinstance(v, str) else v) for s, v in labels.items()}


def new_mdp(states, initial, rows, labels=None, state_names=None):
    """Validated Mdp from ``rows = {(state, action): {successor: prob}}``.

    Actions may be ActionLabel instances, ``(per, reach)`` tuples or plain
    integers (taken as reachability indices).
    """
    n = _state_count(states)
    rs, ra, rp, su, lo, _ = _arrays_from_rows(n, rows, interval=False)
    return Mdp(n, initial, _labels(labels), rs, *action_codes(ra), rp, su, lo, state_names)


def new_imdp(states, initial, rows, labels=None, state_names=None):
    """Validated Imdp from ``rows = {(state, action): {successor: (lo, hi)}}``.

    Lower bounds of 0 are accepted; entries with ``hi == 0`` are dropped.
    """
    n = _state_count(states)
    rs, ra, rp, su, lo, hi = _arrays_from_rows(n, rows, interval=True)
    return Imdp(n, initial, _labels(labels), rs, *action_codes(ra), rp, su, lo, hi, state_names)


# -- parallel composition ---------------------------------------------------

def _row_table(m):
    """state -> {action: [(succ, lo, hi)]}"""
    table = []
    for s in range(m.n_states):
        table.append(dict(m.rows_of(s)))
    return table


def _compose(m1, m2, interval):
    t1, t2 = _row_table(m1), _row_table(m2)
    alpha1, alpha2 = set(m1.row_action), set(m2.row_action)
    shared = alpha1 & alpha2
    index = {(m1.initial, m2.initial): 0}
    order = [(m1.initial, m2.initial)]
    queue = deque(order)
    rows = {}

    def visit(pair):
        if pair not in index:
            index[pair] = len(order)
            order.append(pair)
            queue.append(pair)
        return index[pair]

    while queue:
        s1, s2 = queue.popleft()
        here = index[(s1, s2)]
        out = []
        for a, edges1 in t1[s1].items():
            if a in shared:
                edges2 = t2[s2].get(a)
                if edges2 is None:
                    continue
                row = []
                for u, p, _ in edges1:
                    for v, l2, h2 in edges2:
                        lo, hi = min(1.0, max(0.0, p * l2)), min(1.0, max(0.0, p * h2))
                        if hi > 0:
                            row.append(((u, v), lo, hi))
                out.append((a, row))
            else:
                out.append((a, [((u, s2), l, h) for u, l, h in edges1]))
        for a, edges2 in t2[s2].items():
            if a not in alpha1:
                out.append((a, [((s1, v), l, h) for v, l, h in edges2]))
        if not out:
            # no jointly enabled action: the product state deadlocks, keep it absorbing
            a = next(iter(t1[s1]))
            out.append((a, [((s1, s2), 1.0, 1.0)]))
        out.sort(key=lambda item: item[0].sort_key())
        for a, row in out:
            entries = {}
            for pair, lo, hi in sorted(row):
                entries[visit(pair)] = (lo, hi)
            rows[(here, a)] = entries

    labels = {}
    for (s1, s2), i in index.items():
        props = m1.labels_of(s1) | m2.labels_of(s2)
        if props:
            labels[i] = props
    names = [f"({m1.name(s1)},{m2.name(s2)})" for s1, s2 in order]
    if interval:
        return new_imdp(len(order), 0, rows, labels, names)
    return new_mdp(len(order), 0, {k: {t: lo for t, (lo, _) in v.items()} for k, v in rows.items()},
                   labels, names)


def compose_mdp_mdp(m1, m2):
    """Parallel composition synchronising on the shared action alphabet.

    Only states reachable from the joint initial state are kept.
    """
    return _compose(m1, m2, interval=False)


def compose_mdp_imdp(m1, m2):
    """Parallel composition of an Mdp with an Imdp.

    Shared actions scale the interval by the exact probability; unshared
    actions move one component and keep their own (point or interval) bounds.
    """
    return _compose(m1, m2, interval=True)


def implements_state_matched(m, im):
    """Check that every exact row of ``m`` fits inside some interval row of
    ``im`` at the same state, using one interval action for all successors."""
    if m.n_states != im.n_states:
        raise StateSetMismatch(f"{m.n_states} states vs {im.n_states} states")
    for s in range(m.n_states):
        if m.labels_of(s) != im.labels_of(s):
            return ImplementsVerdict(False, (s, None, None, None, None))
    for s in range(m.n_states):
        candidates = list(im.rows_of(s))
        for a1, edges in m.rows_of(s):
            probs = {t: p for t, p, _ in edges}
            first_violation = None
            for _a2, iv_edges in candidates:
                bounds = {t: (l, h) for t, l, h in iv_edges}
                violation = None
                for t in sorted(set(probs) | set(bounds)):
                    p = probs.get(t, 0.0)
                    l, h = bounds.get(t, (0.0, 0.0))
                    if p < l - _CONTAIN_TOL or p > h + _CONTAIN_TOL:
                        violation = (s, a1, t, p, (l, h))
                        break
                if violation is None:
                    break
                if first_violation is None:
                    first_violation = violation
            else:
                if first_violation is None:
                    t, p, _ = edges[0]
                    first_violation = (s, a1, t, p, (0.0, 0.0))
                return ImplementsVerdict(False, first_violation)
    return ImplementsVerdict(True, None)


# -- serialisation ----------------------------------------------------------

def model_to_dict(m):
    rows = []
    for r in range(m.n_rows):
        a, b = m.row_ptr[r], m.row_ptr[r + 1]
        rows.append({
            "state": int(m.row_state[r]),
            "action": m.row_action[r].to_json(),
            "edges": [{"to": int(t), "lo": float(l), "hi": float(h)}
                      for t, l, h in zip(m.succ[a:b], m.lo[a:b], m.hi[a:b])],
        })
    out = {
        "kind": m.kind,
        "states": m.n_states,
        "initial": m.initial,
        "labels": {str(s): sorted(m.labels[s]) for s in sorted(m.labels)},
        "rows": rows,
    }
    if m.state_names is not None:
        out["names"] = list(m.state_names)
    return out


def model_to_json(m):
    return json.dumps(model_to_dict(m), sort_keys=True, indent=1) + "\n"


def model_from_dict(d):
    try:
        n = int(d["states"])
        rows = {}
        for row in d["rows"]:
            key = (int(row["state"]), as_action(row["action"]))
            rows[key] = {int(e["to"]): (float(e["lo"]), float(e["hi"])) for e in row["edges"]}
        labels = {int(s): v for s, v in d.get("labels", {}).items()}
        names = d.get("names")
        kind = d.get("kind", "imdp")
        initial = int(d["initial"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DomainError(f"malformed model document: {exc}") from exc
    if kind == "mdp":
        return new_mdp(n, initial, {k: {t: lo for t, (lo, _) in v.items()} for k, v in rows.items()},
                       labels, names)
    return new_imdp(n, initial, rows, labels, names)


def model_from_json(text):
    return model_from_dict(json.loads(text))


def format_transitions(m):
    """Readable one-line-per-edge listing for manual cross-checks."""
    lines = [f"# {m.kind} states={m.n_states} initial={m.initial} rows={m.n_rows} edges={m.n_edges}"]
    for s in sorted(m.labels):
        lines.append(f"label {m.name(s)}: {' '.join(sorted(m.labels[s]))}")
    for r in range(m.n_rows):
        a, b = m.row_ptr[r], m.row_ptr[r + 1]
        src = m.name(int(m.row_state[r]))
        for t, l, h in zip(m.succ[a:b].tolist(), m.lo[a:b].tolist(), m.hi[a:b].tolist()):
            if l == h:
                lines.append(f"{src} -[{m.row_action[r]}]-> {m.name(int(t))} {l!r}")
            else:
                lines.append(f"{src} -[{m.row_action[r]}]-> {m.name(int(t))} [{l!r}, {h!r}]")
    return "\n".join(lines) + "\n"
