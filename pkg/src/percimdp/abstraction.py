"""Perception abstraction: binning, per-bin detection intervals and the
closed-loop product with a controller-plant model."""

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch, DimensionUnsupported, DomainError, IoError, MissingPerceptionAction,
    MissingTruth, OutOfBounds, TooFewPoints,
)
from .models import Imdp, restrict
from .stats import BinomialSample, Box, clopper_pearson, fit_logistic, logistic_range_over_box, wald_band_over_box

METHODS = ("noCI", "GTPer", "logRegCI", "oursNPE", "ours")
BOUNDS_TOL = 1e-9


class PerceptionDataset:
    """Points ``x`` (n, dim) with binary detections ``z`` (n,)."""

    def __init__(self, x, z):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        z = np.asarray(z).astype(np.int8).ravel()
        if len(x) != len(z):
            raise DimensionMismatch(f"{len(x)} points but {len(z)} labels")
        if len(z) and not np.all((z == 0) | (z == 1)):
            raise DomainError("detections must be 0 or 1")
        self.x = x
        self.z = z

    def __len__(self):
        return len(self.z)

    @property
    def dim(self):
        return self.x.shape[1]

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(self.dim)] + ["z"])
        for row, z in zip(self.x.tolist(), self.z.tolist()):
            w.writerow([repr(v) for v in row] + [z])
        text = buf.getvalue()
        if path is None:
            return text
        try:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise IoError(f"cannot write dataset {path}: {exc}") from exc
        return text

    @classmethod
    def from_csv(cls, path):
        try:
            with open(path, encoding="utf-8", newline="") as fh:
                rows = list(csv.reader(fh))
        except OSError as exc:
            raise IoError(f"cannot read dataset {path}: {exc}") from exc
        if not rows:
            raise IoError(f"{path}: missing header")
        header = [h.strip() for h in rows[0]]
        dim = len(header) - 1
        if dim < 1 or header != [f"x{i + 1}" for i in range(dim)] + ["z"]:
            raise IoError(f"{path}: header must be x1,...,xn,z")
        body = [r for r in rows[1:] if r]
        try:
            data = np.array(body, dtype=float).reshape(-1, dim + 1)
        except ValueError as exc:
            raise IoError(f"{path}: {exc}") from exc
        try:
            return cls(data[:, :dim], data[:, dim])
        except DomainError as exc:
            raise IoError(f"{path}: {exc}") from exc


# -- partitions -------------------------------------------------------------

class BinPartition:
    """Grid of half-open bins, the last bin on each axis closed on top.

    Bins are numbered in C order over the per-axis edge lists.
    """

    def __init__(self, edges):
        self.edges = [np.asarray(e, dtype=float) for e in edges]
        for e in self.edges:
            if len(e) < 2 or np.any(np.diff(e) < 0):
                raise DomainError("each axis needs nondecreasing edges")
        self.shape = tuple(len(e) - 1 for e in self.edges)

    @property
    def dim(self):
        return len(self.edges)

    @property
    def n_bins(self):
        return int(np.prod(self.shape))

    @property
    def bounds(self):
        return Box([e[0] for e in self.edges], [e[-1] for e in self.edges])

    def bin_box(self, k):
        idx = np.unravel_index(k, self.shape)
        return Box([e[i] for e, i in zip(self.edges, idx)], [e[i + 1] for e, i in zip(self.edges, idx)])

    @property
    def bins(self):
        return [self.bin_box(k) for k in range(self.n_bins)]

    def locate(self, x):
        """Bin index for every row of x, -1 when out of bounds."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise DimensionMismatch(f"points have {x.shape[1]} coordinates, partition {self.dim}")
        idx = []
        ok = np.ones(len(x), dtype=bool)
        for d, e in enumerate(self.edges):
            col = x[:, d]
            i = np.searchsorted(e, col, side="right") - 1
            i = np.where(col == e[-1], len(e) - 2, i)
            ok &= (col >= e[0]) & (col <= e[-1])
            idx.append(np.clip(i, 0, len(e) - 2))
        flat = np.ravel_multi_index(idx, self.shape) if len(x) else np.zeros(0, dtype=np.int64)
        return np.where(ok, flat, -1)

    def overlapping(self, cell):
        """Bins sharing positive volume with ``cell`` (a zero-width side
        counts as overlapping the bin that contains it)."""
        if cell.dim != self.dim:
            raise DimensionMismatch("cell and partition differ in dimension")
        b = self.bounds
        if not b.contains_box(cell, BOUNDS_TOL):
            raise OutOfBounds(f"cell {cell} outside partition bounds {b}")
        per_axis = [_axis_bins(e, lo, hi) for e, lo, hi in zip(self.edges, cell.lower, cell.upper)]
        grids = np.meshgrid(*per_axis, indexing="ij")
        return np.ravel_multi_index([g.ravel() for g in grids], self.shape).tolist()

    def to_json(self):
        return {"edges": [e.tolist() for e in self.edges]}


def _axis_bins(e, lo, hi):
    nb = len(e) - 1
    if hi - lo <= BOUNDS_TOL:
        i = int(np.searchsorted(e, lo, side="right") - 1)
        return np.array([min(max(i, 0), nb - 1)])
    first = int(np.searchsorted(e, lo + BOUNDS_TOL, side="right") - 1)
    last = int(np.searchsorted(e, hi - BOUNDS_TOL, side="left") - 1)
    first, last = max(first, 0), min(max(last, first), nb - 1)
    keep = [i for i in range(first, last + 1) if min(hi, e[i + 1]) - max(lo, e[i]) > BOUNDS_TOL]
    return np.array(keep or [first])


def partition_equal_width(bounds, widths):
    """Equal-width grid; the last bin per axis absorbs any remainder."""
    widths = np.atleast_1d(np.asarray(widths, dtype=float))
    if len(widths) != bounds.dim:
        raise DimensionMismatch(f"{len(widths)} widths for a {bounds.dim}-dimensional box")
    edges = []
    for lo, hi, w in zip(bounds.lower, bounds.upper, widths):
        extent = hi - lo
        if not w > 0:
            raise DomainError(f"bin width must be positive, got {w}")
        if w > extent + 1e-12:
            raise DomainError(f"bin width {w} exceeds the extent {extent}")
        count = max(1, math.ceil(extent / w - 1e-9))
        e = [lo + k * w for k in range(count)] + [hi]
        edges.append(e)
    return BinPartition(edges)


def partition_equal_count(data, counts, bounds=None):
    """One-dimensional bins holding (as near as possible) equal numbers of
    points; edges sit halfway between neighbouring order statistics."""
    counts = list(np.atleast_1d(counts))
    if data.dim != 1 or len(counts) != 1:
        raise DimensionUnsupported("equal-count binning is only defined in one dimension")
    b = int(counts[0])
    if b < 2:
        raise DomainError("equal-count binning needs at least two bins")
    n = len(data)
    if n < b:
        raise TooFewPoints(f"{n} points cannot fill {b} bins")
    xs = np.sort(data.x[:, 0])
    sizes = [n // b + (1 if i < n % b else 0) for i in range(b)]
    cuts = np.cumsum(sizes)[:-1]
    inner = [(xs[c - 1] + xs[c]) / 2.0 for c in cuts]
    lo = xs[0] if bounds is None else min(bounds.lower[0], xs[0])
    hi = xs[-1] if bounds is None else max(bounds.upper[0], xs[-1])
    raw = [lo] + inner + [hi]
    edges = [raw[0]]
    for x in raw[1:]:
        if x > edges[-1]:
            edges.append(x)
    if len(edges) == 1:
        edges.append(edges[0])
    if len(edges) < len(raw):
        warnings.warn(f"merged {len(raw) - len(edges)} duplicate bin edge(s) caused by tied values",
                      stacklevel=2)
    return BinPartition([edges])


@dataclass
class BinCounts:
    samples: list
    dropped: int

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, k):
        return self.samples[k]

    def __iter__(self):
        return iter(self.samples)


def bin_empirical_probs(data, partition):
    """Per-bin detection counts; out-of-bounds points are dropped and counted."""
    idx = partition.locate(data.x)
    inside = idx >= 0
    n = np.bincount(idx[inside], minlength=partition.n_bins)
    k = np.bincount(idx[inside], weights=data.z[inside], minlength=partition.n_bins)
    samples = [BinomialSample(int(round(kk)), int(nn)) for kk, nn in zip(k, n)]
    return BinCounts(samples, int((~inside).sum()))


# -- perception model -------------------------------------------------------

@dataclass(frozen=True)
class AbstractionConfig:
    method: str
    partition: BinPartition
    alpha_mc: float = 0.05
    w_pe: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if not 0 < self.alpha_mc < 1:
            raise DomainError(f"alpha_mc must lie in (0, 1), got {self.alpha_mc}")
        if not 0 <= self.w_pe <= 1:
            raise DomainError(f"w_pe must lie in [0, 1], got {self.w_pe}")

    @property
    def per_bin_alpha(self):
        return self.alpha_mc / self.partition.n_bins


@dataclass(frozen=True)
class BinRecord:
    n: int
    k: int
    raw_lo: float
    raw_hi: float
    delta: float
    flagged: bool


@dataclass
class PerceptionModel:
    partition: BinPartition
    intervals: np.ndarray
    provenance: list
    method: str
    alpha_mc: float
    w_pe: float
    dropped: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        bins = []
        for k, (rec, (lo, hi)) in enumerate(zip(self.provenance, self.intervals.tolist())):
            box = self.partition.bin_box(k)
            bins.append({"lower": list(box.lower), "upper": list(box.upper), "lo": lo, "hi": hi,
                         "n": rec.n, "k": rec.k, "delta": rec.delta, "flagged": rec.flagged})
        return {"bins": bins, "method": self.method, "alpha_mc": self.alpha_mc, "w_pe": self.w_pe}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d):
        bins = d["bins"]
        dim = len(bins[0]["lower"])
        edges = []
        for axis in range(dim):
            pts = sorted({b["lower"][axis] for b in bins} | {b["upper"][axis] for b in bins})
            edges.append(pts)
        part = BinPartition(edges)
        order = [part.locate(np.array([[(lo + hi) / 2 for lo, hi in zip(b["lower"], b["upper"])]]))[0]
                 for b in bins]
        intervals = np.zeros((len(bins), 2))
        prov = [None] * len(bins)
        for k, b in zip(order, bins):
            intervals[k] = (b["lo"], b["hi"])
            prov[k] = BinRecord(b["n"], b["k"], math.nan, math.nan, b["delta"], b["flagged"])
        return cls(part, intervals, prov, d["method"], d["alpha_mc"], d["w_pe"])


def enlarged_interval(lo, hi, delta, w_pe=1.0):
    """Widen [lo, hi] by ``w_pe * delta`` on both sides, clamped to [0, 1]."""
    return max(lo - w_pe * delta, 0.0), min(hi + w_pe * delta, 1.0)


def _truth_range(truth, box):
    rng = getattr(truth, "range_over_box", None)
    if rng is not None:
        return rng(box)
    # plain callables: corners are exact for truths monotone along each axis
    vals = np.asarray(truth(box.corners()), dtype=float).ravel()
    return float(vals.min()), float(vals.max())


def build_perception_model(data, truth, cfg):
    """Per-bin detection intervals for one of the five abstraction methods."""
    part = cfg.partition
    if data.dim != part.dim:
        raise DimensionMismatch(f"data has {data.dim} coordinates, partition {part.dim}")
    if cfg.method == "GTPer" and truth is None:
        raise MissingTruth("method GTPer needs the true detection probability")
    counts = bin_empirical_probs(data, part)
    alpha = cfg.per_bin_alpha
    fit = fit_logistic(data) if cfg.method in ("ours", "logRegCI") else None
    intervals = np.zeros((part.n_bins, 2))
    prov = []
    for k, s in enumerate(counts):
        box = part.bin_box(k)
        flagged = s.n == 0
        delta = 0.0
        if cfg.method == "GTPer":
            lo, hi = _truth_range(truth, box)
            raw = (lo, hi)
        elif flagged:
            lo, hi, raw = 0.0, 1.0, (0.0, 1.0)
        elif cfg.method == "noCI":
            lo = hi = s.k / s.n
            raw = (lo, hi)
        elif cfg.method == "logRegCI":
            lo, hi = wald_band_over_box(fit, box, alpha)
            raw = (lo, hi)
        else:
            ci = clopper_pearson(s, alpha)
            raw = (ci.lo, ci.hi)
            lo, hi = raw
            if cfg.method == "ours":
                f_lo, f_hi = logistic_range_over_box(fit, box)
                delta = f_hi - f_lo
                lo, hi = enlarged_interval(lo, hi, delta, cfg.w_pe)
        lo, hi = min(max(lo, 0.0), 1.0), min(max(hi, 0.0), 1.0)
        intervals[k] = (lo, hi)
        prov.append(BinRecord(s.n, s.k, float(raw[0]), float(raw[1]), float(delta), bool(flagged)))
    extra = {}
    if fit is not None:
        extra["logistic"] = {"weights": fit.weights.tolist(), "intercept": fit.intercept}
    return PerceptionModel(part, intervals, prov, cfg.method, cfg.alpha_mc, cfg.w_pe,
                           counts.dropped, extra)


def detection_interval_for_cell(pm, cell):
    """Intervals of every perception bin overlapping ``cell``, in bin order."""
    return [tuple(pm.intervals[k]) for k in pm.partition.overlapping(cell)]


# -- closed-loop product ----------------------------------------------------

def _cell_arrays(cell_of, n):
    lower = getattr(cell_of, "lower", None)
    if lower is not None:
        return np.asarray(cell_of.lower, dtype=float), np.asarray(cell_of.upper, dtype=float)
    dim = None
    lo_rows, hi_rows = [None] * n, [None] * n
    for s in range(n):
        try:
            box = cell_of(s) if callable(cell_of) else cell_of[s]
        except (KeyError, IndexError):
            continue
        lo_rows[s], hi_rows[s] = box.lower, box.upper
        dim = box.dim
    if dim is None:
        return np.full((n, 1), np.nan), np.full((n, 1), np.nan)
    nan = (math.nan,) * dim
    return (np.array([r if r is not None else nan for r in lo_rows]),
            np.array([r if r is not None else nan for r in hi_rows]))


class ClosedLoopSkeleton:
    """Structure of the controller-plant x perception product that does not
    depend on the perception intervals, so sweeps can reuse it.

    Every non-terminal state s gets two successors-to-be, (s, detect) and
    (s, miss).  At s one action per overlapping perception bin moves to
    them with probabilities [lo, hi] and [1 - hi, 1 - lo]; at (s, a) the
    controller-plant rows for perception action a fire unchanged.
    """

    def __init__(self, mcpl, partition, cell_of):
        n = mcpl.n_states
        self.mcpl = mcpl
        self.partition = partition
        lengths = np.diff(mcpl.row_ptr)
        self_loop_rows = (lengths == 1) & (mcpl.succ[mcpl.row_ptr[:-1]] == mcpl.row_state)
        per_state_loops = np.bincount(mcpl.row_state, weights=self_loop_rows, minlength=n)
        terminal = per_state_loops == np.diff(mcpl.state_ptr)
        has0 = np.zeros(n, dtype=bool)
        has1 = np.zeros(n, dtype=bool)
        has0[mcpl.row_state[mcpl.row_per == 0]] = True
        has1[mcpl.row_state[mcpl.row_per == 1]] = True
        live = ~terminal
        missing = live & ~(has0 & has1)
        if missing.any():
            s = int(np.flatnonzero(missing)[0])
            raise MissingPerceptionAction(f"state {mcpl.name(s)} lacks a detect or miss action")
        lower, upper = _cell_arrays(cell_of, n)
        live_ids = np.flatnonzero(live)
        if np.isnan(lower[live_ids]).any():
            s = int(live_ids[np.isnan(lower[live_ids]).any(axis=1)][0])
            raise OutOfBounds(f"no cell given for state {mcpl.name(s)}")
        # bins overlapping each live cell
        bins_of = []
        for s in live_ids.tolist():
            bins_of.append(partition.overlapping(Box(lower[s], upper[s])))
        rank = np.full(n, -1)
        rank[live_ids] = np.arange(len(live_ids))
        n_prod = n + 2 * len(live_ids)
        miss_id = n + 2 * rank
        detect_id = miss_id + 1

        # perception rows at live states, copies of terminal rows, then intermediate rows
        row_state, row_per, row_reach, row_len = [], [], [], []
        edge_succ = []
        edge_bin = []        # bin index for perception edges, -1 for point edges
        edge_side = []       # 1 detect, 0 miss, -1 point edge
        edge_prob = []
        for s in range(n):
            if live[s]:
                for j, k in enumerate(bins_of[rank[s]]):
                    row_state.append(s)
                    row_per.append(-1)
                    row_reach.append(j)
                    row_len.append(2)
                    edge_succ += [miss_id[s], detect_id[s]]
                    edge_bin += [k, k]
                    edge_side += [0, 1]
                    edge_prob += [0.0, 0.0]
            else:
                for r in range(mcpl.state_ptr[s], mcpl.state_ptr[s + 1]):
                    a, b = mcpl.row_ptr[r], mcpl.row_ptr[r + 1]
                    row_state.append(s)
                    row_per.append(mcpl.row_per[r])
                    row_reach.append(mcpl.row_reach[r])
                    row_len.append(b - a)
                    edge_succ += mcpl.succ[a:b].tolist()
                    edge_bin += [-1] * (b - a)
                    edge_side += [-1] * (b - a)
                    edge_prob += mcpl.prob[a:b].tolist()
        for s in live_ids.tolist():
            for a_per, pid in ((0, miss_id[s]), (1, detect_id[s])):
                for r in range(mcpl.state_ptr[s], mcpl.state_ptr[s + 1]):
                    if mcpl.row_per[r] != a_per:
                        continue
                    a, b = mcpl.row_ptr[r], mcpl.row_ptr[r + 1]
                    row_state.append(pid)
                    row_per.append(a_per)
                    row_reach.append(mcpl.row_reach[r])
                    row_len.append(b - a)
                    edge_succ += mcpl.succ[a:b].tolist()
                    edge_bin += [-1] * (b - a)
                    edge_side += [-1] * (b - a)
                    edge_prob += mcpl.prob[a:b].tolist()
        self.n_states = n_prod
        self.initial = mcpl.initial
        self.row_state = np.asarray(row_state, dtype=np.int64)
        self.row_per = np.asarray(row_per, dtype=np.int64)
        self.row_reach = np.asarray(row_reach, dtype=np.int64)
        self.row_len = np.asarray(row_len, dtype=np.int64)
        self.edge_succ = np.asarray(edge_succ, dtype=np.int64)
        self.edge_bin = np.asarray(edge_bin, dtype=np.int64)
        self.edge_side = np.asarray(edge_side, dtype=np.int64)
        self.edge_prob = np.asarray(edge_prob, dtype=np.float64)
        labels = dict(mcpl.labels)
        for s in live_ids.tolist():
            if s in mcpl.labels:
                labels[int(miss_id[s])] = mcpl.labels[s]
                labels[int(detect_id[s])] = mcpl.labels[s]
        self.labels = labels
        names = None
        if mcpl.state_names is not None:
            names = list(mcpl.state_names) + [None] * (2 * len(live_ids))
            for s in live_ids.tolist():
                names[miss_id[s]] = f"{mcpl.state_names[s]}/miss"
                names[detect_id[s]] = f"{mcpl.state_names[s]}/detect"
        self.names = names
        self.bins_of = bins_of

    def instantiate(self, intervals):
        """Product Imdp for per-bin (lo, hi) detection intervals."""
        intervals = np.asarray(intervals, dtype=float)
        if intervals.shape != (self.partition.n_bins, 2):
            raise DimensionMismatch("one (lo, hi) pair per perception bin expected")
        lo = self.edge_prob.copy()
        hi = self.edge_prob.copy()
        det = self.edge_side == 1
        miss = self.edge_side == 0
        lo[det] = intervals[self.edge_bin[det], 0]
        hi[det] = intervals[self.edge_bin[det], 1]
        lo[miss] = 1.0 - intervals[self.edge_bin[miss], 1]
        hi[miss] = 1.0 - intervals[self.edge_bin[miss], 0]
        np.clip(lo, 0.0, 1.0, out=lo)
        np.clip(hi, 0.0, 1.0, out=hi)
        keep = hi > 0
        edge_row = np.repeat(np.arange(len(self.row_len)), self.row_len)
        lengths = np.bincount(edge_row[keep], minlength=len(self.row_len))
        row_ptr = np.concatenate(([0], np.cumsum(lengths)))
        # rows come out in state order by construction: original states first,
        # then (miss, detect) pairs in increasing source order
        model = Imdp(self.n_states, self.initial, self.labels, self.row_state, self.row_per,
                     self.row_reach, row_ptr, self.edge_succ[keep], lo[keep], hi[keep],
                     self.names)
        return restrict(model, model.reachable_from_initial())


def compose_closed_loop(mcpl, pm, cell_of, skeleton=None):
    """Product of a controller-plant Mdp with a perception model.

    ``cell_of`` maps each non-terminal state to its perception-space Box
    (a mapping, a callable, or a CellTable).  Pass a prebuilt
    ``ClosedLoopSkeleton`` to skip the structural work.
    """
    if skeleton is None:
        skeleton = ClosedLoopSkeleton(mcpl, pm.partition, cell_of)
    return skeleton.instantiate(pm.intervals)
