"""Automatic emergency braking case study.

Discrete kinematics with a three-level braking controller driven by a noisy
obstacle detector, Monte Carlo ground truth, synthetic perception data, and
a grid abstraction of controller and plant whose every concrete step is
covered by some abstract successor.
"""

import bisect
import configparser
import csv
import io
import math
import os
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import kernels
from .errors import ConfigError, GridError, IoError, PercImdpError
from .models import Mdp
from .stats import BinomialSample, Box, clopper_pearson

COLLISION = "collision"
STOPPED = "stopped"
EDGE_DIGITS = 10
OVERLAP_TOL = 1e-9
# relative slack when deciding which braking regime a distance falls into
GUARD_TOL = 1e-9

STREAM_MONTE_CARLO = 1
STREAM_DATASET = 2


@dataclass(frozen=True)
class AebsConfig:
    tau: float = 0.1
    a_max: float = 10.0
    B1: float = 5.0
    B2: float = 10.0
    C1: float = 6.0
    C2: float = 1.5
    T_h: float = 2.0
    T_s: float = 0.0
    u_fric: float = 1.0
    L: float = 5.0
    d0: float = 50.0
    v0: float = 20.0

    def __post_init__(self):
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ConfigError(f"{f.name} must be finite")
        if not 0 < self.B1 < self.B2:
            raise ConfigError("braking powers need 0 < B1 < B2")
        if self.B2 != self.a_max:
            raise ConfigError("B2 must equal a_max")
        if self.tau <= 0 or self.L <= 0 or self.T_h <= 0 or self.a_max <= 0:
            raise ConfigError("tau, L, T_h and a_max must be positive")
        if self.T_s < 0 or self.u_fric < 0 or self.v0 < 0:
            raise ConfigError("T_s, u_fric and v0 must be nonnegative")


@dataclass(frozen=True)
class CarState:
    d: float
    v: float


class SyntheticPerception:
    """Detector that fires with probability 1 / (1 + exp(-k (d - x0)))."""

    def __init__(self, k=-0.1, x0=35.0):
        self.k = float(k)
        self.x0 = float(x0)

    def __call__(self, d):
        d = np.asarray(d, dtype=float)
        p = 1.0 / (1.0 + np.exp(-self.k * (d - self.x0)))
        return float(p) if p.ndim == 0 else p

    def range_over_box(self, box):
        a, b = self(box.lower[0]), self(box.upper[0])
        return min(a, b), max(a, b)

    def kernel_params(self):
        return self.k, self.x0, math.nan

    def __repr__(self):
        return f"SyntheticPerception(k={self.k}, x0={self.x0})"


class ConstantPerception:
    """Detector firing with a fixed probability everywhere."""

    def __init__(self, p):
        if not 0.0 <= p <= 1.0:
            raise ConfigError("constant detection probability must lie in [0, 1]")
        self.p = float(p)

    def __call__(self, d):
        d = np.asarray(d, dtype=float)
        return self.p if d.ndim == 0 else np.full(d.shape, self.p)

    def range_over_box(self, box):
        return self.p, self.p

    def kernel_params(self):
        return 0.0, 0.0, self.p


def detection_probability(s, p):
    return p(s.d)


def dynamics_step(s, b, cfg):
    v = s.v - cfg.tau * b
    return CarState(s.d - cfg.tau * s.v, v if v > 0.0 else 0.0)


def braking_command(s, detected, cfg):
    """Braking power chosen by the controller for a (possibly) detected obstacle."""
    if not detected or s.v <= 0.0:
        return 0.0
    v, d = s.v, s.d
    ttc = d / v
    dbr = v * cfg.T_s + cfg.u_fric * v * v / (2.0 * cfg.a_max)
    wi = (d - dbr) / (v * cfg.T_h)
    hit1 = wi <= cfg.C1
    hit2 = ttc <= cfg.C2
    if hit1 and hit2:
        return cfg.B2
    if hit1 or hit2:
        return cfg.B1
    return 0.0


# -- simulation -------------------------------------------------------------

_MASK = (1 << 64) - 1


def _uniform(key, step):
    """Scalar twin of the kernels' counter-based draw."""
    z = (key + (step + 1) * 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    z ^= z >> 31
    return (z >> 11) * (1.0 / 9007199254740992.0)


def trial_keys(seed, n, stream=STREAM_MONTE_CARLO):
    """Per-trial 64-bit keys derived from a master seed and a stream id."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return ss.generate_state(int(n), dtype=np.uint64) if n else np.zeros(0, dtype=np.uint64)


def pack_params(cfg, p):
    slope, mid, const = p.kernel_params()
    return np.array([cfg.tau, cfg.a_max, cfg.B1, cfg.B2, cfg.C1, cfg.C2, cfg.T_h, cfg.T_s,
                     cfg.u_fric, cfg.L, cfg.d0, cfg.v0, slope, mid, const], dtype=np.float64)


def step_bound(cfg, speed_floor=None):
    """Generous upper bound on episode length.

    With a speed lattice the slowest moving speed is known; otherwise fall
    back to a fixed large cap.
    """
    if speed_floor:
        return int(math.ceil((cfg.d0 - cfg.L) / (cfg.tau * speed_floor))
                   + math.ceil(cfg.v0 / (cfg.tau * cfg.B1))) + 2
    return 1_000_000


@dataclass
class TraceRow:
    t: int
    d: float
    v: float
    detected: int
    b: float


@dataclass
class Trace:
    rows: list
    outcome: str
    final: CarState

    def to_csv(self, path=None):
        """Write ``t,d,v,detected,b`` rows; returns the text."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "d", "v", "detected", "b"])
        for r in self.rows:
            w.writerow([r.t, repr(r.d), repr(r.v), r.detected, repr(r.b)])
        text = buf.getvalue()
        if path is not None:
            try:
                with open(path, "w", encoding="utf-8", newline="") as fh:
                    fh.write(text)
            except OSError as exc:
                raise IoError(f"cannot write trace {path}: {exc}") from exc
        return text


def simulate_trace(cfg, p, seed, key=None, max_steps=None):
    """One episode from (d0, v0).  The trial key is the first Monte Carlo
    key of ``seed`` unless given explicitly."""
    if key is None:
        key = int(trial_keys(seed, 1)[0])
    max_steps = max_steps or step_bound(cfg)
    slope, mid, const = p.kernel_params()
    d, v = cfg.d0, cfg.v0
    rows = []
    if d <= cfg.L:
        return Trace(rows, COLLISION, CarState(d, v))
    if v <= 0.0:
        return Trace(rows, "safe", CarState(d, v))
    for t in range(max_steps):
        prob = const if const == const else 1.0 / (1.0 + math.exp(-slope * (d - mid)))
        detected = _uniform(key, t) < prob
        b = braking_command(CarState(d, v), detected, cfg)
        rows.append(TraceRow(t, d, v, int(detected), b))
        s = dynamics_step(CarState(d, v), b, cfg)
        d, v = s.d, s.v
        if d <= cfg.L:
            return Trace(rows, COLLISION, s)
        if v == 0.0:
            return Trace(rows, "safe", s)
    raise PercImdpError(f"episode did not terminate within {max_steps} steps")


@dataclass(frozen=True)
class MonteCarloResult:
    estimate: float
    ci: object
    n_safe: int
    n_trials: int
    mean_steps: float


def monte_carlo_safety(cfg, p, n_trials, seed, alpha=0.05, chunk=250_000):
    """Fraction of safe episodes with its Clopper-Pearson interval."""
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    keys = trial_keys(seed, n_trials)
    params = pack_params(cfg, p)
    max_steps = step_bound(cfg)
    n_safe = 0
    total_steps = 0
    for start in range(0, n_trials, chunk):
        outcome, steps = kernels.simulate_batch(keys[start:start + chunk], params, max_steps)
        if np.any(outcome == kernels.OUTCOME_UNFINISHED):
            raise PercImdpError(f"an episode did not terminate within {max_steps} steps")
        n_safe += int(np.count_nonzero(outcome == kernels.OUTCOME_SAFE))
        total_steps += int(steps.sum())
    ci = clopper_pearson(BinomialSample(n_safe, n_trials), alpha)
    return MonteCarloResult(n_safe / n_trials, ci, n_safe, n_trials, total_steps / n_trials)


def generate_dataset(cfg, p, n_points, sampling, seed):
    """i.i.d. distances uniform on ``sampling = (lo, hi)`` with Bernoulli
    detections drawn from ``p``."""
    from .abstraction import PerceptionDataset

    lo, hi = float(sampling[0]), float(sampling[1])
    if hi < lo:
        raise ConfigError(f"sampling range [{lo}, {hi}] is empty")
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAM_DATASET,))
    rng = np.random.Generator(np.random.PCG64(ss))
    x = rng.uniform(lo, hi, n_points) if hi > lo else np.full(n_points, lo)
    z = (rng.random(n_points) < p(x)).astype(np.int8)
    return PerceptionDataset(x.reshape(-1, 1), z)


# -- grid abstraction -------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Distance and speed cell edges.

    With ``speed_quantum`` set, concrete speeds are restricted to multiples
    of the quantum (the reachable set when v0, tau*B1 and tau*B2 are all
    multiples of it) and each cell stands for the lattice speeds inside it.
    """

    d_edges: tuple
    v_edges: tuple
    speed_quantum: float | None = None

    def __post_init__(self):
        d = tuple(round(float(x), EDGE_DIGITS) for x in self.d_edges)
        v = tuple(round(float(x), EDGE_DIGITS) for x in self.v_edges)
        if len(d) < 2 or len(v) < 2:
            raise GridError("each axis needs at least two edges")
        if any(b <= a for a, b in zip(d, d[1:])) or any(b <= a for a, b in zip(v, v[1:])):
            raise GridError("grid edges must be strictly increasing")
        if v[0] != 0.0:
            raise GridError("speed edges must start at 0")
        if self.speed_quantum is not None and not self.speed_quantum > 0:
            raise GridError("speed quantum must be positive")
        object.__setattr__(self, "d_edges", d)
        object.__setattr__(self, "v_edges", v)

    @property
    def shape(self):
        return len(self.d_edges) - 1, len(self.v_edges) - 1

    def check(self, cfg):
        if cfg.L not in self.d_edges:
            raise GridError(f"collision distance {cfg.L} must be a distance edge")
        if not (self.d_edges[0] <= 0.0 and self.d_edges[-1] > cfg.d0):
            raise GridError(f"distance edges must cover [0, {cfg.d0}]")
        if not self.v_edges[-1] > cfg.v0:
            raise GridError(f"speed edges must cover [0, {cfg.v0}]")
        q = self.speed_quantum
        if q is not None:
            for name, val in (("v0", cfg.v0), ("tau*B1", cfg.tau * cfg.B1),
                              ("tau*B2", cfg.tau * cfg.B2)):
                m = val / q
                if abs(m - round(m)) > 1e-9:
                    raise GridError(f"{name} = {val} is not a multiple of the speed quantum {q}")

    def speed_points(self, j):
        """Lattice speeds (> 0) inside speed cell j, or None without a lattice."""
        q = self.speed_quantum
        if q is None:
            return None
        lo, hi = self.v_edges[j], self.v_edges[j + 1]
        m = max(1, math.ceil(lo / q - 1e-9))
        pts = []
        while m * q < hi - 1e-9:
            pts.append(m * q)
            m += 1
        return tuple(pts)

    def has_moving_states(self, j):
        pts = self.speed_points(j)
        return bool(pts) if pts is not None else self.v_edges[j + 1] > 0

    def locate_d(self, d):
        i = bisect.bisect_right(self.d_edges, d) - 1
        return i if 0 <= i < len(self.d_edges) - 1 else -1

    def locate_v(self, v):
        j = bisect.bisect_right(self.v_edges, v) - 1
        return j if 0 <= j < len(self.v_edges) - 1 else -1


def _edges_from(start, phase, width, limit):
    k = 0 if phase > 0 else 1
    out = []
    while True:
        x = start + (phase + k) * width
        out.append(x)
        if x > limit:
            return out
        k += 1


def make_grid(cfg, d_width=1.0, v_width=1.0, d_phase=0.0, v_phase=0.0, speed_quantum=None):
    """Uniform grid above the collision distance, with edges at
    L + (d_phase + k) * d_width and (v_phase + k) * v_width."""
    if d_width <= 0 or v_width <= 0:
        raise GridError("grid widths must be positive")
    d_edges = [0.0, cfg.L] + _edges_from(cfg.L, d_phase, d_width, cfg.d0)
    v_edges = [0.0] + _edges_from(0.0, v_phase, v_width, cfg.v0)
    return GridSpec(tuple(d_edges), tuple(v_edges), speed_quantum)


def default_grid(cfg, d_width=0.05, speed_quantum=0.5):
    """Grid matched to the reachable lattice: speed cells centred on the
    multiples of ``speed_quantum`` and distance edges half a lattice step
    away from every reachable distance when ``d_width`` is a multiple of
    tau * speed_quantum."""
    return make_grid(cfg, d_width=d_width, v_width=speed_quantum,
                     d_phase=0.5 * cfg.tau * speed_quantum / d_width, v_phase=0.5,
                     speed_quantum=speed_quantum)


def _regimes(cfg, v, d_lo, d_hi, disabled=None):
    """(command, sub_lo, sub_hi) pieces of [d_lo, d_hi] at an exact speed v
    with the obstacle detected; boundaries padded so rounding in the
    concrete controller cannot escape."""
    d_ttc = cfg.C2 * v
    d_wi = cfg.C1 * v * cfg.T_h + v * cfg.T_s + cfg.u_fric * v * v / (2.0 * cfg.a_max)
    low, high = min(d_ttc, d_wi), max(d_ttc, d_wi)
    pad_low = GUARD_TOL * max(1.0, abs(low))
    pad_high = GUARD_TOL * max(1.0, abs(high))
    pieces = [(cfg.B2, d_lo, min(d_hi, low + pad_low)),
              (cfg.B1, max(d_lo, low - pad_low), min(d_hi, high + pad_high)),
              (0.0, max(d_lo, high - pad_high), d_hi)]
    return [(b, a, c) for b, a, c in pieces if a <= c and b != disabled]


def _guard_sets(cfg, d_lo, d_hi, v_lo, v_hi, disabled=None):
    """Commands whose guards are satisfiable somewhere in the box
    (speed range (v_lo, v_hi], v_lo may be 0)."""
    def ttc(d, v):
        return math.inf if v <= 0 else d / v

    def wi(d, v):
        if v <= 0:
            return math.inf
        return (d - v * cfg.T_s - cfg.u_fric * v * v / (2.0 * cfg.a_max)) / (v * cfg.T_h)

    # TTC and WI grow with d and shrink with v: extremes sit on two corners
    ttc_max, wi_max = ttc(d_hi, v_lo), wi(d_hi, v_lo)
    ttc_min, wi_min = ttc(d_lo, v_hi), wi(d_lo, v_hi)
    can_wi_hit, can_wi_miss = wi_min <= cfg.C1 + GUARD_TOL, wi_max > cfg.C1 - GUARD_TOL
    can_ttc_hit, can_ttc_miss = ttc_min <= cfg.C2 + GUARD_TOL, ttc_max > cfg.C2 - GUARD_TOL
    cmds = []
    if can_wi_hit and can_ttc_hit:
        cmds.append(cfg.B2)
    if (can_wi_hit and can_ttc_miss) or (can_wi_miss and can_ttc_hit):
        cmds.append(cfg.B1)
    if can_wi_miss and can_ttc_miss:
        cmds.append(0.0)
    return [b for b in cmds if b != disabled]


class ControllerPlantAbstraction:
    """Non-probabilistic MDP over grid cells plus `collision` and `stopped`.

    Attributes: ``mdp``, ``grid``, ``cfg``, ``cells`` (state -> (i, j) or
    None for the two terminal states), ``collision`` and ``stopped`` ids.
    """

    def __init__(self, mdp, grid, cfg, cells, collision, stopped, successors):
        self.mdp = mdp
        self.grid = grid
        self.cfg = cfg
        self.cells = cells
        self.collision = collision
        self.stopped = stopped
        self.successors = successors
        self.state_of_cell = {c: s for s, c in enumerate(cells) if c is not None}

    @property
    def n_states(self):
        return self.mdp.n_states

    def cell_box(self, s):
        i, j = self.cells[s]
        g = self.grid
        return Box([g.d_edges[i], g.v_edges[j]], [g.d_edges[i + 1], g.v_edges[j + 1]])

    def perception_cells(self):
        """Distance interval of every state (NaN rows for terminal states);
        the closed-loop product reads perception bins off these."""
        lower = np.full((self.n_states, 1), np.nan)
        upper = np.full((self.n_states, 1), np.nan)
        for s, c in enumerate(self.cells):
            if c is not None:
                lower[s, 0] = max(self.grid.d_edges[c[0]], self.cfg.L)
                upper[s, 0] = self.grid.d_edges[c[0] + 1]
        return CellTable(lower, upper)

    def classify(self, state):
        """Abstract state holding a concrete CarState (or -1 if none)."""
        if state.d <= self.cfg.L:
            return self.collision
        if state.v <= 0.0:
            return self.stopped
        i, j = self.grid.locate_d(state.d), self.grid.locate_v(state.v)
        return self.state_of_cell.get((i, j), -1)


@dataclass
class CellTable:
    """Per-state boxes as two (n_states, dim) arrays; NaN marks states with
    no cell (terminal states)."""

    lower: np.ndarray
    upper: np.ndarray

    def __getitem__(self, s):
        if np.isnan(self.lower[s, 0]):
            raise KeyError(s)
        return Box(self.lower[s], self.upper[s])


def _d_cells(grid, a, b, floor):
    """Distance cells overlapping [a, b] above ``floor`` by more than the
    tolerance; a degenerate range maps to the cell holding it."""
    a = max(a, floor)
    edges = grid.d_edges
    if b - a <= OVERLAP_TOL:
        i = grid.locate_d(b)
        return [i] if i >= 0 else []
    first = max(bisect.bisect_right(edges, a + OVERLAP_TOL) - 1, 0)
    last = min(bisect.bisect_left(edges, b - OVERLAP_TOL) - 1, len(edges) - 2)
    return [i for i in range(first, last + 1)
            if min(b, edges[i + 1]) - max(a, edges[i]) > OVERLAP_TOL]


def _v_cells(grid, a, b):
    edges = grid.v_edges
    if b - a <= OVERLAP_TOL:
        j = grid.locate_v(b)
        return [j] if j >= 0 else []
    first = max(bisect.bisect_right(edges, a + OVERLAP_TOL) - 1, 0)
    last = min(bisect.bisect_left(edges, b - OVERLAP_TOL) - 1, len(edges) - 2)
    return [j for j in range(first, last + 1)
            if min(b, edges[j + 1]) - max(a, edges[j]) > OVERLAP_TOL]


def _cell_successors(grid, cfg, i, j, a_per, disabled):
    """Set of successor keys: (i', j') cells or the strings COLLISION / STOPPED."""
    d_lo, d_hi = grid.d_edges[i], grid.d_edges[i + 1]
    out = set()
    if d_hi <= cfg.L:
        out.add(COLLISION)
        return out
    d_lo = max(d_lo, cfg.L)
    speeds = grid.speed_points(j)
    tau = cfg.tau

    def add_image(a, b, vmin, vmax):
        # distance image [a, b]; speed image [vmin, vmax] (after clamping at 0)
        if a <= cfg.L + OVERLAP_TOL:
            out.add(COLLISION)
        if b <= cfg.L:
            return
        if vmin <= OVERLAP_TOL:
            out.add(STOPPED)
        if vmax <= OVERLAP_TOL:
            return
        dcells = _d_cells(grid, a, b, cfg.L)
        vcells = _v_cells(grid, max(vmin, 0.0), vmax)
        for ii in dcells:
            for jj in vcells:
                out.add((ii, jj))

    if speeds is None:
        v_lo, v_hi = grid.v_edges[j], grid.v_edges[j + 1]
        cmds = _guard_sets(cfg, d_lo, d_hi, v_lo, v_hi, disabled) if a_per else [0.0]
        for b in cmds:
            add_image(d_lo - tau * v_hi, d_hi - tau * v_lo,
                      max(0.0, v_lo - tau * b), max(0.0, v_hi - tau * b))
        return out
    for v in speeds:
        pieces = _regimes(cfg, v, d_lo, d_hi, disabled) if a_per else [(0.0, d_lo, d_hi)]
        for b, a, c in pieces:
            v_next = max(0.0, v - tau * b)
            add_image(a - tau * v, c - tau * v, v_next, v_next)
    return out


def build_controller_plant_abstraction(grid, cfg, reachable_only=True, disabled_command=None):
    """Grid abstraction of plant and controller.

    Every cell gets rows for both perception actions; each possible successor
    cell (or terminal state) is a separate reachability action with a
    probability-one edge.  ``disabled_command`` drops one braking level from
    every attainable set; it exists only to demonstrate that the soundness
    check catches an unsound abstraction.
    """
    grid.check(cfg)
    n_d, n_v = grid.shape

    live_v = [j for j in range(n_v) if grid.has_moving_states(j)]
    keys = []
    index = {}

    def key_id(k):
        if k not in index:
            index[k] = len(keys)
            keys.append(k)
        return index[k]

    if reachable_only:
        if cfg.d0 <= cfg.L:
            start = COLLISION
        elif cfg.v0 <= 0:
            start = STOPPED
        else:
            start = (grid.locate_d(cfg.d0), grid.locate_v(cfg.v0))
            if start[0] < 0 or start[1] < 0:
                raise GridError("initial state lies outside the grid")
        key_id(start)
    else:
        for i in range(n_d):
            for j in live_v:
                key_id((i, j))
        key_id(COLLISION)
        key_id(STOPPED)
        start = (grid.locate_d(cfg.d0), grid.locate_v(cfg.v0))

    succ_sets = {}
    pos = 0
    while pos < len(keys):
        k = keys[pos]
        pos += 1
        if isinstance(k, str):
            continue
        i, j = k
        for a_per in (0, 1):
            nxt = _cell_successors(grid, cfg, i, j, a_per, disabled_command)
            succ_sets[(k, a_per)] = nxt
            for t in sorted(nxt, key=lambda x: (isinstance(x, str), x)):
                key_id(t)
    key_id(COLLISION)
    key_id(STOPPED)

    n = len(keys)
    row_state, row_per, row_reach, succ = [], [], [], []
    successors = {}
    for s, k in enumerate(keys):
        if isinstance(k, str):
            row_state.append(s)
            row_per.append(-1)
            row_reach.append(0)
            succ.append(s)
            continue
        for a_per in (0, 1):
            targets = sorted(index[t] for t in succ_sets[(k, a_per)])
            successors[(s, a_per)] = frozenset(targets)
            for r, t in enumerate(targets):
                row_state.append(s)
                row_per.append(a_per)
                row_reach.append(r)
                succ.append(t)
    m = len(succ)
    labels = {index[COLLISION]: {COLLISION}, index[STOPPED]: {STOPPED}}
    names = [k if isinstance(k, str) else f"d[{grid.d_edges[k[0]]},{grid.d_edges[k[0] + 1]})"
             f"v[{grid.v_edges[k[1]]},{grid.v_edges[k[1] + 1]})" for k in keys]
    mdp = Mdp(n, index.get(start, 0), labels, row_state, row_per, row_reach,
              np.arange(m + 1), succ, np.ones(m), names)
    cells = [None if isinstance(k, str) else k for k in keys]
    return ControllerPlantAbstraction(mdp, grid, cfg, cells, index[COLLISION],
                                      index[STOPPED], successors)


@dataclass
class ConservativenessReport:
    n_checked: int = 0
    violations: int = 0
    examples: list = field(default_factory=list)


def check_mcpl_conservative(cpl, n_samples, seed, cfg=None):
    """Sample concrete states in random cells and confirm that each concrete
    step under both perception outcomes lands in an abstract successor."""
    cfg = cfg or cpl.cfg
    grid = cpl.grid
    report = ConservativenessReport()
    live = [s for s, c in enumerate(cpl.cells) if c is not None]
    if n_samples <= 0 or not live:
        return report
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    picks = rng.integers(0, len(live), n_samples)
    for s in (live[int(x)] for x in picks):
        i, j = cpl.cells[s]
        d_lo, d_hi = max(grid.d_edges[i], cfg.L), grid.d_edges[i + 1]
        if d_hi <= cfg.L:
            d = rng.uniform(grid.d_edges[i], d_hi)
        else:
            d = rng.uniform(d_lo, d_hi)
            while d <= cfg.L:
                d = rng.uniform(d_lo, d_hi)
        speeds = grid.speed_points(j)
        if speeds is None:
            v = rng.uniform(grid.v_edges[j], grid.v_edges[j + 1])
            while v <= 0.0:
                v = rng.uniform(grid.v_edges[j], grid.v_edges[j + 1])
        else:
            v = speeds[int(rng.integers(0, len(speeds)))]
        state = CarState(d, v)
        for a_per in (0, 1):
            nxt = dynamics_step(state, braking_command(state, bool(a_per), cfg), cfg)
            t = cpl.classify(nxt)
            report.n_checked += 1
            if t not in cpl.successors[(s, a_per)]:
                report.violations += 1
                if len(report.examples) < 10:
                    report.examples.append((s, a_per, state, nxt))
    return report


# -- configuration file -----------------------------------------------------

@dataclass(frozen=True)
class GridSettings:
    d_width: float = 0.05
    v_width: float = 0.5
    d_phase: float = 0.5
    v_phase: float = 0.5
    speed_quantum: float | None = 0.5

    def build(self, cfg):
        return make_grid(cfg, self.d_width, self.v_width, self.d_phase, self.v_phase,
                         self.speed_quantum)


@dataclass(frozen=True)
class ExperimentSettings:
    data_lo: float = 0.0
    data_hi: float = 60.0
    n_data: int = 100_000
    n_mc: int = 100_000
    alpha_mc: float = 0.05
    w_pe: float = 1.0
    bin_widths: tuple = (1.0, 2.0, 5.0, 10.0, 20.0)
    w_pe_values: tuple = (0.0, 0.3, 0.7, 1.0)
    seed: int = 0


@dataclass(frozen=True)
class Settings:
    aebs: AebsConfig
    perception: object
    grid: GridSettings
    experiment: ExperimentSettings

    def grid_spec(self):
        return self.grid.build(self.aebs)


_AEBS_KEYS = {"tau": "tau", "a_max": "a_max", "b1": "B1", "b2": "B2", "c1": "C1", "c2": "C2",
              "t_h": "T_h", "t_s": "T_s", "u_fric": "u_fric", "l": "L", "d0": "d0", "v0": "v0"}


def _floats(text):
    return tuple(float(x) for x in text.replace(",", " ").split())


def parse_settings(text, origin="<string>"):
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(f"{origin}: {exc}") from exc
    known = {"aebs", "perception", "grid", "experiment"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"{origin}: unknown section(s) {sorted(unknown)}")
    try:
        kw = {}
        if cp.has_section("aebs"):
            for key, val in cp.items("aebs"):
                if key not in _AEBS_KEYS:
                    raise ConfigError(f"{origin}: unknown key [aebs] {key}")
                kw[_AEBS_KEYS[key]] = float(val)
        aebs = AebsConfig(**kw)
        per = dict(cp.items("perception")) if cp.has_section("perception") else {}
        if "constant" in per:
            perception = ConstantPerception(float(per["constant"]))
        else:
            perception = SyntheticPerception(float(per.get("k", -0.1)), float(per.get("x0", 35.0)))
        g = dict(cp.items("grid")) if cp.has_section("grid") else {}
        quantum = g.get("speed_quantum", "0.5").strip().lower()
        grid = GridSettings(
            float(g.get("d_width", 0.05)), float(g.get("v_width", 0.5)),
            float(g.get("d_phase", 0.5)), float(g.get("v_phase", 0.5)),
            None if quantum in ("", "none", "0", "0.0", "off") else float(quantum))
        e = dict(cp.items("experiment")) if cp.has_section("experiment") else {}
        exp = ExperimentSettings(
            float(e.get("data_lo", 0.0)), float(e.get("data_hi", 60.0)),
            int(e.get("n_data", 100_000)), int(e.get("n_mc", 100_000)),
            float(e.get("alpha_mc", 0.05)), float(e.get("w_pe", 1.0)),
            _floats(e.get("bin_widths", "1 2 5 10 20")),
            _floats(e.get("w_pe_values", "0 0.3 0.7 1")), int(e.get("seed", 0)))
    except ValueError as exc:
        raise ConfigError(f"{origin}: {exc}") from exc
    if not 0 < exp.alpha_mc < 1 or not 0 <= exp.w_pe <= 1:
        raise ConfigError(f"{origin}: alpha_mc must be in (0,1) and w_pe in [0,1]")
    if grid.d_width <= 0 or grid.v_width <= 0:
        raise ConfigError(f"{origin}: grid widths must be positive")
    return Settings(aebs, perception, grid, exp)


def load_settings(path=None):
    """Read a config file; with no path, the bundled defaults."""
    if path is None:
        path = default_config_path()
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_settings(text, str(path))


def default_config_path():
    return os.path.join(os.path.dirname(__file__), "data", "default.ini")


def settings_with(settings, **changes):
    """Copy of ``settings`` with experiment fields replaced."""
    return replace(settings, experiment=replace(settings.experiment, **changes))
