"""Command line driver: datasets, verification runs and the two sweeps."""

import argparse
import csv
import json
import logging
import os
import sys
import time
import warnings
from dataclasses import dataclass

from . import aebs, checker
from .abstraction import (
    METHODS, AbstractionConfig, ClosedLoopSkeleton, PerceptionDataset, build_perception_model,
    partition_equal_count, partition_equal_width,
)
from .errors import PercImdpError, UsageError, IoError
from .kernels import BACKEND
from .models import format_transitions, model_from_json, model_to_json
from .stats import Box

log = logging.getLogger("percimdp")

SWEEP_HEADER = ["sweep_value", "method", "p_min", "p_max", "mc_est", "mc_lo", "mc_hi", "runtime_ms"]
BINWIDTH_METHODS = ("noCI", "oursNPE", "ours", "logRegCI", "GTPer")
BAD_LABEL = aebs.COLLISION


@dataclass
class VerifyResult:
    interval: checker.SafetyInterval
    perception: object
    sizes: dict
    runtime_ms: float


class Pipeline:
    """Settings plus the expensive artifacts that sweeps share: the
    controller-plant abstraction and one product skeleton per partition."""

    def __init__(self, settings):
        self.settings = settings
        self._cpl = None
        self._skeletons = {}

    @property
    def cpl(self):
        if self._cpl is None:
            t = time.perf_counter()
            self._cpl = aebs.build_controller_plant_abstraction(self.settings.grid_spec(),
                                                                self.settings.aebs)
            log.info("controller-plant abstraction: %d states in %.2fs",
                     self._cpl.n_states, time.perf_counter() - t)
        return self._cpl

    @property
    def bounds(self):
        e = self.settings.experiment
        return Box([e.data_lo], [e.data_hi])

    def partition(self, data, bin_width=None, bin_counts=None):
        if bin_counts is not None:
            return partition_equal_count(data, [bin_counts], self.bounds)
        return partition_equal_width(self.bounds, [bin_width])

    def skeleton(self, partition):
        key = tuple(tuple(e.tolist()) for e in partition.edges)
        if key not in self._skeletons:
            self._skeletons[key] = ClosedLoopSkeleton(self.cpl.mdp, partition,
                                                      self.cpl.perception_cells())
        return self._skeletons[key]

    def verify(self, data, method, partition, alpha_mc, w_pe, export=None):
        t = time.perf_counter()
        acfg = AbstractionConfig(method, partition, alpha_mc, w_pe)
        pm = build_perception_model(data, self.settings.perception, acfg)
        product = self.skeleton(partition).instantiate(pm.intervals)
        interval = checker.safety_interval(product, BAD_LABEL)
        runtime = (time.perf_counter() - t) * 1000.0
        if export is not None:
            export_model(product, export)
        sizes = {"controller_plant_states": self.cpl.n_states,
                 "controller_plant_rows": self.cpl.mdp.n_rows,
                 "product_states": product.n_states, "product_rows": product.n_rows,
                 "product_edges": product.n_edges, "perception_bins": partition.n_bins}
        return VerifyResult(interval, pm, sizes, runtime)


def export_model(model, path):
    """Product model as JSON plus a plain transition listing next to it."""
    _write_text(path, model_to_json(model))
    stem, _ = os.path.splitext(path)
    _write_text(stem + ".txt", format_transitions(model))


def _write_text(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _dataset(args, settings):
    if args.dataset:
        return PerceptionDataset.from_csv(args.dataset)
    e = settings.experiment
    return aebs.generate_dataset(settings.aebs, settings.perception, e.n_data,
                                 (e.data_lo, e.data_hi), _seed(args, settings))


def _seed(args, settings):
    return settings.experiment.seed if args.seed is None else args.seed


def _unit_interval(name, value, open_ends=False):
    if value is None:
        return
    if open_ends and not 0 < value < 1:
        raise UsageError(f"{name} must lie strictly between 0 and 1, got {value}")
    if not 0 <= value <= 1:
        raise UsageError(f"{name} must lie in [0, 1], got {value}")


def _monte_carlo(settings, trials, seed):
    return aebs.monte_carlo_safety(settings.aebs, settings.perception, trials, seed)


# -- subcommands -------------------------------------------------------------

def cmd_generate(args):
    settings = aebs.load_settings(args.config)
    e = settings.experiment
    n = e.n_data if args.n is None else args.n
    if n < 0:
        raise UsageError("--n must be nonnegative")
    data = aebs.generate_dataset(settings.aebs, settings.perception, n,
                                 (e.data_lo, e.data_hi), _seed(args, settings))
    if args.out:
        data.to_csv(args.out)
    else:
        sys.stdout.write(data.to_csv())
    rate = float(data.z.mean()) if n else 0.0
    print(f"generated {n} points, positive rate {rate:.4f}", file=sys.stderr)
    return 0


def cmd_verify(args):
    settings = aebs.load_settings(args.config)
    e = settings.experiment
    alpha = e.alpha_mc if args.alpha_mc is None else args.alpha_mc
    w_pe = e.w_pe if args.w_pe is None else args.w_pe
    _unit_interval("--alpha-mc", alpha, open_ends=True)
    _unit_interval("--w-pe", w_pe)
    if args.bin_width is not None and args.bin_width <= 0:
        raise UsageError("--bin-width must be positive")
    pipe = Pipeline(settings)
    data = _dataset(args, settings)
    width = args.bin_width if args.bin_width is not None else 5.0
    partition = pipe.partition(data, width, args.bin_counts)
    res = pipe.verify(data, args.method, partition, alpha, w_pe, args.export_model)
    report = {
        "method": args.method,
        "safety": {"p_min": res.interval.p_min, "p_max": res.interval.p_max,
                   "iterations": res.interval.iterations, "converged": res.interval.converged},
        "sizes": res.sizes,
        "perception": res.perception.to_dict(),
        "dropped_points": res.perception.dropped,
        "runtime_ms": None if args.no_timing else round(res.runtime_ms, 3),
        "backend": BACKEND,
    }
    if args.trials:
        mc = _monte_carlo(settings, args.trials, _seed(args, settings))
        report["monte_carlo"] = {"estimate": mc.estimate, "lo": mc.ci.lo, "hi": mc.ci.hi,
                                 "trials": mc.n_trials}
    _emit_report(report, args.out)
    print(f"safety interval [{res.interval.p_min:.6f}, {res.interval.p_max:.6f}]", file=sys.stderr)
    return 0


def cmd_check(args):
    """Safety interval of a model stored as JSON."""
    path = args.model or os.path.join(os.path.dirname(__file__), "data", "toy_model.json")
    try:
        with open(path, encoding="utf-8") as fh:
            model = model_from_json(fh.read())
    except OSError as exc:
        raise IoError(f"cannot read model {path}: {exc}") from exc
    iv = checker.safety_interval(model, args.bad)
    report = {"safety": {"p_min": iv.p_min, "p_max": iv.p_max, "iterations": iv.iterations,
                         "converged": iv.converged},
              "states": model.n_states, "rows": model.n_rows}
    _emit_report(report, args.out)
    return 0


def cmd_trace(args):
    settings = aebs.load_settings(args.config)
    trace = aebs.simulate_trace(settings.aebs, settings.perception, _seed(args, settings))
    if args.out:
        trace.to_csv(args.out)
    else:
        sys.stdout.write(trace.to_csv())
    print(f"outcome {trace.outcome} after {len(trace.rows)} steps", file=sys.stderr)
    return 0


def _dedupe(values):
    out = []
    for v in values:
        if v in out:
            warnings.warn(f"duplicate sweep value {v} ignored", stacklevel=2)
            continue
        out.append(v)
    return out


def run_sweep(settings, kind, values, trials, seed, dataset=None, writer=None, timing=True):
    """Rows of a bin-width or enlargement sweep over one shared dataset and
    one shared Monte Carlo baseline.  With ``timing=False`` the runtime
    column is left blank so reruns are byte-identical."""
    if not values:
        raise UsageError("sweep needs at least one value")
    values = _dedupe([float(v) for v in values])
    e = settings.experiment
    if kind == "enlargement":
        for v in values:
            _unit_interval("w_pe", v)
    elif any(v <= 0 for v in values):
        raise UsageError("bin widths must be positive")
    pipe = Pipeline(settings)
    data = dataset if dataset is not None else aebs.generate_dataset(
        settings.aebs, settings.perception, e.n_data, (e.data_lo, e.data_hi), seed)
    mc = _monte_carlo(settings, trials, seed)
    rows = []

    def emit(row):
        rows.append(row)
        if writer is not None:
            writer(row)

    for v in values:
        if kind == "binwidth":
            width, jobs = v, [(m, e.w_pe) for m in BINWIDTH_METHODS]
        else:
            width, jobs = width_default(e), [("ours", v)]
        partition = pipe.partition(data, width)
        for method, w_pe in jobs:
            try:
                res = pipe.verify(data, method, partition, e.alpha_mc, w_pe)
            except PercImdpError:
                emit([_fmt(v), method, "FAILED", "", "", "", "", ""])
                raise
            emit([_fmt(v), method, _fmt(res.interval.p_min), _fmt(res.interval.p_max),
                  _fmt(mc.estimate), _fmt(mc.ci.lo), _fmt(mc.ci.hi),
                  f"{res.runtime_ms:.3f}" if timing else ""])
    return rows


def width_default(experiment):
    """Bin width used by the enlargement sweep: the middle of the bin-width list."""
    widths = sorted(experiment.bin_widths)
    return widths[len(widths) // 2]


def _fmt(x):
    return repr(float(x))


def cmd_sweep(args):
    settings = aebs.load_settings(args.config)
    e = settings.experiment
    if args.values:
        values = args.values
    else:
        values = e.bin_widths if args.kind == "binwidth" else e.w_pe_values
    if args.alpha_mc is not None or args.w_pe is not None:
        _unit_interval("--alpha-mc", args.alpha_mc, open_ends=True)
        _unit_interval("--w-pe", args.w_pe)
        changes = {}
        if args.alpha_mc is not None:
            changes["alpha_mc"] = args.alpha_mc
        if args.w_pe is not None:
            changes["w_pe"] = args.w_pe
        settings = aebs.settings_with(settings, **changes)
    trials = e.n_mc if args.trials is None else args.trials
    if trials < 1:
        raise UsageError("--trials must be at least 1")
    data = PerceptionDataset.from_csv(args.dataset) if args.dataset else None
    out = open_output(args.out)
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        out.flush()

        def write(row):
            w.writerow(row)
            out.flush()

        run_sweep(settings, args.kind, values, trials, _seed(args, settings), data, write,
                  not args.no_timing)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def open_output(path):
    if not path:
        return sys.stdout
    try:
        return open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _emit_report(report, path):
    text = json.dumps(report, sort_keys=True, indent=1) + "\n"
    if path:
        _write_text(path, text)
    else:
        sys.stdout.write(text)


# -- argument parsing --------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    p = _Parser(prog="percimdp", description="Conservative perception abstractions and "
                "interval-MDP safety verification for an emergency braking model.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="INI settings file (bundled defaults if omitted)")
        sp.add_argument("--seed", type=int, help="master seed (config value if omitted)")
        sp.add_argument("--out", help="output file (stdout if omitted)")

    def timing(sp):
        sp.add_argument("--no-timing", action="store_true",
                        help="leave runtime fields empty so reruns are byte-identical")

    g = sub.add_parser("generate", help="write a synthetic perception dataset")
    common(g)
    g.add_argument("--n", type=int, help="number of points")
    g.set_defaults(func=cmd_generate)

    v = sub.add_parser("verify", help="build the closed-loop model and report its safety interval")
    common(v)
    v.add_argument("--dataset", help="dataset CSV (generated from the seed if omitted)")
    v.add_argument("--method", choices=METHODS, default="ours")
    binning = v.add_mutually_exclusive_group()
    binning.add_argument("--bin-width", type=float, help="equal-width bins of this size (default 5)")
    binning.add_argument("--bin-counts", type=int, help="this many equal-count bins")
    v.add_argument("--alpha-mc", type=float)
    v.add_argument("--w-pe", type=float)
    v.add_argument("--trials", type=int, default=0, help="also run a Monte Carlo baseline")
    v.add_argument("--export-model", help="write the product model JSON (and a .txt listing)")
    timing(v)
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("sweep", help="bin-width or enlargement sweep as CSV")
    common(s)
    s.add_argument("kind", choices=("binwidth", "enlargement"))
    s.add_argument("--values", type=float, nargs="+")
    s.add_argument("--dataset")
    s.add_argument("--trials", type=int, help="Monte Carlo trials for the baseline")
    s.add_argument("--alpha-mc", type=float)
    s.add_argument("--w-pe", type=float, help="enlargement weight for the bin-width sweep")
    timing(s)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("check", help="safety interval of a model JSON file")
    c.add_argument("--model", help="model JSON (bundled toy model if omitted)")
    c.add_argument("--bad", default=BAD_LABEL, help="label of the unsafe states")
    c.add_argument("--out")
    c.set_defaults(func=cmd_check)

    t = sub.add_parser("trace", help="dump one simulated run as CSV")
    common(t)
    t.set_defaults(func=cmd_trace)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return args.func(args)
    except PercImdpError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
