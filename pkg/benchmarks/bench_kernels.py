"""Compiled kernels versus the numpy fallback.

Times the reachability solver on the default closed-loop product and on a
random cyclic model, and the braking simulator on a batch of episodes.

    python benchmarks/bench_kernels.py [--repeat 5] [--episodes 100000]
"""

import argparse
import time

import numpy as np

from percimdp import aebs, checker, kernels
from percimdp.cli import Pipeline
from percimdp.models import new_imdp


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def closed_loop_product():
    settings = aebs.load_settings()
    e = settings.experiment
    pipe = Pipeline(settings)
    data = aebs.generate_dataset(settings.aebs, settings.perception, e.n_data,
                                 (e.data_lo, e.data_hi), e.seed)
    part = pipe.partition(data, 5.0)
    pm = pipe.verify(data, "ours", part, e.alpha_mc, e.w_pe).perception
    return pipe.skeleton(part).instantiate(pm.intervals)


def random_cyclic(n, seed=0):
    """Ring with random shortcuts and leaks into two absorbing states."""
    rng = np.random.default_rng(seed)
    rows = {}
    for s in range(n):
        for a in range(2):
            succ = {(s + 1) % n, int(rng.integers(n)), n, n + 1}
            p = rng.dirichlet(np.ones(len(succ)))
            rows[(s, a)] = {t: (max(0.0, q - 0.05), min(1.0, q + 0.05)) for t, q in zip(succ, p)}
    rows[(n, 0)] = {n: (1, 1)}
    rows[(n + 1, 0)] = {n + 1: (1, 1)}
    return new_imdp(n + 2, 0, rows, {n: "goal"})


def bench_solver(name, model, target, repeat):
    indptr, indices, comp, n_comp, cyclic = checker._structure(model, target)
    fixed = target.astype(np.uint8)
    out = {}
    for be in kernels.backends():
        def run():
            values = target.astype(np.float64)
            be.solve_reach(model.state_ptr, model.row_ptr, model.succ, model.lo, model.hi,
                           values, fixed, comp, n_comp, cyclic, indptr, indices, True, 1e-9,
                           100_000)
            return values
        out[be.BACKEND] = (best_of(run, repeat), run())
    report(f"solve_reach {name} ({model.n_states} states)", out)


def bench_simulation(episodes, repeat):
    cfg = aebs.AebsConfig()
    params = aebs.pack_params(cfg, aebs.SyntheticPerception())
    keys = aebs.trial_keys(0, episodes)
    out = {}
    for be in kernels.backends():
        def run():
            return np.asarray(be.simulate_batch(keys, params, aebs.step_bound(cfg))[0])
        out[be.BACKEND] = (best_of(run, repeat), run())
    report(f"simulate_batch ({episodes} episodes)", out)


def report(title, results):
    outputs = [r[1] for r in results.values()]
    agree = all(np.array_equal(outputs[0], o) for o in outputs[1:])
    print(title)
    base = results.get("python", (None,))[0]
    for backend, (t, _) in results.items():
        speedup = f"  x{base / t:.1f}" if base and backend != "python" else ""
        print(f"  {backend:9s} {t * 1000:10.2f} ms{speedup}")
    print(f"  outputs identical: {agree}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--episodes", type=int, default=100_000)
    ap.add_argument("--ring", type=int, default=2000, help="states of the cyclic model")
    args = ap.parse_args()
    if kernels.compiled_backend is None:
        print("compiled extension not available; timing the fallback only")
    product = closed_loop_product()
    bench_solver("closed-loop product", product, product.label_mask("collision"), args.repeat)
    ring = random_cyclic(args.ring)
    bench_solver("cyclic ring", ring, ring.label_mask("goal"), args.repeat)
    bench_simulation(args.episodes, args.repeat)


if __name__ == "__main__":
    main()
