"""Random model generators shared by the test modules."""

import numpy as np

from percimdp.checker import brute_force_reach
from percimdp.errors import TooLarge
from percimdp.models import new_imdp, new_mdp


def random_rows(rng, n, max_actions, max_succ, interval):
    rows = {}
    for s in range(n):
        for a in range(int(rng.integers(1, max_actions + 1))):
            k = int(rng.integers(1, min(max_succ, n) + 1))
            succ = rng.choice(n, size=k, replace=False)
            p = rng.dirichlet(np.ones(k))
            if not interval:
                p[-1] = 1.0 - p[:-1].sum()
                rows[(s, a)] = {int(t): float(q) for t, q in zip(succ, p)}
                continue
            lo = np.clip(p - rng.random(k) * 0.3, 0, 1) * (rng.random(k) > 0.2)
            hi = np.clip(p + rng.random(k) * 0.3, 0, 1)
            rows[(s, a)] = {int(t): (float(l), float(h)) for t, l, h in zip(succ, lo, hi)}
    return rows


def random_labels(rng, n, name="goal"):
    return {int(s): name for s in rng.choice(n, size=int(rng.integers(0, 3)), replace=False)}


def random_imdp(rng, max_states=6, max_actions=3, max_succ=4):
    n = int(rng.integers(2, max_states + 1))
    return new_imdp(n, 0, random_rows(rng, n, max_actions, max_succ, True), random_labels(rng, n))


def random_mdp(rng, max_states=6, max_actions=3, max_succ=4):
    n = int(rng.integers(2, max_states + 1))
    return new_mdp(n, 0, random_rows(rng, n, max_actions, max_succ, False), random_labels(rng, n))


def random_imdp_with_oracle(rng, **kw):
    """Random IMDP small enough for exhaustive enumeration, with its exact
    reach interval; oversized draws are resampled."""
    while True:
        m = random_imdp(rng, **kw)
        try:
            return m, brute_force_reach(m, "goal")
        except TooLarge:
            continue


# PASS/FAIL lines of the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []
