import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import random_mdp
from percimdp.errors import (
    DanglingSuccessor, DomainError, InfeasibleRow, IntervalOrderError, NoActions, RowSumError,
    StateSetMismatch,
)
from percimdp.models import (
    ActionLabel, Imdp, Mdp, compose_mdp_imdp, compose_mdp_mdp, degenerate, format_transitions,
    implements_state_matched, model_from_json, model_to_dict, model_to_json, new_imdp, new_mdp,
)

A = ActionLabel(reach=0)


def edges(m, s, action=A):
    return {t: (lo, hi) for t, lo, hi in dict(m.rows_of(s))[action]}


class TestConstruction:
    def test_terminal_self_loop(self):
        m = new_mdp(1, 0, {(0, A): {0: 1.0}})
        assert isinstance(m, Mdp)
        assert m.is_terminal(0)

    def test_row_sum_rejected(self):
        with pytest.raises(RowSumError):
            new_mdp(3, 0, {(0, A): {1: 0.6, 2: 0.3}, (1, A): {1: 1.0}, (2, A): {2: 1.0}})

    def test_two_state_chain(self):
        m = new_mdp(2, 0, {(0, A): {1: 1.0}, (1, A): {1: 1.0}})
        assert m.n_rows == 2

    def test_dangling_successor(self):
        with pytest.raises(DanglingSuccessor):
            new_mdp(1, 0, {(0, A): {3: 1.0}})

    def test_state_without_actions(self):
        with pytest.raises(NoActions):
            new_mdp(2, 0, {(0, A): {0: 1.0}})

    def test_interval_row_valid(self):
        m = new_imdp(3, 0, {(0, A): {1: (0.2, 0.4), 2: (0.6, 0.8)},
                            (1, A): {1: (1, 1)}, (2, A): {2: (1, 1)}})
        assert edges(m, 0) == {1: (0.2, 0.4), 2: (0.6, 0.8)}

    def test_infeasible_row(self):
        with pytest.raises(InfeasibleRow):
            new_imdp(3, 0, {(0, A): {1: (0.6, 0.7), 2: (0.5, 0.6)},
                            (1, A): {1: (1, 1)}, (2, A): {2: (1, 1)}})

    def test_upper_bounds_too_small(self):
        with pytest.raises(InfeasibleRow):
            new_imdp(2, 0, {(0, A): {0: (0.1, 0.4), 1: (0.1, 0.4)}, (1, A): {1: (1, 1)}})

    def test_interval_order(self):
        with pytest.raises(IntervalOrderError):
            new_imdp(2, 0, {(0, A): {0: (0.5, 0.4), 1: (0.5, 0.6)}, (1, A): {1: (1, 1)}})

    def test_point_interval(self):
        m = new_imdp(2, 0, {(0, A): {1: (1.0, 1.0)}, (1, A): {1: (1, 1)}})
        assert edges(m, 0) == {1: (1.0, 1.0)}

    def test_zero_lower_bound_allowed_and_zero_upper_dropped(self):
        m = new_imdp(3, 0, {(0, A): {0: (0.0, 0.0), 1: (0.0, 0.5), 2: (0.5, 1.0)},
                            (1, A): {1: (1, 1)}, (2, A): {2: (1, 1)}})
        assert set(edges(m, 0)) == {1, 2}

    def test_successors_sorted(self):
        m = new_mdp(4, 0, {(0, A): {3: 0.5, 1: 0.25, 2: 0.25},
                           (1, A): {1: 1.0}, (2, A): {2: 1.0}, (3, A): {3: 1.0}})
        assert m.succ[m.row_ptr[0]:m.row_ptr[1]].tolist() == [1, 2, 3]

    def test_action_label_needs_a_part(self):
        with pytest.raises(DomainError):
            ActionLabel()
        with pytest.raises(DomainError):
            ActionLabel(per=2)

    def test_duplicate_rows_rejected(self):
        with pytest.raises(DomainError):
            new_mdp(1, 0, {(0, A): {0: 1.0}, (0, 0): {0: 1.0}})


@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=5),
       st.floats(-3e-9, 3e-9))
def test_row_sum_tolerance_is_exact(weights, eps):
    """Perturbed rows are rejected exactly when they leave the 1e-9 band."""
    p = np.array(weights) / np.sum(weights)
    p[0] += eps
    total = float(np.sum(p))
    rows = {(0, A): {i + 1: float(q) for i, q in enumerate(p)}}
    rows.update({(i + 1, A): {i + 1: 1.0} for i in range(len(p))})
    if abs(total - 1.0) > 1e-9 + 1e-15:
        with pytest.raises(RowSumError):
            new_mdp(len(p) + 1, 0, rows)
    elif abs(total - 1.0) < 1e-9 - 1e-15:
        new_mdp(len(p) + 1, 0, rows)


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=4))
def test_interval_feasibility_rule(pairs):
    pairs = [(min(a, b), max(a, b)) for a, b in pairs]
    rows = {(0, A): {i + 1: p for i, p in enumerate(pairs)}}
    rows.update({(i + 1, A): {i + 1: (1, 1)} for i in range(len(pairs))})
    s_lo = sum(lo for lo, _ in pairs)
    s_hi = sum(hi for _, hi in pairs if hi > 0)
    if s_lo <= 1 + 1e-9 and s_hi >= 1 - 1e-9:
        new_imdp(len(pairs) + 1, 0, rows)
    elif s_lo > 1 + 2e-9 or s_hi < 1 - 2e-9:
        with pytest.raises(InfeasibleRow):
            new_imdp(len(pairs) + 1, 0, rows)


class TestComposition:
    def test_identity_element(self):
        m1 = new_mdp(3, 0, {(0, A): {1: 0.5, 2: 0.5}, (0, 1): {2: 1.0},
                            (1, A): {1: 1.0}, (2, A): {2: 1.0}}, {2: "bad"})
        m2 = new_mdp(1, 0, {(0, A): {0: 1.0}, (0, 1): {0: 1.0}})
        prod = compose_mdp_mdp(m1, m2)
        assert prod.n_states == m1.n_states
        assert model_to_dict(prod)["rows"] == model_to_dict(m1)["rows"]
        assert prod.states_with("bad").tolist() == [2]

    def test_disjoint_alphabets_interleave(self):
        a, b = ActionLabel(reach=0), ActionLabel(reach=1)
        m1 = new_mdp(2, 0, {(0, a): {1: 1.0}, (1, a): {1: 1.0}})
        m2 = new_mdp(2, 0, {(0, b): {1: 1.0}, (1, b): {1: 1.0}})
        prod = compose_mdp_mdp(m1, m2)
        assert prod.n_states == 4
        assert {str(x) for x in prod.actions} == {"reach=0", "reach=1"}
        init = dict(prod.rows_of(0))
        assert set(init) == {a, b}

    def test_shared_action_multiplies(self):
        m1 = new_mdp(3, 0, {(0, A): {1: 0.5, 2: 0.5}, (1, A): {1: 1.0}, (2, A): {2: 1.0}})
        m2 = new_mdp(3, 0, {(0, A): {1: 0.4, 2: 0.6}, (1, A): {1: 1.0}, (2, A): {2: 1.0}})
        prod = compose_mdp_mdp(m1, m2)
        probs = sorted(lo for _, lo, _ in dict(prod.rows_of(0))[A])
        assert probs == pytest.approx([0.2, 0.2, 0.3, 0.3])
        assert names_of(prod, 0) == {"(1,1)": 0.2, "(1,2)": 0.3, "(2,1)": 0.2, "(2,2)": 0.3}

    def test_interval_scaled_by_exact_probability(self):
        m1 = new_mdp(2, 0, {(0, A): {1: 1.0}, (1, A): {1: 1.0}})
        m2 = new_imdp(3, 0, {(0, A): {1: (0.2, 0.4), 2: (0.6, 0.8)},
                             (1, A): {1: (1, 1)}, (2, A): {2: (1, 1)}})
        prod = compose_mdp_imdp(m1, m2)
        row = {prod.name(t): (lo, hi) for t, lo, hi in dict(prod.rows_of(0))[A]}
        assert row["(1,1)"] == (0.2, 0.4)

        m1 = new_mdp(3, 0, {(0, A): {1: 0.5, 2: 0.5}, (1, A): {1: 1.0}, (2, A): {2: 1.0}})
        prod = compose_mdp_imdp(m1, m2)
        row = {prod.name(t): (lo, hi) for t, lo, hi in dict(prod.rows_of(0))[A]}
        assert row["(1,1)"] == pytest.approx((0.1, 0.2))

    def test_unshared_interval_actions_copied(self):
        b = ActionLabel(per=1)
        m1 = new_mdp(1, 0, {(0, A): {0: 1.0}})
        m2 = new_imdp(2, 0, {(0, b): {0: (0.2, 0.5), 1: (0.5, 0.8)}, (1, b): {1: (1, 1)}})
        prod = compose_mdp_imdp(m1, m2)
        row = {prod.name(t): (lo, hi) for t, lo, hi in dict(prod.rows_of(0))[b]}
        assert row == {"(0,0)": (0.2, 0.5), "(0,1)": (0.5, 0.8)}

    def test_products_only_hold_reachable_states(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            prod = compose_mdp_mdp(random_mdp(rng), random_mdp(rng))
            assert prod.reachable_from_initial().all()


def names_of(m, s):
    return {m.name(t): lo for t, lo, _ in dict(m.rows_of(s))[A]}


def test_degenerate_product_matches_exact_product():
    rng = np.random.default_rng(11)
    for _ in range(50):
        m1, m2 = random_mdp(rng), random_mdp(rng)
        exact = compose_mdp_mdp(m1, m2)
        iv = compose_mdp_imdp(m1, degenerate(m2))
        assert iv.n_states == exact.n_states
        np.testing.assert_array_equal(iv.succ, exact.succ)
        assert np.max(np.abs(iv.lo - exact.prob), initial=0) <= 1e-12
        assert np.max(np.abs(iv.hi - exact.prob), initial=0) <= 1e-12


class TestImplements:
    def im(self, lo, hi):
        return new_imdp(3, 0, {(0, A): {1: (lo, hi), 2: (1 - hi, 1 - lo)},
                               (1, A): {1: (1, 1)}, (2, A): {2: (1, 1)}})

    def m(self, p):
        return new_mdp(3, 0, {(0, A): {1: p, 2: 1 - p}, (1, A): {1: 1.0}, (2, A): {2: 1.0}})

    def test_containment_holds(self):
        v = implements_state_matched(self.m(0.3), self.im(0.2, 0.4))
        assert v.holds and v.counterexample is None

    def test_violation_named(self):
        v = implements_state_matched(self.m(0.5), self.im(0.2, 0.4))
        assert not v.holds
        s, a, t, p, bounds = v.counterexample
        assert (s, a, t, p, bounds) == (0, A, 1, 0.5, (0.2, 0.4))

    def test_reflexive_on_degenerate_image(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            m = random_mdp(rng)
            assert implements_state_matched(m, degenerate(m)).holds

    def test_one_interval_action_must_cover_every_successor(self):
        # b fits successor 1 only and c fits successor 2 only
        b, c = ActionLabel(reach=1), ActionLabel(reach=2)
        im = new_imdp(3, 0, {(0, b): {0: (0.1, 0.4), 1: (0.5, 0.5), 2: (0.1, 0.4)},
                             (0, c): {1: (0.6, 0.9), 2: (0.1, 0.5)},
                             (1, A): {1: (1, 1)}, (2, A): {2: (1, 1)}})
        assert not implements_state_matched(self.m(0.5), im).holds
        im = new_imdp(3, 0, {(0, b): {0: (0.1, 0.4), 1: (0.5, 0.5), 2: (0.1, 0.4)},
                             (0, c): {1: (0.4, 0.9), 2: (0.1, 0.5)},
                             (1, A): {1: (1, 1)}, (2, A): {2: (1, 1)}})
        assert implements_state_matched(self.m(0.5), im).holds

    def test_label_mismatch(self):
        m = new_mdp(1, 0, {(0, A): {0: 1.0}}, {0: "bad"})
        im = new_imdp(1, 0, {(0, A): {0: (1, 1)}})
        assert not implements_state_matched(m, im).holds

    def test_state_count_mismatch(self):
        with pytest.raises(StateSetMismatch):
            implements_state_matched(self.m(0.3), new_imdp(1, 0, {(0, A): {0: (1, 1)}}))


class TestSerialisation:
    def model(self):
        return new_imdp(3, 0, {(0, ActionLabel(1, 0)): {1: (0.2, 0.4), 2: (0.6, 0.8)},
                               (1, A): {1: (1, 1)}, (2, A): {2: (1, 1)}}, {1: "collision"})

    def test_golden_json(self):
        text = model_to_json(self.model())
        doc = json.loads(text)
        assert sorted(doc) == ["initial", "kind", "labels", "rows", "states"]
        assert doc["rows"][0] == {"state": 0, "action": {"per": 1, "reach": 0},
                                  "edges": [{"to": 1, "lo": 0.2, "hi": 0.4},
                                            {"to": 2, "lo": 0.6, "hi": 0.8}]}
        assert text == json.dumps(doc, sort_keys=True, indent=1) + "\n"

    def test_roundtrip(self):
        m = self.model()
        again = model_from_json(model_to_json(m))
        assert isinstance(again, Imdp)
        assert model_to_json(again) == model_to_json(m)
        exact = new_mdp(2, 1, {(0, A): {1: 1.0}, (1, A): {1: 1.0}})
        assert isinstance(model_from_json(model_to_json(exact)), Mdp)

    def test_malformed(self):
        with pytest.raises(DomainError):
            model_from_json('{"rows": []}')

    def test_listing(self):
        text = format_transitions(self.model())
        assert "0 -[per=1,reach=0]-> 1 [0.2, 0.4]" in text
