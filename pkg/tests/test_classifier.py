import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from megbdl.classifier import (ClassifierConfig, classify, deflate, deflation_set, phase1,
                               phase2, pick_winner)
from megbdl.dictionary import group_view, subset
from megbdl.head import measure, simulate_patch

from oracles import exhaustive_region_oracle


class TestDeflation:

    def test_strict_threshold(self):
        theta = np.array([1.0, 0.004, 0.006, 0.005, 0.2])
        np.testing.assert_array_equal(deflation_set(theta, 0.005), [0, 2, 4])

    def test_one_hot(self, small_dictionary):
        theta = np.zeros(small_dictionary.n_groups)
        theta[5] = 2.0
        D, owner, _ = deflate(small_dictionary, theta, 0.005)
        np.testing.assert_array_equal(D, group_view(small_dictionary, 5))
        assert set(owner) == {5}

    def test_near_one_keeps_argmax(self):
        theta = np.array([0.3, 0.9, 0.5])
        np.testing.assert_array_equal(deflation_set(theta, 1 - 1e-12), [1])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(1e-12, 1e3), min_size=1, max_size=20),
           st.floats(1e-6, 0.999), st.floats(1e-6, 0.999))
    def test_monotone_in_p(self, theta, p1, p2):
        lo, hi = sorted((p1, p2))
        big, small = deflation_set(theta, lo), deflation_set(theta, hi)
        assert set(small) <= set(big)
        assert int(np.argmax(theta)) in small

    @pytest.mark.parametrize("p", [0.0, 1.0])
    def test_invalid_p(self, p):
        with pytest.raises(ValueError):
            deflation_set([1.0], p)


class TestWinner:

    def test_max_rule_ties_to_lowest_region(self):
        theta = np.array([0.1, 0.7, 0.7, 0.2])
        owner = np.array([4, 4, 2, 2])
        assert pick_winner(theta, owner, "max") == 2

    def test_sum_rule(self):
        theta = np.array([0.5, 0.3, 0.3, 0.6])
        owner = np.array([1, 0, 0, 0])
        assert pick_winner(theta, owner, "max") == 0
        assert pick_winner(theta, owner, "sum") == 0
        assert pick_winner(np.array([0.9, 0.3, 0.3, 0.2]), owner, "max") == 1

    def test_unknown_rule(self):
        with pytest.raises(ValueError):
            pick_winner([1.0], [0], "mode")

    def test_single_region(self, small_dictionary, rng):
        D = group_view(small_dictionary, 3)
        y = rng.standard_normal(D.shape[0])
        *_, winner, _ = phase2(y / np.linalg.norm(y), D, np.full(D.shape[1], 3), 1e-2,
                               ClassifierConfig())
        assert winner == 3

    def test_single_atom_query(self, small_dictionary):
        D, owner, _ = subset(small_dictionary, [1, 6])
        coherence = np.abs(group_view(small_dictionary, 1).T @ group_view(small_dictionary, 6))
        assert coherence.max() < 0.9
        y = group_view(small_dictionary, 1)[:, 0]
        *_, winner, _ = phase2(y, D, owner, 1e-3, ClassifierConfig())
        assert winner == 1

    def test_region_order_invariance(self, small_dictionary, small_artifacts):
        total = small_dictionary.atoms[:, small_dictionary.group_slice(4)].sum(axis=1)
        y = total / np.linalg.norm(total)
        cfg = ClassifierConfig()
        w = []
        for order in ([2, 4, 7], [7, 2, 4], [4, 7, 2]):
            D, owner, _ = subset(small_dictionary, order)
            w.append(phase2(y, D, owner, 1e-3, cfg)[2])
        assert w[0] == w[1] == w[2] == 4


class TestClassify:

    def _query(self, small_head, region, seed, noise=0.0):
        space, sensors = small_head
        return measure(space, sensors, simulate_patch(space, region, seed), noise, seed).y

    def test_deterministic(self, small_head, small_artifacts):
        y = self._query(small_head, 2, 5, 0.005)
        a = classify(y, small_artifacts, ClassifierConfig(), 1e-2)
        b = classify(y, small_artifacts, ClassifierConfig(), 1e-2)
        assert a.summary() == b.summary()
        assert a.phase2_theta.tobytes() == b.phase2_theta.tobytes()

    def test_phase1_direction_only(self, small_head, small_artifacts):
        space, sensors = small_head
        act = simulate_patch(space, 6, 3)
        m1 = measure(space, sensors, act, 0.0, 0)
        scaled = type(act)(act.region, act.dipole_indices, 1e4 * act.amplitudes)
        m2 = measure(space, sensors, scaled, 0.0, 0)
        np.testing.assert_allclose(m1.y, m2.y, rtol=1e-13, atol=1e-16)
        t1, *_ = phase1(m1.y, small_artifacts, ClassifierConfig(), 1e-3)
        t2, *_ = phase1(m2.y, small_artifacts, ClassifierConfig(), 1e-3)
        assert np.argmax(t1) == np.argmax(t2)

    def test_outcome_consistency(self, small_head, small_artifacts):
        y = self._query(small_head, 0, 1)
        out = classify(y, small_artifacts, ClassifierConfig(), 1e-3)
        assert out.phase1_winner == int(np.argmax(out.phase1_theta))
        assert out.phase1_winner in out.deflation_set
        assert out.phase2_winner in out.deflation_set
        assert len(out.phase2_theta) == len(out.atom_region) == len(out.atom_dipole)
        assert set(out.atom_region) == set(out.deflation_set)

    def test_noiseless_matches_oracle(self, small_head, small_dictionary, small_artifacts):
        hits = 0
        for region in range(small_dictionary.n_groups):
            y = self._query(small_head, region, 100 + region)
            out = classify(y, small_artifacts, ClassifierConfig(), 1e-3)
            hits += out.phase2_winner == exhaustive_region_oracle(small_dictionary, y)
        assert hits >= 7
