import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcdiff.datasets import (
    PreferenceSet,
    bt_choice_prob,
    bt_choice_prob_from_rewards,
    make_labeled,
    make_preferences,
    make_unlabeled,
    preferences_from_pairs,
    pseudo_label,
)
from rcdiff.world import SubspaceWorld, make_world, true_reward


@pytest.fixture(scope="module")
def world():
    return make_world(16, 4, seed=5)


def test_noiseless_labels_are_linear(world):
    w = SubspaceWorld(world.D, world.d, world.A, world.Sigma, world.theta, label_noise=0.0)
    data = make_labeled(w, 200, seed=1)
    assert np.allclose(data.labels, data.points @ w.theta, atol=1e-12)


def test_label_noise_moments(world):
    data = make_labeled(world, 100_000, seed=2)
    r = data.labels - true_reward(world, data.points)
    assert abs(r.mean()) <= 0.01 * world.label_noise
    assert abs(r.var() / world.label_noise**2 - 1) <= 0.05


def test_empty_sets(world):
    assert len(make_labeled(world, 0, seed=0)) == 0
    assert len(make_preferences(world, 0, seed=0)) == 0


def test_all_points_on_support(world):
    X = make_unlabeled(world, 500, seed=3)
    P = make_preferences(world, 100, seed=4)
    for M in (X, P.first, P.second, make_labeled(world, 100, seed=5).points):
        assert np.abs(M - M @ world.projector).max() < 1e-12


def test_choice_probability_examples():
    assert bt_choice_prob_from_rewards(1.3, 1.3) == 0.5
    assert bt_choice_prob_from_rewards(np.log(3.0), 0.0) == pytest.approx(0.75, abs=1e-15)
    p = bt_choice_prob_from_rewards(500.0, 0.0)
    assert np.isfinite(p) and p >= 1 - 1e-12
    assert bt_choice_prob_from_rewards(-800.0, 0.0) >= 0.0


@pytest.mark.invariant
@settings(max_examples=60, deadline=None)
@given(r1=st.floats(-300, 300), r2=st.floats(-300, 300), shift=st.floats(-50, 50))
def test_choice_symmetry_and_shift_invariance(r1, r2, shift):
    p = bt_choice_prob_from_rewards(r1, r2)
    assert p + bt_choice_prob_from_rewards(r2, r1) == pytest.approx(1.0, abs=1e-12)
    assert bt_choice_prob_from_rewards(r1 + shift, r2 + shift) == pytest.approx(p, abs=1e-12)


def test_fixed_pair_win_rate(world):
    rng = np.random.default_rng(0)
    x1, x2 = (make_unlabeled(world, 2, seed=9) * 0.4)
    n = 100_000
    p = bt_choice_prob(world, x1, x2)
    data = preferences_from_pairs(world, np.tile(x1, (n, 1)), np.tile(x2, (n, 1)), seed=rng)
    assert abs(np.mean(data.winner == 0) - p) <= 0.01


def test_flipped_direction_swaps_rates(world):
    x1, x2 = make_unlabeled(world, 2, seed=10) * 0.4
    n = 100_000
    flipped = SubspaceWorld(world.D, world.d, world.A, world.Sigma, -world.theta)
    p = bt_choice_prob(world, x1, x2)
    data = preferences_from_pairs(flipped, np.tile(x1, (n, 1)), np.tile(x2, (n, 1)), seed=11)
    assert abs(np.mean(data.winner == 0) - (1 - p)) <= 0.01


def test_preferred_rows_and_round_trip():
    first = np.arange(6.0).reshape(3, 2)
    second = -first
    data = PreferenceSet(first, second, np.array([0, 1, 0], dtype=np.int8))
    assert np.array_equal(data.preferred, [[0, 1], [-2, -3], [4, 5]])
    again = PreferenceSet.from_preferred(first, second, data.preferred)
    assert np.array_equal(again.winner, data.winner)
    with pytest.raises(ValueError):
        PreferenceSet.from_preferred(first, second, first + 1)
    with pytest.raises(ValueError):
        PreferenceSet(first, second, np.array([0, 2, 0]))


def test_pseudo_label_noise():
    X = np.zeros((100_000, 64))
    assert np.array_equal(pseudo_label(X[:10], lambda x: x[:, 0] + 1.0, nu=0.0, seed=0).labels, np.ones(10))
    lab = pseudo_label(X, lambda x: np.zeros(len(x)), seed=1).labels
    assert abs(lab.var() / 0.125**2 - 1) < 0.05


def test_pseudo_label_rejects_negative_noise():
    with pytest.raises(ValueError):
        pseudo_label(np.zeros((3, 2)), lambda x: x[:, 0], nu=-1.0)
