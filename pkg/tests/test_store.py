import numpy as np
import pytest

from rcdiff.datasets import make_labeled, make_preferences, make_unlabeled, pseudo_label
from rcdiff.oracle import schedule
from rcdiff.reward import fit_bt_mle, fit_ridge
from rcdiff.score import init_model
from rcdiff.store import (
    atomic_write_text,
    load_estimate,
    load_labeled,
    load_model,
    load_points,
    load_preferences,
    load_pseudo,
    load_world,
    read_record,
    save_estimate,
    save_labeled,
    save_model,
    save_points,
    save_preferences,
    save_world,
)
from rcdiff.world import diagonal_sigma, make_world


@pytest.fixture(scope="module")
def world():
    return make_world(9, 3, seed=2, Sigma=diagonal_sigma([1.0, 0.5, 0.2]), pseudo_noise=0.3)


def test_world_round_trip(world, tmp_path):
    save_world(world, tmp_path / "w.txt")
    back = load_world(tmp_path / "w.txt")
    for name in ("A", "Sigma", "theta"):
        assert np.array_equal(getattr(back, name), getattr(world, name))
    assert (back.penalty_coef, back.label_noise, back.pseudo_noise) == (world.penalty_coef, world.label_noise, world.pseudo_noise)


def test_estimate_round_trip(world, tmp_path):
    for est in (fit_ridge(make_labeled(world, 50, seed=1), 1.0),
                fit_bt_mle(make_preferences(make_world(9, 3, seed=2, mean_zero_reward=True), 200, seed=3))):
        save_estimate(est, tmp_path / "e.txt")
        back = load_estimate(tmp_path / "e.txt")
        assert np.array_equal(back.theta, est.theta) and back.mode == est.mode


def test_model_round_trip(tmp_path):
    m = init_model(9, 3, schedule(8.0, 0.2, 0.01), 0.3, seed=4)
    save_model(m, tmp_path / "m.txt")
    back = load_model(tmp_path / "m.txt")
    x = np.random.default_rng(0).standard_normal((4, 9))
    assert np.array_equal(back(x, 1.0, 0.5), m(x, 1.0, 0.5))
    assert back.schedule == m.schedule


def test_record_kind_is_checked(world, tmp_path):
    save_world(world, tmp_path / "w.txt")
    with pytest.raises(ValueError, match="expected a model"):
        load_model(tmp_path / "w.txt")
    (tmp_path / "junk.txt").write_text("hello\n")
    with pytest.raises(ValueError):
        read_record(tmp_path / "junk.txt")


def test_csv_round_trips(world, tmp_path):
    X = make_unlabeled(world, 20, seed=5)
    save_points(X, tmp_path / "x.csv")
    assert np.array_equal(load_points(tmp_path / "x.csv"), X)
    assert (tmp_path / "x.csv").read_text().splitlines()[0] == ",".join(f"x_{j}" for j in range(9))

    lab = make_labeled(world, 15, seed=6)
    save_labeled(lab, tmp_path / "l.csv")
    back = load_labeled(tmp_path / "l.csv")
    assert np.array_equal(back.points, lab.points) and np.array_equal(back.labels, lab.labels)

    ps = pseudo_label(X, lambda x: x @ world.theta, 0.3, seed=7)
    save_labeled(ps, tmp_path / "p.csv")
    assert np.array_equal(load_pseudo(tmp_path / "p.csv").labels, ps.labels)

    pref = make_preferences(world, 12, seed=8)
    save_preferences(pref, tmp_path / "pr.csv")
    back = load_preferences(tmp_path / "pr.csv")
    assert np.array_equal(back.first, pref.first) and np.array_equal(back.winner, pref.winner)


def test_empty_csv_round_trip(tmp_path):
    save_points(np.zeros((0, 4)), tmp_path / "e.csv")
    assert load_points(tmp_path / "e.csv").shape == (0, 4)


def test_labeled_csv_requires_label_column(world, tmp_path):
    save_points(make_unlabeled(world, 3, seed=0), tmp_path / "x.csv")
    with pytest.raises(ValueError):
        load_labeled(tmp_path / "x.csv")


def test_atomic_write_replaces(tmp_path):
    p = tmp_path / "out.txt"
    p.write_text("old")
    atomic_write_text(p, "new")
    assert p.read_text() == "new" and not (tmp_path / "out.txt.tmp").exists()
