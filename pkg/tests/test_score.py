import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcdiff import kernels
from rcdiff._kernels_py import dsm_loss_grad as py_kernel
from rcdiff.datasets import make_unlabeled, pseudo_label
from rcdiff.oracle import OracleScore, alpha, h, schedule
from rcdiff.score import (
    ScoreModel,
    TrainingDiverged,
    TrainOptions,
    dsm_loss,
    init_model,
    loss_and_grad,
    psi_eval,
    stiefel_step,
    train,
)
from rcdiff.world import diagonal_sigma, make_world, random_orthonormal

SCHED = schedule(10.0, 0.01, 5e-3)


@pytest.fixture(scope="module")
def world():
    return make_world(12, 3, seed=4, Sigma=diagonal_sigma([1.0, 0.6, 0.3]))


@pytest.fixture(scope="module")
def oracle(world):
    return OracleScore.from_world(world, nu=0.4)


def _random_model(D, d, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((d, d))
    return ScoreModel(
        V=random_orthonormal(D, d, rng),
        L=np.linalg.cholesky(B @ B.T / d + 0.5 * np.eye(d)),
        b=rng.standard_normal(d),
        log_nu=float(np.log(0.3)),
        schedule=SCHED,
    )


def test_oracle_parameters_reproduce_oracle_score(world, oracle):
    model = ScoreModel.from_oracle(oracle, SCHED)
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        x, y, t = rng.standard_normal(12), rng.normal(0, 2), rng.uniform(SCHED.t0, SCHED.T)
        worst = max(worst, np.abs(model(x, y, t) - oracle(x, y, t)).max())
    assert worst <= 1e-10


def test_head_without_conditioning(world):
    m = _random_model(12, 3, 1)
    m = ScoreModel(m.V, m.L, np.zeros(3), m.log_nu, SCHED)
    u = np.random.default_rng(2).standard_normal(3)
    t = 0.7
    a, ht = float(alpha(t)), float(h(t))
    expect = a * a * np.linalg.solve(a * a * np.eye(3) + ht * m.S_inv(), u)
    assert np.allclose(psi_eval(m, u, 0.0, t), expect, atol=1e-13)


def test_head_vanishes_at_large_time():
    sched = schedule(60.0, 0.01, 0.1)
    m = _random_model(12, 3, 3)
    m = ScoreModel(m.V, m.L, m.b, m.log_nu, sched)
    x = np.random.default_rng(4).standard_normal(12)
    assert np.abs(m.psi(x @ m.V, 1.0, 60.0)).max() < 1e-12
    assert np.allclose(m(x, 1.0, 60.0), -x / h(60.0), atol=1e-12)


def test_head_rejects_time_outside_schedule():
    m = _random_model(6, 2, 0)
    with pytest.raises(ValueError):
        psi_eval(m, np.zeros(2), 0.0, 0.001)
    with pytest.raises(ValueError):
        psi_eval(m, np.zeros(2), 0.0, 11.0)


def test_per_row_times_match_scalar_calls():
    m = _random_model(8, 3, 5)
    rng = np.random.default_rng(6)
    X, y, t = rng.standard_normal((6, 8)), rng.standard_normal(6), rng.uniform(0.1, 5, 6)
    rows = np.array([m(X[i], y[i], t[i]) for i in range(6)])
    assert np.allclose(m(X, y, t), rows, atol=1e-12)


@pytest.mark.invariant
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_rotation_gauge_and_range_shape(seed):
    m = _random_model(9, 3, seed)
    rng = np.random.default_rng(seed + 1)
    Q = random_orthonormal(3, 3, rng)
    x, y, t = rng.standard_normal(9), rng.normal(), rng.uniform(0.05, 5)
    s = m(x, y, t)
    assert np.allclose(m.rotated(Q)(x, y, t), s, atol=1e-9)
    # removing -x/h leaves a vector in range(V)
    r = s + x / h(t)
    assert np.linalg.norm(r - m.V @ (m.V.T @ r)) <= 1e-8 * max(1.0, np.linalg.norm(r))


def test_dsm_loss_is_reproducible(world):
    X = make_unlabeled(world, 1, seed=0)
    data = pseudo_label(X, lambda x: x @ world.theta, 0.1, seed=1)
    m = _random_model(12, 3, 7)
    a, b = dsm_loss(m, data, t_samples=1, seed=5), dsm_loss(m, data, t_samples=1, seed=5)
    assert a.loss == b.loss and a.batch_size == 1 and a.t_samples == 1
    with pytest.raises(ValueError):
        dsm_loss(m, data, t_samples=0)


def test_oracle_parameters_minimize_loss(world, oracle):
    X = make_unlabeled(world, 4000, seed=2)
    data = pseudo_label(X, lambda x: x @ world.theta, oracle.nu, seed=3)
    best = ScoreModel.from_oracle(oracle, SCHED)
    for seed in range(5):
        other = ScoreModel.from_oracle(oracle, SCHED, V=random_orthonormal(12, 3, np.random.default_rng(1000 + seed)))
        assert dsm_loss(best, data, 4, seed=seed).loss < dsm_loss(other, data, 4, seed=seed).loss


def _inputs(D, d, n, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((d, d))
    return (
        rng.standard_normal((n, D)), rng.standard_normal(n), rng.uniform(0.01, 10, n), rng.standard_normal((n, D)),
        random_orthonormal(D, d, rng), B @ B.T / d + np.eye(d), rng.standard_normal(d), 3.0,
    )


@pytest.mark.parametrize("backend", sorted(kernels.BACKENDS))
def test_kernel_gradients_match_finite_differences(backend):
    X, Y, T, E, V, P, b, k = _inputs(7, 3, 40, 1)
    fn = kernels.get(backend)
    _, gV, gP, gb, gk = fn(X, Y, T, E, V, P, b, k)

    def loss(V=V, P=P, b=b, k=k):
        return fn(X, Y, T, E, V, P, b, k, False)[0]

    eps = 1e-6
    for (i, j) in [(0, 0), (3, 2), (6, 1)]:
        dV = np.zeros_like(V)
        dV[i, j] = eps
        assert (loss(V=V + dV) - loss(V=V - dV)) / (2 * eps) == pytest.approx(gV[i, j], rel=1e-6, abs=1e-9)
    dP = np.zeros_like(P)
    dP[0, 1] = dP[1, 0] = eps
    assert (loss(P=P + dP) - loss(P=P - dP)) / (2 * eps) == pytest.approx(2 * gP[0, 1], rel=1e-6, abs=1e-9)
    db = np.zeros_like(b)
    db[2] = eps
    assert (loss(b=b + db) - loss(b=b - db)) / (2 * eps) == pytest.approx(gb[2], rel=1e-6, abs=1e-9)
    assert (loss(k=k + eps) - loss(k=k - eps)) / (2 * eps) == pytest.approx(gk, rel=1e-6, abs=1e-9)


@pytest.mark.skipif("cython" not in kernels.BACKENDS, reason="compiled backend not built")
@pytest.mark.parametrize("D,d,n", [(5, 1, 3), (16, 4, 64), (64, 16, 128)])
def test_backends_agree(D, d, n):
    args = _inputs(D, d, n, D + d)
    ref = py_kernel(*args)
    got = kernels.get("cython")(*args)
    assert got[0] == pytest.approx(ref[0], rel=1e-12)
    for r, g in zip(ref[1:], got[1:]):
        assert np.allclose(g, r, rtol=1e-10, atol=1e-12)


def test_kernel_rejects_mismatched_shapes():
    X, Y, T, E, V, P, b, k = _inputs(5, 2, 10, 0)
    for name in kernels.BACKENDS:
        with pytest.raises((ValueError, IndexError)):
            kernels.get(name)(X, Y[:5], T, E, V, P, b, k)


def test_model_gradient_matches_finite_differences(world):
    m = _random_model(12, 3, 9)
    rng = np.random.default_rng(10)
    X, Y, t, E = rng.standard_normal((30, 12)), rng.standard_normal(30), rng.uniform(0.05, 5, 30), rng.standard_normal((30, 12))
    _, (gV, gL, gb, gnu) = loss_and_grad(m, X, Y, t, E)

    def f(**kw):
        p = dict(V=m.V, L=m.L, b=m.b, log_nu=m.log_nu, schedule=SCHED)
        p.update(kw)
        return loss_and_grad(ScoreModel(**p), X, Y, t, E, want_grad=False)[0]

    eps = 1e-6
    dL = np.zeros_like(m.L)
    dL[2, 1] = eps
    assert (f(L=m.L + dL) - f(L=m.L - dL)) / (2 * eps) == pytest.approx(gL[2, 1], rel=1e-5)
    assert (f(log_nu=m.log_nu + eps) - f(log_nu=m.log_nu - eps)) / (2 * eps) == pytest.approx(gnu, rel=1e-5)


@pytest.mark.invariant
@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), lr=st.floats(1e-4, 1.0))
def test_stiefel_step_keeps_orthonormality(seed, lr):
    rng = np.random.default_rng(seed)
    V = random_orthonormal(10, 4, rng)
    V2 = stiefel_step(V, 5 * rng.standard_normal((10, 4)), lr)
    assert np.abs(V2.T @ V2 - np.eye(4)).max() <= 1e-12


@pytest.mark.invariant
def test_stiefel_step_ignores_gauge_directions():
    V = random_orthonormal(8, 3, np.random.default_rng(0))
    K = np.array([[0.0, 1.0, -2.0], [-1.0, 0.0, 0.5], [2.0, -0.5, 0.0]])
    # V K with K skew is tangent; V S with S symmetric is normal and is removed
    S = K @ K.T
    assert np.allclose(stiefel_step(V, V @ S, 0.1), V, atol=1e-12)


@pytest.mark.invariant
def test_training_keeps_stiefel_and_records_loss(world, oracle):
    X = make_unlabeled(world, 2048, seed=3)
    data = pseudo_label(X, lambda x: x @ world.theta, oracle.nu, seed=4)
    m = train(data, SCHED, TrainOptions(iters=300, seed=1), d=3)
    assert np.abs(m.V.T @ m.V - np.eye(3)).max() <= 1e-8
    assert len(m.loss_trace) == 300 and np.all(np.isfinite(m.loss_trace))
    smooth = np.convolve(m.loss_trace, np.ones(50) / 50, mode="valid")
    assert smooth[-1] < smooth[0]


def test_training_from_oracle_is_stationary(world, oracle):
    X = make_unlabeled(world, 4096, seed=5)
    data = pseudo_label(X, lambda x: x @ world.theta, oracle.nu, seed=6)
    start = ScoreModel.from_oracle(oracle, SCHED)
    m = train(data, SCHED, TrainOptions(iters=500, lr=1e-2, seed=2), init=start)
    trace = np.asarray(m.loss_trace)
    first, last = trace[:100], trace[-100:]
    se = np.hypot(first.std(ddof=1), last.std(ddof=1)) / 10
    assert last.mean() <= first.mean() + 3 * se


@pytest.mark.invariant
def test_training_is_deterministic(world):
    X = make_unlabeled(world, 512, seed=7)
    data = pseudo_label(X, lambda x: x @ world.theta, 0.3, seed=8)
    a = train(data, SCHED, TrainOptions(iters=50, seed=3), d=3)
    b = train(data, SCHED, TrainOptions(iters=50, seed=3), d=3)
    assert np.array_equal(a.V, b.V) and a.loss_trace == b.loss_trace


def test_training_backends_agree(world):
    if "cython" not in kernels.BACKENDS:
        pytest.skip("compiled backend not built")
    X = make_unlabeled(world, 512, seed=7)
    data = pseudo_label(X, lambda x: x @ world.theta, 0.3, seed=8)
    a = train(data, SCHED, TrainOptions(iters=30, seed=3, backend="python"), d=3)
    b = train(data, SCHED, TrainOptions(iters=30, seed=3, backend="cython"), d=3)
    assert np.allclose(a.V, b.V, atol=1e-9)


def test_divergence_is_reported(world):
    X = 1e4 * make_unlabeled(world, 256, seed=9)
    data = pseudo_label(X, lambda x: x @ world.theta, 0.3, seed=10)
    with pytest.raises(TrainingDiverged, match="iteration"):
        train(data, SCHED, TrainOptions(iters=20, lr=10.0, seed=0), d=3)


def test_epochs_override_iterations():
    opts = TrainOptions(batch=100, epochs=2.5)
    assert opts.resolved_iters(1000) == 25
    assert TrainOptions(iters=7).resolved_iters(10**6) == 7


def test_init_model_shapes():
    m = init_model(10, 4, SCHED, 0.2, seed=0)
    assert m.V.shape == (10, 4) and np.allclose(m.S, np.eye(4), atol=1e-12) and m.nu == pytest.approx(0.2)
