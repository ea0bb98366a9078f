import json

import numpy as np
import pytest
from scipy.optimize import linprog

import mfsc


def lp_wasserstein(p, q, cost):
    n = len(p)
    a_eq = []
    for i in range(n):
        row = np.zeros((n, n))
        row[i, :] = 1
        a_eq.append(row.ravel())
    for j in range(n):
        col = np.zeros((n, n))
        col[:, j] = 1
        a_eq.append(col.ravel())
    res = linprog(cost.ravel(), A_eq=np.array(a_eq), b_eq=np.concatenate([p, q]), bounds=(0, None))
    return res.fun


def test_wasserstein_matches_lp():
    rng = np.random.default_rng(0)
    for n in (2, 4, 7):
        pts = rng.random((n, 2))
        cost = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        p = rng.random(n)
        q = rng.random(n)
        p /= p.sum()
        q /= q.sum()
        assert mfsc.wasserstein(p, q, cost) == pytest.approx(lp_wasserstein(p, q, cost), abs=1e-9)


def test_fixed_point_is_stationary():
    P, R = mfsc.random_mdp(3, 6, 2, 0.9)
    assert P.shape == (6, 2, 6) and np.allclose(P.sum(-1), 1)
    pi = np.full((6, 2), 0.5)
    for coupling in ("wasserstein", "independent"):
        d, iters, residual = mfsc.metric_fixed_point(P, R, pi, 0.9, coupling)
        assert residual <= 1e-10 and iters > 0
        assert np.allclose(d, d.T) and np.allclose(np.diag(d), 0)
        assert np.allclose(mfsc.bisim_operator(P, R, pi, d, 0.9, coupling), d, atol=1e-9)


def test_value_iteration_and_certify():
    P, R = mfsc.random_mdp(5, 5, 3, 0.9)
    v, greedy = mfsc.value_iteration(P, R, 0.9)
    q = R + 0.9 * P @ v
    assert np.allclose(v, q.max(axis=1), atol=1e-9)
    assert list(greedy) == list(q.argmax(axis=1))
    report = mfsc.certify(P, R, 0.9, 0.5)
    assert not report["violation"] and report["slack"] >= 0


def test_losses_and_rank_correlation():
    assert mfsc.cosine_distance([1.0, 0.0], [0.0, 2.0]) == pytest.approx(1.0)
    assert mfsc.spearman([1, 2, 3, 4], [10, 20, 30, 45]) == pytest.approx(1.0)
    z = np.eye(3)
    assert mfsc.fusion_loss(z, [0.0, 0.0, 0.0], z) >= 0
    assert mfsc.reconstruction_loss(np.ones((2, 3)), np.ones((2, 3))) == pytest.approx(0.0)


def test_render_and_config_errors():
    views = mfsc.render_state(json.dumps({"env": {"grid_size": 5, "view_height": 16, "view_width": 16}}), 0)
    assert len(views) >= 1 and views[0].shape == (16, 16, 3)
    with pytest.raises(ValueError):
        mfsc.config_hash(json.dumps({"env": {"grid_size": "five"}}))


def test_theory_checks():
    fp = mfsc.fixed_point_sweep(count=5)
    assert fp["passed"] and fp["failures"] == []
    bound = mfsc.value_bound_sweep(count=10)
    assert bound["passed"] and bound["violations"] == []
    with pytest.raises(ValueError):
        mfsc.value_bound_sweep(count=1, discount=0.9, c=0.5)
    grads = mfsc.grad_check_suite(points=1)
    assert grads["max_rel_error"] < 1e-4
