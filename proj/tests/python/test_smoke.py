"""End-to-end smoke tests for the python module: every exposed operation runs
and agrees with small hand-checked values. Heavy numerics live in the C++
test suites; these only guard the binding layer."""

import math

import numpy as np
import pytest

import pwan


def test_version():
    assert pwan.__version__ == "0.1.0"


def test_partial_mass_singletons():
    alpha = np.array([[0.0]])
    beta = np.array([[1.0]])
    out = pwan.solve_partial_mass(alpha, beta, 1.0)
    assert out["objective"] == pytest.approx(1.0, abs=1e-12)
    assert out["transported"] == pytest.approx(1.0, abs=1e-12)
    plan = out["plan"]
    assert plan.shape == (1, 3)
    assert plan[0, 0] == 0 and plan[0, 1] == 0


def test_partial_mass_prefers_close_pairs():
    alpha = np.array([[0.0], [10.0]])
    beta = np.array([[0.5], [20.0]])
    out = pwan.solve_partial_mass(alpha, beta, 1.0)
    assert out["objective"] == pytest.approx(0.5, abs=1e-12)


def test_distance_threshold_never_moves_far_mass():
    alpha = np.array([[0.0], [100.0]])
    beta = np.array([[0.2], [50.0]])
    out = pwan.solve_distance_threshold(alpha, beta, 1.0)
    # Only the 0.0 -> 0.2 pair is profitable: cost 0.2 - 1.0 = -0.8.
    assert out["objective"] == pytest.approx(-0.8, abs=1e-12)
    assert out["transported"] == pytest.approx(1.0, abs=1e-12)


def test_weighted_measures():
    alpha = np.array([[0.0], [1.0]])
    beta = np.array([[0.0]])
    out = pwan.solve_partial_mass(
        alpha, beta, 2.0, alpha_weights=np.array([2.0, 1.0]),
        beta_weights=np.array([3.0]))
    assert out["objective"] == pytest.approx(0.0, abs=1e-12)


def test_wasserstein1_translation():
    x = np.linspace(0.0, 1.0, 5).reshape(-1, 1)
    assert pwan.wasserstein1(x, x + 3.0) == pytest.approx(15.0, abs=1e-9)


def test_duality_certificate_bounds_oracle():
    rng = np.random.default_rng(0)
    alpha = rng.normal(size=(12, 2))
    beta = rng.normal(size=(9, 2)) + 0.3
    mass = 4.5
    oracle = pwan.solve_partial_mass(alpha, beta, mass)["objective"]
    cert = pwan.duality_certificate(alpha, beta, mass, grid_points=400)
    assert cert["best_value"] <= oracle + 1e-9
    assert cert["best_value"] == pytest.approx(oracle, rel=1e-3)


def test_estimate_divergence_trace_and_bound():
    rng = np.random.default_rng(1)
    alpha = rng.normal(size=(20, 2))
    beta = rng.normal(size=(15, 2))
    out = pwan.estimate_divergence(
        alpha, beta, kind="mass", steps=40, updates=1, hidden=[16, 16], seed=3)
    assert np.isfinite(out["value"])
    assert out["bound"] > 0.0
    assert out["trace"].shape[1] == 5
    # The default mass is min(total) = 15; dual-feasible estimates cannot
    # exceed the exact optimum.
    oracle = pwan.solve_partial_mass(
        alpha, beta, min(len(alpha), len(beta)))["objective"]
    assert out["value"] <= oracle + 1e-6


def test_toy_discrepancies():
    X = np.array([[0.0]])
    assert pwan.l2_distance(X, X) == pytest.approx(0.0, abs=1e-15)
    phi0 = 1.0 / math.sqrt(2 * math.pi)
    assert pwan.kl_divergence(X, X, sigma=1.0, omega=0.0) == pytest.approx(
        -math.log(phi0), rel=1e-12)
    Y = np.array([[0.3], [1.0]])
    assert pwan.l2_distance(X, Y) == pytest.approx(pwan.l2_distance(Y, X))


def test_fig5_sweep_argmin():
    out = pwan.fig5_sweep(outliers=1)
    cols = out["columns"]
    values = out["values"]
    assert cols == ["t", "kl", "l2", "lm", "ld"]
    for name in ("lm", "ld"):
        col = cols.index(name)
        t_star = values[np.argmin(values[:, col]), 0]
        assert t_star == pytest.approx(0.0, abs=1e-12)


def test_fig12_sweep_shape():
    out = pwan.fig12_sweep(lo=-1.0, hi=1.0, step=0.5)
    assert out["values"].shape == (25, 5)
    w1 = out["values"][:, 4]
    assert w1.min() >= 0.0


def test_synthesize_counts_and_determinism():
    a = pwan.synthesize(shape="sphere", n=100, outliers=20, rotation_deg=15.0,
                        seed=9)
    b = pwan.synthesize(shape="sphere", n=100, outliers=20, rotation_deg=15.0,
                        seed=9)
    assert a["source"].shape == (100, 3)
    assert a["reference"].shape == (120, 3)
    assert sum(a["reference_is_outlier"]) == 20
    np.testing.assert_array_equal(a["source"], b["source"])
    np.testing.assert_array_equal(a["reference"], b["reference"])
    moved = a["source"] @ a["gt_linear"] + a["gt_translation"]
    np.testing.assert_allclose(moved, a["gt_moved"], atol=1e-12)


def test_register_rigid_micro():
    case = pwan.synthesize(shape="sphere-section", n=80, rotation_deg=10.0,
                           translation=0.05, seed=4)
    out = pwan.register_points(
        case["source"], case["reference"], mode="rigid", kind="mass",
        steps=30, hidden=[16, 16], seed=2, gt_moved=case["gt_moved"])
    assert out["moved"].shape == case["source"].shape
    assert out["rotation"].shape == (3, 3)
    # Orthonormality of the recovered rotation.
    eye = out["rotation"] @ out["rotation"].T
    np.testing.assert_allclose(eye, np.eye(3), atol=1e-9)
    assert np.isfinite(out["mse"])
