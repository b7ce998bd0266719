import math

import numpy as np
import pytest

from deepritz.adapt import indicators
from deepritz.bench import (
    LShapeSolution, case1, case2, case3, critical_exponent, eval_mesh_for, problem_by_name, report_errors,
)
from deepritz.elasticity import stress
from deepritz.functional import PenaltyConfig
from deepritz.mesh import build_uniform
from deepritz.network import zeros

ALPHA = 0.544483737


def analytic_residual_case1(x):
    # hand-differentiated div sigma for u = v (1, 1), v = (1-x^2)(1-y^2), mu = lam = 1
    X, Y = x[:, 0], x[:, 1]
    vxx, vyy, vxy = -2 * (1 - Y**2), -2 * (1 - X**2), 4 * X * Y
    # div sigma_i = mu lap u_i + (mu + lam) d_i div u, with div u = v_x + v_y
    return np.stack([vxx + vyy + 2 * (vxx + vxy), vxx + vyy + 2 * (vxy + vyy)], axis=1)


def test_case1_point_values_and_clamp():
    pb = case1()
    np.testing.assert_array_equal(pb.exact(np.array([[0.0, 0.0]])), [[1.0, 1.0]])
    t = np.linspace(-1, 1, 11)
    edges = np.concatenate([np.stack([t, -np.ones_like(t)], 1), np.stack([-np.ones_like(t), t], 1),
                            np.stack([t, np.ones_like(t)], 1)])
    assert not pb.exact(edges).any()


def test_case1_body_force_balances_stress():
    pb = case1()
    x = np.random.default_rng(0).uniform(-1, 1, (50, 2))
    np.testing.assert_allclose(pb.body_force(x), -analytic_residual_case1(x), atol=1e-10)


def test_case1_traction_is_sigma_n():
    pb = case1()
    y = np.linspace(-1, 1, 9)
    x = np.stack([np.ones_like(y), y], 1)
    np.testing.assert_allclose(pb.traction(x), pb.exact_stress(x) @ [1.0, 0.0], atol=1e-14)


def test_critical_exponent_by_bisection():
    assert critical_exponent(tol=1e-12) == pytest.approx(ALPHA, abs=1e-9)
    w = 3 * math.pi / 4
    a = critical_exponent()
    assert abs(a * math.sin(2 * w) + math.sin(2 * w * a)) < 1e-11


def test_case2_constants():
    ref = case2().reference
    assert ref["alpha"] == pytest.approx(ALPHA, abs=1e-9)
    assert ref["C1"] == pytest.approx(1.84136, abs=1e-5)
    assert ref["C2"] == pytest.approx(2.8, rel=1e-12)


@pytest.mark.parametrize("theta", [0.1, 1.0, 2.5, 4.0])
def test_case2_radial_scaling(theta):
    pb = case2()
    d = np.array([math.cos(theta), math.sin(theta)])
    for r in (0.01, 0.1, 0.4):
        ratio = np.linalg.norm(pb.exact(2 * r * d[None])) / np.linalg.norm(pb.exact(r * d[None]))
        assert ratio == pytest.approx(2**ALPHA, rel=1e-8)


def test_case2_stress_blows_up_toward_corner():
    pb = case2()
    d = np.array([[math.cos(0.7), math.sin(0.7)]])
    norms = [np.linalg.norm(pb.exact_stress(r * d)) for r in (0.5, 0.1, 0.01, 0.001)]
    assert all(np.isfinite(norms)) and all(a < b for a, b in zip(norms, norms[1:]))
    # sigma ~ r^(alpha - 1)
    assert norms[3] / norms[2] == pytest.approx(10 ** (1 - ALPHA), rel=1e-8)


def test_case2_exact_residual_grows_toward_corner():
    pb = case2()
    m = build_uniform(pb.geometry, 40, 40)
    eta = indicators(pb.exact, m, pb).eta
    r = np.hypot(*m.centroids.T)
    bands = [eta[(r >= lo) & (r < hi)].max() for lo, hi in ((0.5, 1.5), (0.2, 0.5), (0.0, 0.2))]
    assert all(np.isfinite(bands)) and bands[0] < bands[1] < bands[2]
    assert bands[0] < 1e-3 * bands[2]


def test_case2_traction_free_flanks():
    # the corner solution has no traction on the re-entrant edges
    sol = LShapeSolution(case2().material)
    r = np.linspace(0.05, 1, 7)
    on_pos_x = np.stack([r, 0 * r], 1)
    on_neg_y = np.stack([0 * r, -r], 1)
    s1 = stress(sol.mat, sol.gradient(on_pos_x)) @ [0.0, -1.0]
    s2 = stress(sol.mat, sol.gradient(on_neg_y)) @ [-1.0, 0.0]
    scale = np.linalg.norm(stress(sol.mat, sol.gradient(on_pos_x)))
    assert np.abs(s1).max() <= 1e-10 * scale and np.abs(s2).max() <= 1e-10 * scale


def test_case3_references_and_load():
    pb = case3()
    assert pb.reference == {"max_stress_yy": 13.8876, "max_displacement": 2.288e-4}
    assert pb.exact is None
    pts = np.array([[3.0, 10.0], [10.0, 4.0], [0.5, 0.5]])
    np.testing.assert_array_equal(pb.traction(pts), [[0, 4.5], [0, 0], [0, 0]])
    assert not pb.dirichlet(pts).any()


def test_problem_lookup():
    assert problem_by_name("case2").name == "case2"
    with pytest.raises(ValueError):
        problem_by_name("case4")


def test_eval_mesh_factor():
    m = build_uniform(case1().geometry, 3, 3)
    assert len(eval_mesh_for(m, 4)) == 9 * 16
    with pytest.raises(ValueError):
        eval_mesh_for(m, 3)


def test_oracle_errors_below_floor():
    pb = case1()
    row = report_errors(pb.exact, pb, build_uniform(pb.geometry, 200, 200), PenaltyConfig(100.0))
    for k in ("energy_error", "stress_error", "displacement_error"):
        assert row[k] <= 5e-3
    assert row["mean_indicator"] < 1e-6


def test_case2_oracle_errors_below_floor():
    pb = case2()
    row = report_errors(pb.exact, pb, build_uniform(pb.geometry, 200, 200))
    assert max(row["energy_error"], row["stress_error"], row["displacement_error"]) <= 5e-3


def test_zero_net_has_full_error():
    pb = case1()
    row = report_errors(zeros([2, 3, 2]), pb, build_uniform(pb.geometry, 20, 20))
    assert row["displacement_error"] == pytest.approx(1.0)
    assert row["energy_error"] == pytest.approx(1.0)


def test_case3_reports_maxima():
    pb = case3()
    net = zeros([2, 3, 2])
    net.biases[-1][:] = [-3e-4, 4e-4]
    row = report_errors(net, pb, build_uniform(pb.geometry, 8, 8))
    assert row["max_displacement"] == pytest.approx(5e-4)
    assert row["max_stress_yy"] == 0.0
    assert row["ref_max_stress_yy"] == 13.8876
