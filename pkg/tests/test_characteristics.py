import numpy as np
import pytest

from roughpme.characteristics import (FlowError, FlowMap, check_sign_preservation, flow_backward, flow_forward,
                                      flow_jacobian, flow_stability, inverse_error, lipschitz_rate,
                                      velocity_comparability, write_trajectory_csv)
from roughpme.coefficients import ConstantB, make_family
from roughpme.paths import DrivingPath, brownian_path, derive_seed, dyadic_refine

COEF = make_family("separable_sine")


def _pts(n=50, seed=0, d=1):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, (n, d)), rng.uniform(-2, 2, n)


def test_constant_path_is_identity():
    x, xi = _pts()
    p = DrivingPath.constant(1, 1.0)
    f = flow_forward((x, xi), 0.0, 1.0, p, COEF, 1e-2)
    np.testing.assert_array_equal(f.x_unwrapped, x)
    np.testing.assert_array_equal(f.xi, xi)


def test_constant_b_closed_form():
    B = ConstantB(np.array([[1.5]]))
    p = DrivingPath.linear([2.0], 1.0, 3)
    x, xi = _pts()
    f = flow_forward((x, xi), 0.0, 1.0, p, B, 1e-2)
    np.testing.assert_allclose(f.x_unwrapped[:, 0], x[:, 0] - 1.5 * 2.0, atol=1e-12)
    np.testing.assert_allclose(f.xi, xi)
    assert np.all(f.winding == np.floor(x[:, 0] - 3.0))


def test_inverse_and_determinant():
    p = brownian_path(derive_seed(0, 5), 0.5, 17)
    x, xi = _pts()
    assert inverse_error((x, xi), 0.0, 0.5, p, COEF, 1e-4) < 1e-8
    J = flow_jacobian((x, xi), 0.0, 0.5, p, COEF, 1e-4)
    assert np.abs(np.linalg.det(J) - 1).max() < 1e-5


def test_jacobian_matches_finite_difference():
    p = brownian_path(derive_seed(0, 6), 0.3, 9)
    x, xi = _pts(5)
    J = flow_jacobian((x, xi), 0.0, 0.3, p, COEF, 1e-4)
    h = 1e-6
    fp = flow_forward((x, xi + h), 0.0, 0.3, p, COEF, 1e-4)
    fm = flow_forward((x, xi - h), 0.0, 0.3, p, COEF, 1e-4)
    np.testing.assert_allclose(J[:, 1, 1], (fp.xi - fm.xi) / (2 * h), atol=1e-5)


def test_backward_flow_semantics():
    p = brownian_path(derive_seed(0, 7), 1.0, 17)
    x, xi = _pts(10)
    fw = flow_forward((x, xi), 0.2, 0.9, p, COEF, 1e-4)
    bw = flow_backward(fw, 0.2, 0.9, p, COEF, 1e-4)
    np.testing.assert_allclose(bw.x_unwrapped, x, atol=1e-9)
    with pytest.raises(ValueError):
        flow_backward((x, xi), 0.5, 0.2, p, COEF, 1e-4)


def test_sign_preservation_and_negative_control():
    p = brownian_path(derive_seed(0, 8), 0.5, 17)
    x, xi = _pts(200)
    assert check_sign_preservation((x, xi), 0.0, 0.5, p, COEF, 1e-3)["violations"] == 0
    bad = make_family("broken_vanishing", validate=False)
    out = check_sign_preservation((x, xi), 0.0, 0.5, p, bad, 1e-3)
    assert out["violations"] > 0 and out["first_violation"] is not None


def test_zero_velocity_stays_zero():
    p = brownian_path(derive_seed(0, 9), 1.0, 33)
    x, _ = _pts(20)
    f = flow_forward((x, np.zeros(20)), 0.0, 1.0, p, COEF, 1e-3)
    assert np.all(f.xi == 0.0)


def test_velocity_comparability_near_one_for_small_noise():
    p = brownian_path(derive_seed(0, 10), 1.0, 17)
    x, xi = _pts(20)
    lo, hi = velocity_comparability((x, np.abs(xi) + 0.1), 1.0, p, make_family("separable_sine", [0.02]),
                                    1e-3)
    assert 0.8 < lo <= 1.0 <= hi < 1.25


def test_flow_map_and_identity():
    p = brownian_path(derive_seed(0, 11), 0.5, 9)
    fm = FlowMap(p, COEF, 0.0, 0.5, 1e-4)
    bm = FlowMap(p, COEF, 0.0, 0.5, 1e-4, direction="backward")
    x, xi = _pts(10)
    X, K = fm(x, xi)
    Y, L = bm(X, K)
    np.testing.assert_allclose(Y, x, atol=1e-9)
    ident = FlowMap.identity()
    X0, K0 = ident(x, xi)
    np.testing.assert_array_equal(X0, x)
    with pytest.raises(ValueError):
        FlowMap(p, COEF, 0.0, 0.5, direction="sideways")


def test_flow_stability_constant_b_law():
    base = brownian_path(derive_seed(0, 12), 1.0, 65)
    cb = ConstantB(np.array([[1.7]]))
    fs = flow_stability(dyadic_refine(base, 2), dyadic_refine(base, 5), 0.4, cb, _pts(4))
    assert fs.flow_distance / fs.level1 == pytest.approx(1.7, rel=1e-9)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_flow_raises():
    p = DrivingPath.linear([1e200], 1.0, 2)
    with pytest.raises(FlowError):
        flow_forward(_pts(2), 0.0, 1.0, p, make_family("constant_b", [1e200]), 0.5)


def test_lipschitz_and_trajectory_csv(tmp_path):
    assert lipschitz_rate(COEF, 3.0) > 0
    p = brownian_path(derive_seed(0, 13), 0.5, 9)
    info = write_trajectory_csv(tmp_path / "t.csv", p, COEF, [0.3], 0.7, 0.0, 0.5, 1e-3)
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert rows[0] == "t,x1,xi" and len(rows) == 10
    assert "winding" in info
