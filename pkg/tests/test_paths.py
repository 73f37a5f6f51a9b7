import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughpme.paths import (DrivingPath, RoughLift, brownian_path, chen_defect, derive_seed, dyadic_refine,
                            fbm_path, holder_norm, level2_signature, levy_area, metric_sample_times, rough_metric)

L_PATH = DrivingPath([0.0, 1.0, 2.0], [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])


def test_path_validation():
    with pytest.raises(ValueError):
        DrivingPath([0.0, 0.0, 1.0], [[0.0], [1.0], [2.0]])
    with pytest.raises(ValueError):
        DrivingPath([0.0, 1.0], [[0.0], [np.inf]])
    p = DrivingPath.linear([2.0], 1.0, 5)
    with pytest.raises(AttributeError):
        p.times = None


def test_interp_and_slopes():
    p = DrivingPath([0.0, 1.0, 3.0], [[0.0], [2.0], [0.0]])
    assert p(0.5)[0] == pytest.approx(1.0)
    assert p.slope_at(2.0)[0] == pytest.approx(-1.0)
    assert p.next_knot(0.2) == 1.0
    assert p.zdot_max() == pytest.approx(2.0)


def test_shift_and_reverse():
    p = brownian_path(3, 1.0, 17)
    s = p.shifted(0.25)
    assert s.t0 == 0.0 and s.T == pytest.approx(0.75)
    np.testing.assert_allclose(s(0.1), p(0.35))
    r = p.reversed(1.0)
    np.testing.assert_allclose(r(0.2), p(0.8))


def test_seed_splitting_is_stable():
    a = brownian_path(derive_seed(5, 1, 2), 1.0, 9)
    b = brownian_path(derive_seed(5, 1, 2), 1.0, 9)
    c = brownian_path(derive_seed(5, 1, 3), 1.0, 9)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_brownian_increment_variance():
    rng_paths = [brownian_path(derive_seed(0, k), 1.0, 257) for k in range(40)]
    inc = np.concatenate([np.diff(p.values[:, 0]) for p in rng_paths])
    assert np.var(inc) * 256 == pytest.approx(1.0, rel=0.1)


def test_fbm_covariance_and_limits():
    H = 0.7
    samples = np.array([fbm_path(derive_seed(1, k), H, 1.0, 5).values[-1, 0] for k in range(2000)])
    assert np.var(samples) == pytest.approx(1.0, rel=0.1)
    with pytest.raises(ValueError):
        fbm_path(0, 1.0, 1.0, 5)
    with pytest.raises(ValueError, match="limited"):
        fbm_path(0, 0.5, 1.0, 2**14 + 1)


def test_l_path_levy_area_is_half():
    A = levy_area(level2_signature(L_PATH, 0.0, 2.0))
    assert A[0, 1] == 0.5
    assert A[1, 0] == -0.5


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_chen_relation(a, b):
    p = brownian_path(derive_seed(2, 0), 1.0, 33, dims=2)
    s, u = sorted((a, b))
    assert chen_defect(p, s, u, 1.0) <= 1e-12


def test_lift_increments_match_direct_signature():
    p = brownian_path(derive_seed(2, 1), 1.0, 33, dims=2)
    lift = RoughLift(p)
    for s, t in [(0.0, 1.0), (0.13, 0.77), (0.5, 0.5)]:
        np.testing.assert_allclose(lift.level2(s, t), level2_signature(p, s, t), atol=1e-12)


def test_reversal_cancels():
    p = brownian_path(derive_seed(2, 2), 1.0, 17, dims=2)
    r = p.reversed(1.0)
    both = DrivingPath(np.concatenate([p.times, 1.0 + r.times[1:]]), np.vstack([p.values, r.values[1:]]))
    assert np.abs(level2_signature(both, 0.0, 2.0)).max() <= 1e-12


def test_rough_metric_properties():
    p = brownian_path(derive_seed(3, 0), 1.0, 65)
    q = dyadic_refine(p, 3)
    A, B = RoughLift(p), RoughLift(q)
    assert rough_metric(A, A, 0.4) == 0.0
    d, l1, l2 = rough_metric(A, B, 0.4, components=True)
    assert d == pytest.approx(max(l1, l2)) and d > 0
    assert rough_metric(A, B, 0.4) == pytest.approx(rough_metric(B, A, 0.4))
    with pytest.raises(ValueError):
        rough_metric(A, B, 0.3)
    with pytest.raises(ValueError):
        rough_metric(A, RoughLift(brownian_path(0, 1.0, 5, dims=2)), 0.4)


def test_linear_path_metric_closed_form():
    a = DrivingPath.linear([1.0], 1.0, 3)
    b = DrivingPath.linear([3.0], 1.0, 3)
    # level-1 difference 2|t-s| over |t-s|^alpha peaks at |t-s| = 1
    d, l1, _ = rough_metric(RoughLift(a), RoughLift(b), 0.6, components=True)
    assert l1 == pytest.approx(2.0)


def test_sample_times_are_deterministic():
    p = brownian_path(0, 1.0, 9)
    np.testing.assert_array_equal(metric_sample_times([p], 2, 7), metric_sample_times([p], 2, 7))


def test_holder_norm_linear():
    assert holder_norm(DrivingPath.linear([2.0], 1.0, 5), 0.5) == pytest.approx(2.0)


def test_csv_roundtrip(tmp_path):
    p = brownian_path(1, 1.0, 9, dims=2)
    p.to_csv(tmp_path / "z.csv")
    q = DrivingPath.from_csv(tmp_path / "z.csv")
    np.testing.assert_array_equal(p.values, q.values)
    np.testing.assert_array_equal(p.times, q.times)
