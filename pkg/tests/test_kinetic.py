import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from roughpme.coefficients import make_family
from roughpme.experiments import indicator_ws1_exact
from roughpme.kinetic import (KineticGrid, TestFunction, bv_xi, chi_bar, defect_measures, ibp_check,
                              interpolation_check, kinetic_function, signed_overlap, singular_moment,
                              transported_w_s1, w_s1_field, w_s1_norm, weak_form_residual, ws1_seminorm)
from roughpme.paths import DrivingPath, brownian_path, derive_seed
from roughpme.solver import SolverConfig, solve
from roughpme.torus import TorusGrid, VelocityGrid


def test_chi_bar_signs():
    np.testing.assert_array_equal(chi_bar(0.5, [-0.1, 0.0, 0.2, 0.6]), [0, 0, 1, 0])
    np.testing.assert_array_equal(chi_bar(-0.5, [-0.6, -0.2, 0.0, 0.2]), [0, -1, 0, 0])
    np.testing.assert_array_equal(chi_bar(0.0, [-0.1, 0.1]), [0, 0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.95, 0.95), min_size=8, max_size=16))
def test_overlap_integrates_to_u(vals):
    g = TorusGrid(1, len(vals))
    vg = VelocityGrid.symmetric(1.0, 8)
    ov = signed_overlap(np.array(vals), vg)
    np.testing.assert_allclose(ov.sum(axis=-1), vals, atol=1e-14)
    k = kinetic_function(g.field(np.array(vals)), vg)
    assert k.sign_contiguous()


def test_column_integral_and_range_check():
    g = TorusGrid(1, 8)
    vg = VelocityGrid.symmetric(1.0, 40)
    u = g.field(np.array([0.5, -0.25, 0.0, 0.75, -1.0, 0.1, 0.3, -0.6]))
    k = kinetic_function(u, vg)
    np.testing.assert_allclose(k.column_integral(), np.round(u.values / vg.spacing) * vg.spacing, atol=1e-12)
    with pytest.raises(ValueError, match="does not cover"):
        kinetic_function(g.field(np.full(8, 1.5)), vg)


def test_bv_constants_exact():
    g = TorusGrid(1, 8)
    vg = VelocityGrid.symmetric(1.0, 4)
    k = kinetic_function(g.field(np.array([0.5, -0.5, 0.0, 1.0] * 2)), vg)
    np.testing.assert_allclose(bv_xi(k), [2 + 0.5, 2 + 0.5, 0.0, 2 + 1.0] * 2)


@pytest.mark.parametrize("a,b", [(0.25, 0.5), (0.125, 0.875), (0.5, 0.75)])
@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_interval_indicator_seminorm(a, b, s):
    n = 64
    x = (np.arange(n) + 0.5) / n
    f = ((x > a) & (x < b)).astype(float)
    got = ws1_seminorm(f, 1.0 / n, s, periodic=False)
    assert got == pytest.approx(indicator_ws1_exact(a, b, s), rel=1e-12)


def _periodic_indicator(L, s):
    def inner(x):
        def seg(lo, hi):
            return (lo ** -s - hi ** -s) / s if hi > lo else 0.0
        lo, hi = L - x, 1 - x  # r = y - x over the complement
        tot = seg(lo, min(hi, 0.5))
        if hi > 0.5:
            tot += seg(1 - hi, 1 - max(lo, 0.5))
        return tot
    return 2 * quad(inner, 0, L, limit=200, points=[L - 0.5] if L > 0.5 else None)[0]


@pytest.mark.parametrize("L", [0.25, 0.5, 0.75])
def test_periodic_indicator_seminorm(L):
    n, s = 64, 0.5
    x = (np.arange(n) + 0.5) / n
    f = (x < L).astype(float)
    got = ws1_seminorm(f, 1.0 / n, s, periodic=True)
    assert got == pytest.approx(_periodic_indicator(L, s), rel=1e-7)
    assert ws1_seminorm(np.roll(f, 7), 1.0 / n, s) == pytest.approx(got, rel=1e-13)


def test_seminorm_invariances_and_2d():
    rng = np.random.default_rng(0)
    f = rng.standard_normal(32)
    assert ws1_seminorm(f + 3.0, 1 / 32, 0.4) == pytest.approx(ws1_seminorm(f, 1 / 32, 0.4))
    assert ws1_seminorm(np.ones(32), 1 / 32, 0.4) == 0.0
    f2 = rng.standard_normal((8, 8))
    s2 = ws1_seminorm(f2, 1 / 8, 0.5)
    assert s2 > 0
    assert ws1_seminorm(f2.T, 1 / 8, 0.5) == pytest.approx(s2, rel=1e-12)
    with pytest.raises(ValueError):
        ws1_seminorm(f, 1 / 32, 1.0)
    g = TorusGrid(1, 32)
    assert w_s1_field(g.field(f), 0.4) > ws1_seminorm(f, 1 / 32, 0.4)


def test_transported_identity_matches_joint_norm():
    g = TorusGrid(1, 32)
    vg = VelocityGrid.symmetric(1.0, 16)
    k = kinetic_function(g.sample(lambda x: 0.8 * np.sin(2 * np.pi * x)), vg)
    base = w_s1_norm(k, 0.5)
    ident = transported_w_s1(k, lambda X, K: (X, K), 0.5)
    assert ident == pytest.approx(base, rel=1e-12)
    with pytest.raises(ValueError, match="d = 1"):
        w_s1_norm(KineticGrid(TorusGrid(2, 8), vg, np.zeros((8, 8, 32), np.int8), None), 0.5)


def test_ibp_converges():
    psi = TestFunction.bump(0.5, 0.45)
    vg = VelocityGrid.symmetric(1.0, 256)
    errs = []
    for n in (32, 64, 128):
        u = TorusGrid(1, n).sample(lambda x: 0.5 + 0.3 * np.sin(2 * np.pi * x))
        errs.append(ibp_check(u, psi, 2.0, vg))
    assert errs[2] < errs[1] < errs[0]


def test_defect_measures_totals():
    g = TorusGrid(1, 64)
    cfg = SolverConfig(m=2.0, eta=0.05, kappa=0.0, grid=g, T=0.01, snapshots=(0.0025, 0.005, 0.0075))
    tr = solve(g.sample(lambda x: 1 + 0.5 * np.sin(2 * np.pi * x)), DrivingPath.constant(1, 0.01), cfg,
               make_family("separable_sine"))
    p, q = defect_measures(tr)
    gr = (np.roll(tr.states, -1, axis=1) - np.roll(tr.states, 1, axis=1)) * 32.0
    direct = np.trapezoid(0.05 * np.mean(gr**2, axis=1), tr.times)
    assert p.total == pytest.approx(direct, rel=1e-12)
    assert q.total > 0 and len(q) == 5 * 64
    const = solve(g.field(np.ones(64)), DrivingPath.constant(1, 0.01), cfg, make_family("separable_sine"))
    assert len(defect_measures(const)[0]) == 0


def test_singular_moment_clipping():
    from roughpme.kinetic import DefectMeasure

    m = DefectMeasure("q", np.zeros(3), np.zeros((3, 1)), np.array([0.5, 1e-10, -2.0]), np.array([1.0, 5.0, 1.0]))
    val, clipped = singular_moment(m, -1.0)
    assert val == pytest.approx(2.5) and clipped == 1
    with pytest.raises(ValueError):
        singular_moment(m, -2.0)


def test_interpolation_ratio_bounded():
    g = TorusGrid(1, 128)
    for m in (0.5, 1.0, 2.0):
        r = interpolation_check(g.sample(lambda x: 1 + 0.9 * np.sin(2 * np.pi * x)), m)
        assert 0 < r < 10
    assert interpolation_check(g.field(np.zeros(128)), 2.0) == 0.0


def test_weak_form_small_case():
    g = TorusGrid(1, 64)
    cfg = SolverConfig(m=1.0, eta=0.01, kappa=0.5, grid=g, T=0.01,
                       snapshots=tuple(np.linspace(0, 0.01, 33)[1:-1]))
    path = brownian_path(derive_seed(0, 5), 0.01, 9)
    co = make_family("separable_sine")
    tr = solve(g.sample(lambda x: 1 + 0.5 * np.sin(2 * np.pi * x)), path, cfg, co)
    rho = TestFunction.bump(1.2, 0.7, phase=0.13)
    d = weak_form_residual(tr, rho, 0.0, 0.01, path, co, detail=True)
    assert d["residual"] < 0.1 and d["snapshots"] == 33
    assert weak_form_residual(tr, rho, 0.0, 0.0, path, co) == 0.0
    with pytest.raises(ValueError, match="snapshot"):
        weak_form_residual(tr, rho, 0.0001, 0.01, path, co)
