import numpy as np
import pytest

from roughpme.coefficients import (CoefficientError, ConstantB, CustomTable, check_conservative_identity,
                                   conservative_residual, make_family, probe_points, validate_family)


def test_default_family_values():
    f = make_family("separable_sine")
    assert f.b(np.array([[0.25]]), np.array([0.0]))[0, 0, 0] == pytest.approx(1.0)
    assert f.c(np.array([[0.0]]), np.array([np.pi / 2]))[0, 0] == pytest.approx(2 * np.pi)
    assert f.c(np.array([[0.3]]), np.array([0.0]))[0, 0] == 0.0


@pytest.mark.parametrize("d,n", [(1, 1), (1, 2), (2, 1), (2, 2)])
def test_derivatives_match_finite_differences(d, n):
    f = make_family("separable_sine", d=d, n=n)
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (20, d))
    xi = rng.uniform(-2, 2, 20)
    h = 1e-6
    fd_xi = (f.b(x, xi + h) - f.b(x, xi - h)) / (2 * h)
    np.testing.assert_allclose(f.db_dxi(x, xi), fd_xi, atol=1e-6)
    fd_c = (f.c(x, xi + h) - f.c(x, xi - h)) / (2 * h)
    np.testing.assert_allclose(f.dc_dxi(x, xi), fd_c, atol=1e-5)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        fd = (f.b(x + e, xi) - f.b(x - e, xi)) / (2 * h)
        np.testing.assert_allclose(f.db_dx(x, xi)[..., i], fd, atol=1e-5)


@pytest.mark.parametrize("d,n", [(1, 1), (2, 2)])
def test_conservative_identity_default(d, n):
    f = make_family("separable_sine", d=d, n=n)
    r = check_conservative_identity(f, probe_points(d, 16, 16))
    assert r.ok and r.residual < 1e-10


def test_gate_rejects_broken_families():
    with pytest.raises(CoefficientError, match="conservative"):
        make_family("broken_divergence")
    with pytest.raises(CoefficientError, match="sign of the velocity"):
        make_family("broken_vanishing")


def test_constant_b_is_linear():
    B = ConstantB(np.array([[1.7]]))
    x = np.array([[0.2], [0.7]])
    xi = np.array([0.5, -1.0])
    np.testing.assert_allclose(B.b(x, xi)[:, 0, 0], 1.7)
    np.testing.assert_allclose(B.c(x, xi), 0.0)
    assert np.abs(conservative_residual(B, x, xi)).max() == 0.0


def test_unknown_family():
    with pytest.raises(CoefficientError, match="unknown"):
        make_family("nope")


def _write_table(path, fn, nx=17, nxi=21):
    xs = np.linspace(0, 1, nx)
    xis = np.linspace(-3, 3, nxi)
    with open(path, "w") as fh:
        fh.write("x,xi,a\n")
        for x in xs:
            for k in xis:
                fh.write(f"{float(x)!r},{float(k)!r},{float(fn(x, k))!r}\n")


def test_custom_table_roundtrip(tmp_path):
    p = tmp_path / "a.csv"
    _write_table(p, lambda x, k: 0.5 * np.sin(2 * np.pi * x) * np.sin(k), nx=33, nxi=61)
    t = CustomTable.from_csv(p)
    validate_family(t)
    x = np.array([[0.3]])
    xi = np.array([0.4])
    assert t.a(x, xi)[0, 0, 0] == pytest.approx(0.5 * np.sin(0.6 * np.pi) * np.sin(0.4), abs=2e-3)


def test_custom_table_rejects_nonperiodic(tmp_path):
    p = tmp_path / "bad.csv"
    _write_table(p, lambda x, k: x * np.sin(k))
    with pytest.raises(CoefficientError, match="periodic"):
        CustomTable.from_csv(p)


def test_custom_table_rejects_ragged(tmp_path):
    p = tmp_path / "ragged.csv"
    p.write_text("x,xi,a\n0,0,0\n0,1,0\n0.5,0,0\n")
    with pytest.raises(CoefficientError):
        CustomTable.from_csv(p)
