import json
import os
import subprocess
import sys

import numpy as np
import pytest

from roughpme.kernels import _numba, _numpy

PROBE = r"""
import json
import numpy as np
from roughpme import kernels
from roughpme.coefficients import make_family
from roughpme.paths import brownian_path
from roughpme.solver import SolverConfig, solve
from roughpme.torus import TorusGrid
out = {"backend": kernels.backend_name()}
for d, n in ((1, 32), (2, 16)):
    g = TorusGrid(d, n)
    u0 = g.sample(lambda *x: 1 + 0.4 * np.sin(2 * np.pi * x[0]))
    tr = solve(u0, brownian_path(5, 0.004, 5), SolverConfig(grid=g, T=0.004), make_family("separable_sine", d=d))
    out[str(d)] = tr.final.values.ravel().tolist()
print(json.dumps(out))
"""


def _run(flag):
    env = dict(os.environ, ROUGHPME_NUMBA=flag)
    r = subprocess.run([sys.executable, "-c", PROBE], env=env, capture_output=True, text=True, check=True)
    return json.loads(r.stdout.strip().splitlines()[-1])


def test_env_flag_selects_backend_with_matching_results():
    a, b = _run("1"), _run("0")
    assert a["backend"] == "numba" and b["backend"] == "numpy"
    for d in ("1", "2"):
        np.testing.assert_allclose(a[d], b[d], rtol=1e-12, atol=1e-14)


def _inputs(rng, shape):
    u = 1 + 0.5 * rng.standard_normal(shape)
    return u, u**2, np.sin(u), np.cos(u)


def test_rhs_and_phi_kernels_agree():
    from roughpme.solver import mollifier_rule

    rng = np.random.default_rng(0)
    offs, w, dw, mu2 = mollifier_rule(1e-2)
    u = rng.uniform(-3, 3, (2, 64))
    pa = _numba.phi_apply(u, 2.0, 1.5, offs, w, dw, mu2)
    pb = _numpy.phi_apply(u, 2.0, 1.5, offs, w, dw, mu2)
    np.testing.assert_allclose(pa[0], pb[0], rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(pa[1], pb[1], rtol=1e-13, atol=1e-15)
    u, F, fL, fR = _inputs(rng, (2, 64))
    al = np.abs(rng.standard_normal((2, 64)))
    ra = _numba.rhs_1d(u, F, fL, fR, al, 1 / 64)
    rb = _numpy.rhs_1d(u, F, fL, fR, al, 1 / 64)
    for x, y in zip(ra, rb):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("periodic", [True, False])
def test_pair_sums_agree(periodic):
    rng = np.random.default_rng(1)
    f = rng.standard_normal(40)
    k = rng.uniform(size=40)
    assert _numba.pair_sum_1d(f, k, 1.0, periodic) == pytest.approx(_numpy.pair_sum_1d(f, k, 1.0, periodic),
                                                                    rel=1e-12)
    f2 = rng.standard_normal((10, 12))
    k2 = rng.uniform(size=(10 if periodic else 19, 23))
    assert _numba.pair_sum_2d(f2, k2, 1.0, periodic, False) == pytest.approx(
        _numpy.pair_sum_2d(f2, k2, 1.0, periodic, False), rel=1e-12)
