import json

import numpy as np
import pytest

from roughpme import config as cfgmod, experiments as ex
from roughpme.coefficients import make_family
from roughpme.kinetic import TestFunction
from roughpme.paths import DrivingPath, brownian_path, derive_seed
from roughpme.solver import SolverConfig
from roughpme.torus import TorusGrid

COEF = make_family("separable_sine")
G = TorusGrid(1, 32)
CFG = SolverConfig(m=2.0, grid=G, T=0.01, kappa=0.5)
PATH = brownian_path(derive_seed(0, 21), 0.01, 9)
U0 = G.sample(lambda x: 1 + 0.5 * np.sin(2 * np.pi * x))
U1 = G.sample(lambda x: 1 + 0.5 * np.cos(2 * np.pi * x))


def test_report_bookkeeping(tmp_path):
    r = ex.Report("x", {"a": np.float64(1.5)}, {"tol": 1.0})
    r.check("ok", True, np.float64(0.1), 1.0)
    r.check("bad", False, [np.int64(3)], None)
    r.table("t", ["k", "v"], [(1, 2.0), (2, 3.0)])
    r.digest("d", np.arange(3.0))
    top = ex.Report("top")
    top.merge(r, "sub")
    assert top.failures == ["sub/bad"] and not top.passed
    json.dumps(ex._jsonable(top.to_dict()))
    cfg = cfgmod.parse_config({})
    ex.write_run(tmp_path, "x", cfg, r)
    ex.write_run(tmp_path, "x", cfg, r)
    assert len(json.loads((tmp_path / "index.json").read_text())) == 2
    assert (tmp_path / "t.dat").exists() and (tmp_path / "t.csv").exists()


def test_contraction_and_ordering():
    rep = ex.exp_contraction(U0, U1, PATH, CFG, COEF)
    assert rep.passed and "contraction" in [a["id"] for a in rep.assertions]
    hi = G.field(U0.values + 0.2)
    rep = ex.exp_contraction(hi, U0, PATH, CFG, COEF)
    assert rep.passed and "ordering" in [a["id"] for a in rep.assertions]


def test_identical_data_is_deterministic():
    rep = ex.exp_contraction(U0, U0, PATH, CFG, COEF)
    assert rep.passed and "determinism" in [a["id"] for a in rep.assertions]


def test_signed_contraction_recorded_only():
    s = G.sample(lambda x: 0.5 * np.sin(2 * np.pi * x))
    rep = ex.exp_contraction(s, G.field(-s.values), PATH, CFG, COEF)
    assert "contraction" not in [a["id"] for a in rep.assertions]
    assert "signed_contraction_holds" in rep.info


def test_mass_and_signed_l1():
    assert ex.exp_mass(U0, PATH, CFG, COEF).passed
    rep = ex.exp_mass(G.sample(lambda x: 0.5 * np.sin(2 * np.pi * x)), PATH, CFG, COEF)
    assert rep.passed and "l1_inequality" in [a["id"] for a in rep.assertions]


def test_cocycle_cases():
    assert ex.exp_cocycle(U0, PATH, 0.0, 0.01, CFG, COEF).passed
    s = float(PATH.times[4])
    rep = ex.exp_cocycle(U0, PATH, s, 0.01, CFG, COEF)
    assert rep.passed and rep.params["aligned"]
    mid = 0.5 * (PATH.times[1] + PATH.times[2]) + 1.234567e-7
    assert ex.exp_cocycle(U0, PATH, mid, 0.01, CFG, COEF).passed
    with pytest.raises(ValueError, match="misaligned"):
        ex.exp_cocycle(U0, PATH, mid, 0.01, CFG, COEF, aligned=True)


def test_equal_levels_give_zero_distance():
    base = brownian_path(derive_seed(0, 22), 0.01, 33)
    rep = ex.exp_driver_continuity(U0, base, [3, 3], 0.4, CFG, COEF)
    row = rep.tables["gaps"]["rows"][0]
    assert row[1] == 0.0 and row[3] == 0.0
    with pytest.raises(ValueError):
        ex.exp_driver_continuity(U0, base, [4, 3], 0.4, CFG, COEF)


def test_repeated_eta_has_zero_gap():
    rep = ex.exp_vanishing_regularization(U0, PATH, [0.01, 0.01], CFG, COEF)
    assert rep.tables["sweep"]["rows"][0][3] == 0.0


def test_energy_and_weak_form_small():
    cfg = SolverConfig(m=1.0, eta=0.1, kappa=0.0, grid=G, T=0.01)
    rep = ex.exp_energy_ledger({"kind": "sine"}, DrivingPath.constant(1, 0.01), cfg, COEF, points=(32, 64))
    assert rep.passed
    rho = TestFunction.bump(1.2, 0.7, phase=0.13)
    rep = ex.exp_weak_form({"kind": "sine"}, DrivingPath.constant(1, 0.01), cfg, COEF, rho, points=(16, 32))
    assert rep.passed


def test_signature_and_stiffness():
    assert ex.exp_signature().passed
    assert ex.transport_stiffness(COEF, PATH, CFG.with_(kappa=0.0)) == 1.0


def test_characteristics_small():
    rep = ex.exp_characteristics(COEF, brownian_path(derive_seed(0, 23), 0.1, 9), n_samples=50, flow_dt=1e-3,
                                 inverse_tol=1e-6, det_tol=1e-4)
    assert rep.passed


def test_flow_stability_small():
    rep = ex.exp_flow_stability(COEF, 0.4, 6, seed=1, levels=[1, 2, 3, 4], n_points=4, flow_dt=5e-3)
    assert rep.info["constant_b_C"] == pytest.approx(1.7, rel=1e-2)
    with pytest.raises(ValueError, match="distinct"):
        ex.exp_flow_stability(COEF, 0.4, 99, seed=1, levels=[1, 2])


def test_indicator_closed_form_symmetry():
    assert ex.indicator_ws1_exact(0.2, 0.5, 0.5) == pytest.approx(ex.indicator_ws1_exact(0.5, 0.8, 0.5))


def test_campaign_unknown_name_and_threads():
    with pytest.raises(KeyError):
        ex.run("nope", cfgmod.parse_config({}))
    assert ex.fan_out(abs, [-1, -2], threads=1) == [1, 2]
    assert ex.fan_out(abs, [-1, -2], threads=2) == [1, 2]
