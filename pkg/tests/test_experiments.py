import numpy as np
import pytest

from invlab.dtn import assemble_dtn, linear_norm, offset_norm
from invlab.errors import ParameterError
from invlab.experiments import (
    ExperimentReport,
    NoiseModel,
    Scenario,
    log_power_exponent,
    loglog_slope,
    monotone_in_noise,
    potential_stability_experiment,
)
from invlab.grid import Grid
from invlab.io import read_csv
from invlab.norms import sobolev_norm

SMALL = Scenario(seed=3, n=16, L=0.5)


def test_loglog_slope_exact():
    x = np.array([8.0, 16.0, 32.0])
    assert loglog_slope(x, 3 * x**-1.5) == pytest.approx(-1.5)


def test_monotone_with_jitter():
    assert monotone_in_noise([1.0, 0.5, 0.54, 0.2])
    assert not monotone_in_noise([1.0, 0.5, 0.6])
    assert log_power_exponent([1e-1, 1e-2, 1e-4], [1.0, 0.5, 0.25]) < 0


def test_scenario_is_seeded_and_bounded():
    a, b = SMALL.build(), Scenario(seed=3, n=16, L=0.5).build()
    assert np.array_equal(a.q_true.values, b.q_true.values)
    assert a.source == b.source
    for q in (a.q_ref, a.q_true):
        assert sobolev_norm(q.values, a.grid, SMALL.s) <= SMALL.fill * SMALL.M * (1 + 1e-12)
    assert not np.array_equal(Scenario(seed=4, n=16, L=0.5).build().dq, a.dq)
    with pytest.raises(ParameterError):
        Scenario(width=(2.0, 3.0))


def test_noise_model_calibration_and_reuse():
    g = Grid(3, 8, 1.0)
    for mode in ("operator", "trace", "both"):
        nm = NoiseModel(0.0, mode, seed=5)
        assert nm.calibration(g) == pytest.approx(1.0, rel=1e-6)
    nm = NoiseModel(0.0, "both", seed=5)
    dtn = assemble_dtn(None, g)
    p = nm.with_epsilon(1e-2).perturb(dtn)
    diff = p - dtn
    assert offset_norm(diff) == pytest.approx(0.5e-2, rel=1e-6)
    assert linear_norm(diff) == pytest.approx(0.5e-2, rel=1e-6)
    # the random direction does not depend on epsilon
    q = nm.with_epsilon(1e-4).perturb(dtn)
    assert np.allclose((q - dtn).linear * 100, diff.linear)
    assert nm.with_epsilon(0.1).signs() == (1.0, -1.0)
    assert nm.signs() == (0.0,)
    with pytest.raises(ParameterError):
        NoiseModel(1.0)
    with pytest.raises(ParameterError):
        NoiseModel(0.1, "gaussian")


def test_report_write_round_trip(tmp_path):
    rep = ExperimentReport("t", ["a", "b"], [[1, 0.5], [2, 0.25]], {"seed": 1}, {"x": 1.5}, {"ok": True})
    assert rep.passed
    rep.write(tmp_path / "r.csv", {"config_hash": "abc"})
    prov, cols, rows = read_csv(tmp_path / "r.csv")
    assert cols == ["a", "b"] and rows[1] == ["2", "0.25"]
    assert prov["experiment"] == "t" and prov["config_hash"] == "abc"
    text = (tmp_path / "r.csv").read_text()
    assert "# check_ok: true" in text


def test_small_potential_sweep_runs():
    rep = potential_stability_experiment(SMALL, epsilons=(1e-1, 1e-2, 1e-3))
    errs = rep.column("potential_error")
    assert len(errs) == 3
    assert rep.checks["noise_calibrated"]
    assert rep.checks["monotone"]
    assert rep.summary["baseline_error"] <= errs.min()
