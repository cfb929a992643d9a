"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line.

Run standalone (``python tests/test_acceptance.py``) or under pytest. The
sizes and budgets are the full ones, so the whole file takes about 20 minutes
on one core.
"""

import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from invlab.boundary import boundary_layout
from invlab.cgo import apply_K_xi, cgo_solution, kxi_residual
from invlab.dtn import assemble_dtn
from invlab.experiments import (
    Scenario,
    estimator_consistency_experiment,
    gaussian,
    identity_residual_suite,
    joint_stability_experiment,
    separation_and_theta_suite,
    truncation_radius_suite,
    verify_decay_estimates,
)
from invlab.forward import DirichletSolver, PointSource, solve_with_source
from invlab.grid import Grid
from invlab.inversion import build_probes, recover_source
from invlab.norms import apply_cutoff

_printer = print


def report(number: int, ok: bool, detail: str):
    _printer(f"ACCEPTANCE {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(autouse=True)
def _show(capsys):
    """Print verdict lines even when pytest captures output."""
    global _printer

    def out(line):
        with capsys.disabled():
            print(line, flush=True)

    _printer = out
    yield
    _printer = print


def _timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def _checks(rep) -> str:
    return " ".join(f"{k}={'ok' if v else 'FAILED'}" for k, v in rep.checks.items())


def test_01_kxi_correctness():
    g = Grid(3, 64, 1.0)
    rng = np.random.default_rng(0)
    fh = np.zeros(g.shape, complex)
    fh[:8, :8, :8] = rng.standard_normal((8, 8, 8)) + 1j * rng.standard_normal((8, 8, 8))
    f = np.fft.ifftn(fh)
    xi = 32 * np.array([1, 1j, 0]) / np.sqrt(2)
    w, secs = _timed(apply_K_xi, f, xi, g, shift="auto")
    res = kxi_residual(w, f, xi, g, shift="auto")
    report(1, res <= 1e-12 and secs < 5, f"K_xi residual {res:.2e} (<= 1e-12), {secs:.2f}s (< 5s) on 64^3")


def test_02_decay_slopes():
    rep, secs = _timed(verify_decay_estimates)
    s = rep.summary
    ok = rep.passed and secs < 120
    report(2, ok, f"slopes K_xi f {s['slope_kxi_f_hs_delta']:+.3f}, psi H^s {s['slope_psi_hs']:+.3f} (target -1 +- 0.15),"
                  f" psi H^s+1 {s['slope_psi_hs1']:+.3f} (>= -0.15); {secs:.0f}s (< 120s); {_checks(rep)}")


def test_03_cgo_residual():
    g = Grid(3, 64, 1.0)
    q = apply_cutoff(gaussian(g, g.center, 0.1, 0.1), g, g.L / 8)
    u = cgo_solution(q, 32 * np.array([1, 1j, 0]) / np.sqrt(2), g)
    res = u.residual(q)
    report(3, res <= 1e-6, f"||(Delta+q)u||/||u|| = {res:.2e} (<= 1e-6) at |xi| = 32, 64^3, {u.report.terms} terms")


def test_04_identity_residuals():
    rep, secs = _timed(identity_residual_suite)
    s = rep.summary
    report(4, rep.passed and secs < 120,
           f"max identity residual {s['max_identity_residual']:.2e}, max affine residual {s['max_affine_residual']:.2e}"
           f" (<= 1e-10), 50 cases, {secs:.0f}s (< 120s)")


def test_05_theta_and_separation():
    rep = separation_and_theta_suite()
    s = rep.summary
    report(5, rep.passed, f"Kronecker defect {s['max_kronecker_defect']:.1e} (<= 1e-10), phi residual "
                          f"{s['phi_residual']:.1e} (<= 1e-5), min ratio/Re(xi.e1) {s['min_ratio_over_xi_e1']:.3f}"
                          f" (>= 0.5), violations {s['bound_violations']}")


def test_06_estimator_consistency():
    rep = estimator_consistency_experiment()
    s = rep.summary
    report(6, rep.passed, f"oracle error slope in rho: pooled {s['slope_pooled']:+.3f} (target -1 +- 0.2), per-eta "
                          f"range [{s['slope_min']:+.2f}, {s['slope_max']:+.2f}], {s['etas_within_tol']}/10 within")


def test_07_truncation_radius():
    rep = truncation_radius_suite()
    s = rep.summary
    report(7, rep.passed, f"R0(1e-3, s=3, C=1) = {s['R0_eps1e-3_s3_C1']:.6f} (7.7 +- 0.05, oracle {s['R0_reference']:.6f}),"
                          f" max equation residual {s['max_equation_residual']:.1e}; {_checks(rep)}")


def _flux_source(n, a=2.0, z=(0.25, 0.5, 0.5)):
    g = Grid(3, n, 1.0)
    tr = solve_with_source(None, PointSource(a, z), None, g).neumann_trace()
    return g, boundary_layout(g), tr


def test_08_source_recovery():
    # closed form: <Phi(0), exp(xi.x/2)> = a exp(xi.z/2) = 2 e^0.5 e^i for xi = 4(e1 + i e2), z = (1/4, 1/2, 1/2)
    g, lay, tr = _flux_source(48)
    xi = 4 * np.array([1, 1j, 0])
    closed = 2 * np.exp(0.5 + 1j)
    pair = lay.pair(tr, np.exp(lay.points @ xi / 2))
    err_closed = abs(pair - closed) / abs(closed)
    part1 = err_closed <= 1e-10

    errs = []
    for n in (24, 48):
        _, lay_n, tr_n = _flux_source(n)
        errs.append(abs(lay_n.pair(tr_n, np.ones(lay_n.size)) - 2.0) / 2.0)
    order = np.log2(errs[0] / errs[1])
    part2 = order >= 1.5

    t0 = time.perf_counter()
    g = Grid(3, 48, 1.0)
    r2 = sum((x - c) ** 2 for x, c in zip(g.coords(), (0.55, 0.45, 0.5)))
    q = apply_cutoff(3 * np.exp(-r2 / (2 * 0.1**2)), g, g.L / 8)
    src = PointSource(2.0, (0.3, 0.55, 0.6))
    solver = DirichletSolver(g, q)
    dtn = assemble_dtn(q, g, src, g.L / 8, solver=solver, linear=False)
    est = recover_source(dtn, q, build_probes(q, g, solver=solver), margin=g.L / 8)
    secs = time.perf_counter() - t0
    zerr = float(np.abs(est.z_hat - src.z).max() / g.h)
    aerr = abs(est.a_hat - 2.0) / 2.0
    part3 = zerr <= 2 and aerr <= 1e-2 and secs < 180

    report(8, part1 and part2 and part3,
           f"closed-form pairing rel. error {err_closed:.1e} (<= 1e-10: {'ok' if part1 else 'FAILED'}); "
           f"constant-probe error {errs[0]:.1e} -> {errs[1]:.1e}, order {order:.2f} (O(h^2): {'ok' if part2 else 'FAILED'}); "
           f"48^3 localization |z-z*|/h = {zerr:.2f}, |a-a*|/|a| = {aerr:.1e}, {secs:.0f}s ({'ok' if part3 else 'FAILED'})")


def test_09_joint_stability():
    rep, secs = _timed(joint_stability_experiment, Scenario())
    s = rep.summary
    pot, src = rep.column("potential_error"), rep.column("source_error")
    report(9, rep.passed and secs < 900,
           f"potential {pot[0]:.2e} -> {pot[-1]:.2e} (baseline {s['baseline_potential_error']:.2e}, exponent "
           f"{s['potential_log_power_exponent']:+.2f}); source {src[0]:.2e} -> {src[-1]:.2e} (baseline "
           f"{s['baseline_source_error']:.2e}, exponent {s['source_log_power_exponent']:+.2f}); {secs:.0f}s (< 900s); "
           f"{_checks(rep)}")


REPRO_CONFIG = """
[grid]
n = 16
L = 0.5

[potential]
seed = 11

[noise]
epsilons = [1e-1, 1e-3]

[output]
dir = "out"
"""


def _pipeline(workdir: Path) -> dict:
    from invlab.cli import main

    workdir.mkdir()
    (workdir / "run.toml").write_text(REPRO_CONFIG)
    cwd = os.getcwd()
    os.chdir(workdir)
    try:
        codes = [
            main(["forward", "run.toml"]),
            main(["reconstruct", "run.toml", "--dtn1", "out/dtn_ref.dtnm", "--dtn2", "out/dtn.dtnm",
                  "--ref-q", "out/q_ref.sfld", "--true-q", "out/q_true.sfld"]),
            main(["localize", "run.toml", "--dtn", "out/dtn.dtnm", "--q", "out/q_true.sfld"]),
            main(["verify", "run.toml", "--suite", "radius"]),
            main(["sweep", "run.toml", "--channel", "joint"]),
        ]
    finally:
        os.chdir(cwd)
    if any(c not in (0, 1) for c in codes):
        raise RuntimeError(f"pipeline exit codes {codes}")
    return {p.name: p.read_bytes() for p in sorted((workdir / "out").iterdir())}


def test_10_reproducibility(tmp_path):
    first = _pipeline(tmp_path / "a")
    second = _pipeline(tmp_path / "b")
    differ = [k for k in first if first[k] != second.get(k)]
    ok = not differ and first.keys() == second.keys() and len(first) >= 8
    report(10, ok, f"{len(first)} output files (CSV, SFLD, DTNM) compared byte for byte; differing: {differ or 'none'}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
