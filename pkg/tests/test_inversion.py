import numpy as np
import pytest

from invlab.cgo import harmonic_exponent, make_frame
from invlab.dtn import assemble_dtn
from invlab.errors import ParameterError
from invlab.forward import PointSource
from invlab.grid import Grid
from invlab.inversion import (
    ReconstructionParams,
    build_probes,
    choose_truncation_radius,
    estimate_q_hat,
    joint_recovery,
    lattice_frequencies,
    radius_lower_bound,
    reconstruct_potential_diff,
    recover_source,
)

from conftest import bump

# brentq root of 3 log R + R = 2 log 1e3 (s = d = 3, C = 1)
R0_ORACLE = 7.694135364784174


def test_truncation_radius_oracle():
    assert choose_truncation_radius(1e-3, 3, 3, 1.0) == pytest.approx(R0_ORACLE, rel=1e-12)


@pytest.mark.parametrize("eps", [1e-1, 1e-4, 1e-8])
@pytest.mark.parametrize("s,C", [(2, 0.5), (3, 1.0), (4, 2.0)])
def test_truncation_radius_equation_and_bound(eps, s, C):
    R = choose_truncation_radius(eps, s, 3, C)
    assert R ** (2 * s - 3) * np.exp(C * R) == pytest.approx(eps**-2, rel=1e-10)
    assert R >= radius_lower_bound(eps, s, 3, C)


def test_truncation_radius_rejects():
    with pytest.raises(ParameterError):
        choose_truncation_radius(1.5)
    with pytest.raises(ParameterError):
        choose_truncation_radius(1e-2, s=1, d=3)
    with pytest.raises(ParameterError):
        choose_truncation_radius(1e-2, C=0.0)


def test_params_validation():
    with pytest.raises(ParameterError):
        ReconstructionParams(s=1)
    with pytest.raises(ParameterError):
        ReconstructionParams(rho=2.0)  # below C1 M + 1 = 5
    with pytest.raises(ParameterError):
        ReconstructionParams(mode="exact")


def test_lattice_frequencies_ball():
    g = Grid(3, 8, 1.0)
    etas = lattice_frequencies(g, 2 * np.pi * 1.01)
    assert len(etas) == 7
    assert np.allclose(etas[0], 0)
    assert np.all(np.linalg.norm(etas, axis=1) <= 2 * np.pi * 1.01)


@pytest.fixture(scope="module")
def pair():
    g = Grid(3, 12, 1.0)
    q1 = bump(g, g.center, 0.12, 0.05)
    q2 = q1 + bump(g, g.center + 0.04, 0.1, 0.05)
    return g, q1, q2, assemble_dtn(q1, g), assemble_dtn(q2, g)


def test_born_estimate_zero_for_equal_maps(pair):
    g, q1, _, d1, _ = pair
    est = estimate_q_hat(d1, d1, make_frame([2 * np.pi, 0, 0], 6.0), q1)
    assert est == 0


def test_oracle_estimate_tracks_target(pair):
    g, q1, q2, d1, d2 = pair
    p = ReconstructionParams(s=2, rho=16.0, mode="oracle")
    est = estimate_q_hat(d1, d2, make_frame([2 * np.pi, 0, 0], 16.0), q1, q2, p, details=True)
    assert abs(est.value - est.target) <= abs(est.volume) + 1e-12
    assert abs(est.value - est.target) < 0.05 * abs(est.target)


def test_reconstruction_is_real_and_hermitian(pair):
    g, q1, q2, d1, d2 = pair
    rec = reconstruct_potential_diff(d1, d2, q1, ReconstructionParams(s=2), R=2 * np.pi * 1.5)
    assert rec.imag_residue < 1e-12
    assert rec.values.shape == g.shape
    rows = list(rec.rows())
    assert len(rows) == len(rec.etas) == 19
    # mean mode estimates the integral of dq
    mean = rec.q_hat[np.argmin(np.linalg.norm(rec.etas, axis=1))].real
    assert mean == pytest.approx(float(np.sum(q2 - q1)) * g.h**3, rel=0.05)


def test_source_recovery_q_zero():
    g = Grid(3, 16, 1.0)
    src = PointSource(2.0, (0.43, 0.52, 0.57))
    dtn = assemble_dtn(None, g, src, linear=False)
    est = recover_source(dtn, np.zeros(g.shape))
    assert np.abs(est.z_hat - src.z).max() <= 2 * g.h
    assert abs(est.a_hat - 2.0) / 2.0 <= 1e-2
    assert est.sensitivity.shape == (3,)


def test_probe_interpolation_matches_values():
    g = Grid(3, 8, 1.0)
    probes = build_probes(None, g)
    z = np.array([0.37, 0.52, 0.61])
    at = probes.at(z)
    assert probes.labels[-1] == "const"
    assert at[-1] == pytest.approx(1.0, abs=1e-12)
    # with q = 0 the exponential probes are exact discrete solutions
    kappa = harmonic_exponent(probes.labels[0] / 2, g.h)
    exact = np.exp((z - g.center) @ kappa)
    assert abs(at[0] - exact) <= 2e-2 * abs(exact)


def test_joint_recovery_needs_smoother_potential(pair):
    g, q1, _, d1, d2 = pair
    with pytest.raises(ParameterError):
        joint_recovery(d2, d1, q1, ReconstructionParams(s=2), R=7.0)
