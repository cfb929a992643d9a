import numpy as np
import pytest

from invlab.cgo import (
    CgoParameter,
    apply_K_xi,
    cgo_solution,
    cgo_w_solution,
    frames_from_bytes,
    frames_to_bytes,
    harmonic_exponent,
    harmonic_frame_exponents,
    kxi_residual,
    make_frame,
    theta_interpolants,
    w_residual,
    w_separation,
)
from invlab.errors import DimensionError, ParameterError, PoleError, SeparationError
from invlab.grid import Grid

from conftest import bump

XI = 4 * np.array([1, 1j, 0])


def test_cgo_parameter_validation():
    with pytest.raises(ParameterError):
        CgoParameter([1, 1, 0])  # xi.xi != 0
    with pytest.raises(ParameterError):
        CgoParameter(0.5 * np.array([1, 1j, 0]))  # |xi| < 2
    with pytest.raises(DimensionError):
        CgoParameter(np.ones((2, 2)))
    with pytest.raises(ParameterError):
        CgoParameter(-XI).require_e1_positive()


def test_kxi_single_mode_closed_form():
    g = Grid(3, 8, 2 * np.pi)
    x = g.coords()[0]
    f = np.exp(1j * x) * np.ones(g.shape)
    w = apply_K_xi(f, XI, g)
    # symbol -|k|^2 + i xi.k at k = e1
    assert np.abs(w - f / (-1 + 4j)).max() < 1e-14


def test_kxi_pole_raises_without_shift():
    g = Grid(3, 8, 2 * np.pi)
    with pytest.raises(PoleError):
        apply_K_xi(np.ones(g.shape), XI, g)


def test_kxi_shifted_residual(rng):
    g = Grid(3, 16, 1.0)
    fh = np.zeros(g.shape, complex)
    fh[:3, :3, :3] = rng.standard_normal((3, 3, 3)) + 1j * rng.standard_normal((3, 3, 3))
    f = np.fft.ifftn(fh)
    xi = 16 * np.array([1, 1j, 0])
    w = apply_K_xi(f, xi, g, shift="auto")
    assert kxi_residual(w, f, xi, g, shift="auto") < 1e-12


def test_frame_geometry():
    for eta in ([0, 0, 0], [2 * np.pi, 0, 0], [1.0, -2.0, 3.0]):
        fr = make_frame(eta, 6.0)
        assert fr.check()
        assert abs(np.sum(fr.xi1 * fr.xi1)) < 1e-10 * fr.rho**2
        assert np.allclose(fr.xi1 + fr.xi2, -2j * np.asarray(eta, float))
    with pytest.raises(ParameterError):
        make_frame([1, 0, 0], 0.0)
    frames = [make_frame([1, 2, 3], 5.0), make_frame([0, 0, 1], 7.0)]
    back = frames_from_bytes(frames_to_bytes(frames))
    assert all(np.allclose(a.zeta, b.zeta) and a.rho == b.rho for a, b in zip(frames, back))


def test_discrete_harmonic_exponents():
    h = 1 / 16
    k = harmonic_exponent(XI / 2, h)
    assert abs(np.sum(np.cosh(k * h)) - 3) < 1e-13
    assert np.abs(k - XI / 2).max() < 0.1
    fr = make_frame([2 * np.pi, 0, 0], 12.0)
    k1, k2 = harmonic_frame_exponents(fr, h)
    assert np.allclose(k1 + k2, -1j * fr.eta, atol=1e-13)
    for kk in (k1, k2):
        assert abs(np.sum(np.cosh(kk * h)) - 3) < 1e-12
    k1, k2 = harmonic_frame_exponents(make_frame([0, 0, 0], 12.0), h)
    assert np.allclose(k1 + k2, 0, atol=1e-13)


def test_cgo_solution_residual_and_decay():
    g = Grid(3, 24, 1.0)
    q = bump(g, g.center, 0.1, 0.1)
    res = []
    for t in (16, 32):
        u = cgo_solution(q, t * np.array([1, 1j, 0]), g, norms=True)
        res.append(u.residual(q))
        assert u.report.terms >= 1
    assert max(res) < 1e-8


def test_cgo_solution_rejects_small_xi():
    g = Grid(3, 16, 1.0)
    q = bump(g, g.center, 0.1, 50.0)
    with pytest.raises(ParameterError):
        cgo_solution(q, 2 * np.array([1, 1j, 0]), g)


def test_w_solution_theta_and_separation():
    g = Grid(3, 24, 1.0)
    q = bump(g, g.center, 0.1, 0.05)
    xi = 24 * np.array([1, 1j, 0])
    v = cgo_solution(q, xi, g)
    w, _ = cgo_w_solution(q, xi, g, v=v)
    assert w_residual(w, v) < 1e-6
    z1, z2 = [0.4, 0.5, 0.5], [0.6, 0.5, 0.5]
    th = theta_interpolants(v, w, z1, z2)
    assert th.kronecker_defect() < 1e-10
    sep = w_separation(w, z1, z2)
    assert sep.ratio >= 0.5 * 24 and not sep.violated
    with pytest.raises(SeparationError):
        theta_interpolants(v, w, z1, z1)
