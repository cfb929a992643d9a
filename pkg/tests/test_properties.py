"""Property-based checks on the cheap building blocks."""

import numpy as np
from hypothesis import given, settings, strategies as st

from invlab.cgo import make_frame
from invlab.dtn import DtnMap, read_dtn, star_norm, write_dtn
from invlab.grid import Grid
from invlab.inversion import choose_truncation_radius, radius_lower_bound
from invlab.io import read_field, write_field
from invlab.norms import smoothstep7, source_diff_norm

G4 = Grid(3, 4, 1.0)
NB4 = 6 * 3**2 + 12 * 3 + 8  # boundary nodes of a 5^3 closed grid

eps_st = st.floats(1e-12, 0.5)
s_st = st.integers(2, 5)
c_st = st.floats(0.1, 4.0)


@given(eps_st, eps_st, s_st, c_st)
def test_radius_decreases_with_noise(e1, e2, s, C):
    lo, hi = sorted((e1, e2))
    assert choose_truncation_radius(lo, s, 3, C) >= choose_truncation_radius(hi, s, 3, C) * (1 - 1e-12)


@given(eps_st, s_st, c_st)
def test_radius_above_lower_bound(eps, s, C):
    assert choose_truncation_radius(eps, s, 3, C) >= radius_lower_bound(eps, s, 3, C) * (1 - 1e-12)


@given(st.floats(-5, 5))
def test_smoothstep_range(t):
    v = float(smoothstep7(t))
    assert 0.0 <= v <= 1.0


point = st.tuples(*[st.floats(0.1, 0.9)] * 3)
amp = st.floats(0.1, 5.0)


@given(amp, point, amp, point)
def test_source_norm_symmetric_and_nonnegative(a1, z1, a2, z2):
    d12 = source_diff_norm(a1, z1, a2, z2, 2)
    d21 = source_diff_norm(a2, z2, a1, z1, 2)
    assert d12 >= 0
    assert np.isclose(d12, d21, rtol=1e-12, atol=1e-15)


@given(amp, point, amp, point, amp, point)
def test_source_norm_triangle(a1, z1, a2, z2, a3, z3):
    d13 = source_diff_norm(a1, z1, a3, z3, 2)
    d12 = source_diff_norm(a1, z1, a2, z2, 2)
    d23 = source_diff_norm(a2, z2, a3, z3, 2)
    assert d13 <= d12 + d23 + 1e-12


@given(st.tuples(*[st.integers(-3, 3)] * 3), st.floats(1.0, 40.0))
def test_frames_are_null_and_sum_to_eta(m, rho):
    eta = 2 * np.pi * np.array(m, float)
    fr = make_frame(eta, rho)
    scale = rho**2 + eta @ eta
    assert abs(np.sum(fr.xi1 * fr.xi1)) <= 1e-10 * scale
    assert abs(np.sum(fr.xi2 * fr.xi2)) <= 1e-10 * scale
    assert np.allclose(fr.xi1 + fr.xi2, -2j * eta)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_dtnm_round_trip_is_lossless(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((NB4, NB4))
    dtn = DtnMap(G4, rng.standard_normal(NB4), A)
    path = tmp_path_factory.mktemp("d") / "m.dtnm"
    write_dtn(path, dtn, {"seed": seed})
    back = read_dtn(path, G4)
    assert back.offset.tobytes() == dtn.offset.tobytes()
    assert back.linear.tobytes() == dtn.linear.tobytes()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), complex_=st.booleans(), closed=st.booleans())
def test_sfld_round_trip_is_lossless(tmp_path_factory, seed, complex_, closed):
    rng = np.random.default_rng(seed)
    shape = G4.closed_shape if closed else G4.shape
    v = rng.standard_normal(shape)
    if complex_:
        v = v + 1j * rng.standard_normal(shape)
    path = tmp_path_factory.mktemp("f") / "f.sfld"
    write_field(path, v, G4, {"k": 1})
    back, grid, meta = read_field(path, G4)
    assert grid == G4 and meta == {"k": 1}
    assert back.tobytes() == v.tobytes()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_star_norm_sup_between_parts_and_sum(seed):
    rng = np.random.default_rng(seed)
    from invlab.dtn import linear_from_coefficients, linear_norm, offset_norm

    C = rng.standard_normal((NB4, NB4))
    dtn = DtnMap(G4, rng.standard_normal(NB4), linear_from_coefficients(G4, C + C.T))
    sup, tot = star_norm(dtn, "sup"), star_norm(dtn, "sum")
    assert max(offset_norm(dtn), linear_norm(dtn)) <= sup * (1 + 1e-10)
    assert sup <= tot * (1 + 1e-10)
