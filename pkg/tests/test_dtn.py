import numpy as np
import pytest

from invlab.boundary import boundary_fractional_norm, boundary_layout
from invlab.dtn import (
    DtnMap,
    alessandrini_pairing,
    assemble_dtn,
    dtn_operator_norm,
    linear_from_coefficients,
    offset_norm,
    linear_norm,
    read_dtn,
    star_norm,
    write_dtn,
)
from invlab.errors import DimensionError, FormatError
from invlab.forward import DirichletSolver, PointSource, solve_with_source
from invlab.grid import Grid

from conftest import bump


@pytest.fixture(scope="module")
def maps():
    g = Grid(3, 8, 1.0)
    q1 = bump(g, g.center, 0.12, 4.0)
    q2 = q1 + bump(g, g.center + 0.05, 0.1, -3.0)
    src = PointSource(1.5, (0.45, 0.5, 0.55))
    return g, q1, q2, assemble_dtn(q1, g), assemble_dtn(q2, g, src, 1 / 8)


def test_energy_form_symmetric(maps):
    _, _, _, d1, d2 = maps
    assert d1.symmetry_defect() < 1e-13
    assert d2.symmetry_defect() < 1e-13


def test_apply_matches_source_solve(maps, rng):
    g, _, q2, _, d2 = maps
    lay = boundary_layout(g)
    f = rng.standard_normal(lay.size)
    src = PointSource(1.5, (0.45, 0.5, 0.55))
    direct = solve_with_source(q2, src, f, g, 1 / 8).neumann_trace()
    got = d2.apply(f)
    assert np.abs(got - direct).max() <= 1e-10 * np.abs(direct).max()


def test_alessandrini_identity_discrete(maps, rng):
    g, q1, q2, d1, d2 = maps
    lay = boundary_layout(g)
    v1 = DirichletSolver(g, q1).solve(rng.standard_normal(lay.size))
    v2 = DirichletSolver(g, q2).solve(rng.standard_normal(lay.size))
    b, v = alessandrini_pairing(d1, d2.linear_part(), v1, v2, q1, q2)
    assert abs(b - v) <= 1e-10 * max(abs(b), 1.0)


def test_coefficient_round_trip(maps):
    g, _, _, d1, _ = maps
    back = linear_from_coefficients(g, d1.linear_coefficients())
    assert np.abs(back - d1.linear).max() <= 1e-10 * np.abs(d1.linear).max()


def test_star_norm_conventions(maps):
    g, _, _, d1, d2 = maps
    diff = d2 - d1
    s_sum = star_norm(diff, "sum")
    s_sup = star_norm(diff, "sup")
    assert s_sum == pytest.approx(offset_norm(diff) + linear_norm(diff))
    assert max(offset_norm(diff), linear_norm(diff)) <= s_sup * (1 + 1e-12)
    assert s_sup <= s_sum * (1 + 1e-12)
    assert dtn_operator_norm(d2, d1) == pytest.approx(s_sum)
    with pytest.raises(ValueError):
        star_norm(diff, "max")


def test_offset_norm_matches_boundary_norm(maps):
    g, _, _, _, d2 = maps
    assert offset_norm(d2) == pytest.approx(boundary_fractional_norm(d2.offset, g, -0.5), rel=1e-10)


def test_shape_checks(grid8):
    nb = boundary_layout(grid8).size
    with pytest.raises(DimensionError):
        DtnMap(grid8, np.zeros(nb + 1), None)
    with pytest.raises(DimensionError):
        DtnMap(grid8, np.zeros(nb), np.zeros((nb, nb - 1)))
    with pytest.raises(DimensionError):
        DtnMap(grid8, np.zeros(nb), None).apply(np.zeros(nb))


def test_dtnm_round_trip_and_errors(maps, tmp_path):
    g, _, _, _, d2 = maps
    p = tmp_path / "m.dtnm"
    write_dtn(p, d2, {"seed": 1})
    back = read_dtn(p, g)
    assert np.array_equal(back.offset, d2.offset)
    assert np.array_equal(back.linear, d2.linear)
    assert back.meta == {"seed": 1}
    with pytest.raises(FormatError):
        read_dtn(p, Grid(3, 12, 1.0))
    blob = p.read_bytes()
    (tmp_path / "bad").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(FormatError):
        read_dtn(tmp_path / "bad", g)
    (tmp_path / "short").write_bytes(blob[:1000])
    with pytest.raises(FormatError):
        read_dtn(tmp_path / "short", g)
    with pytest.raises(FormatError):
        write_dtn(tmp_path / "x", d2.offset_only())
