import math

import numpy as np
import pytest
from conftest import ROLL, stokes_grid

from halfns.data import DataSpec, make_initial_data, manufactured_flow
from halfns.green import (PressureParts, TestField, caloric_pressure, caloric_solution,
                          check_solenoidal, default_testset, momentum_residual, no_slip_residual,
                          solenoidal_residual, stokes_solve, time_derivative,
                          weak_divergence_residual, weak_form_residual)
from halfns.grid import Field, SpaceTimeField, divergence, lp_norm


@pytest.fixture(scope="module")
def caloric():
    g = stokes_grid()
    h = make_initial_data(ROLL, g)
    u, parts = stokes_solve(h, None)
    return g, h, u, parts


@pytest.fixture(scope="module")
def manufactured():
    g = stokes_grid()
    w, f = manufactured_flow(g, ROLL)
    u, parts = stokes_solve(None, f, kind="vector")
    return g, w, f, u, parts


def test_caloric_no_slip_and_solenoidal(caloric):
    _, _, u, _ = caloric
    assert no_slip_residual(u) < 1e-4
    assert solenoidal_residual(u) < 1e-4


def test_caloric_momentum_with_pressure(caloric):
    _, _, u, parts = caloric
    assert momentum_residual(u, parts) < 1e-3


def test_caloric_solution_matches_stokes_solve(caloric):
    g, h, u, _ = caloric
    assert np.array_equal(caloric_solution(h).values, u.values)
    pots = caloric_pressure(h)
    assert set(pots) == {"pi1", "pi00", "pi2"}


def recovery_error(J):
    g = stokes_grid(time_nodes=J, T=0.5)
    h = make_initial_data(ROLL, g)
    u = caloric_solution(h)
    return float(lp_norm(g, u.values[0] - h.values, 2) / lp_norm(g, h.values, 2))


def test_initial_data_recovery_under_time_refinement():
    errs = [recovery_error(J) for J in (6, 12, 24)]
    for a, b in zip(errs, errs[1:]):
        assert b <= a / 2
        assert math.log2(a / b) >= 1.0


def test_manufactured_solution(manufactured):
    g, w, f, u, parts = manufactured
    diff = np.array([lp_norm(g, x, 2) ** 2 for x in u.values - w.values])
    ref = np.array([lp_norm(g, x, 2) ** 2 for x in w.values])
    assert math.sqrt(g.time_integrate(diff) / g.time_integrate(ref)) < 1e-3
    assert momentum_residual(u, parts, f) < 1e-3
    assert no_slip_residual(u) < 1e-4


def test_manufactured_pressure_parts_are_small(manufactured):
    g, w, f, u, parts = manufactured
    scale = np.max(np.abs(f.values))
    for part in [parts.p1, parts.P0] + list(parts.Pj):
        assert np.max(np.abs(part.values)) < 0.05 * scale


def test_tensor_and_vector_forcing_agree():
    g = stokes_grid(M=16, time_nodes=10)
    x, z = g.mesh()
    prof = np.cos(x) * z ** 2 * np.exp(-((z - 1.0) / 0.7) ** 2)
    F = np.zeros((2, 2) + g.shape)
    F[0, 1] = F[1, 0] = prof
    F[1, 1] = 0.5 * np.sin(x) * z ** 2 * np.exp(-(z - 1.5) ** 2)
    decay = np.exp(-g.t)
    Ft = SpaceTimeField(g, decay[:, None, None, None, None] * F[None], F.copy())
    fv = divergence(Field(g, F)).values
    fvt = SpaceTimeField(g, decay[:, None, None, None] * fv[None], fv.copy())
    u1, _ = stokes_solve(None, Ft, kind="tensor")
    u2, _ = stokes_solve(None, fvt, kind="vector")
    assert np.allclose(u1.values, u2.values, atol=1e-12)


def test_zero_problem_gives_zero_solution():
    g = stokes_grid(M=8, time_nodes=6)
    u, parts = stokes_solve(None, None, grid=g)
    assert not np.any(u.values)
    assert not np.any(parts.p1.values)
    h = make_initial_data(DataSpec(family="zero"), g)
    assert not np.any(caloric_solution(h).values)


def test_pressure_parts_add_componentwise():
    g = stokes_grid(M=8, time_nodes=6)
    one = SpaceTimeField(g, np.ones((len(g.t),) + g.shape))
    a = PressureParts(one, [one], one)
    b = a + a
    assert np.all(b.p1.values == 2) and np.all(b.Pj[0].values == 2) and np.all(b.P0.values == 2)


def test_non_solenoidal_data_warns():
    g = stokes_grid(M=8, time_nodes=6)
    x, z = g.mesh()
    f = np.zeros((2,) + g.shape)
    f[0] = np.sin(x) * z ** 2 * np.exp(-z)
    with pytest.warns(UserWarning, match="divergence"):
        check_solenoidal(Field(g, f))


def test_time_derivative_is_exact_for_quartics():
    t = np.linspace(0, 1, 11) ** 2
    vals = 1 + t - 2 * t ** 2 + t ** 4
    assert np.allclose(time_derivative(vals, t), 1 - 4 * t + 4 * t ** 3, atol=1e-9)


def test_test_fields_are_divergence_free(caloric):
    g = caloric[0]
    for tf in default_testset(g):
        phi = Field(g, tf.spatial(g))
        assert divergence(phi).norm(2) < 1e-12 * phi.norm(2)
        c, dc = tf.chi(np.array([0.0, tf.t_cut]))
        assert c[0] == 1.0 and c[1] == 0.0 and dc[1] == 0.0


def test_caloric_solution_satisfies_weak_form(caloric):
    _, h, u, _ = caloric
    res = weak_form_residual(u, h, None)
    assert res["residual"] < 1e-2
    assert len(res["tests"]) == 3


def test_weak_form_detects_wrong_data(caloric):
    _, h, u, _ = caloric
    assert weak_form_residual(u, h * 1.5, None)["residual"] > 0.1


class DivergentTest(TestField):
    def spatial(self, grid):
        x, z = grid.mesh()
        out = np.zeros((grid.n,) + grid.shape)
        out[0] = np.sin(x) * z ** 2 * np.exp(-z)
        return out


def test_weak_form_rejects_non_solenoidal_test_field(caloric):
    g, h, u, _ = caloric
    with pytest.raises(ValueError, match="test field divergence"):
        weak_form_residual(u, h, None, testset=[DivergentTest((0.0,), 1.0, 1.0, g.T)])


def test_weak_divergence_residual(caloric):
    g, _, u, _ = caloric
    x, z = g.mesh()
    psi = np.cos(x) * np.exp(-((z - 1.0) / 0.8) ** 2)
    assert weak_divergence_residual(u, [psi]) < 1e-4
