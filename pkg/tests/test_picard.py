import math
import warnings

import numpy as np
import pytest
from conftest import ROLL, stokes_grid

from halfns.data import DataSpec, make_initial_data, with_amplitude
from halfns.exponents import exponent_family
from halfns.grid import Field, SpaceTimeField
from halfns.picard import (IterationTrace, WorkingNorms, _windows, bilinear_norm,
                           calibrate_amplitude, caloric_part, longest_decay_run, nonlinear_flux,
                           perturbation_field, picard_step, pressure_for_solution, run_iteration,
                           smallness_amplitude, smallness_monitor, uniqueness_experiment,
                           weak_limit_check)


@pytest.fixture(autouse=True)
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


@pytest.fixture(scope="module")
def cgrid():
    return stokes_grid(M=16, time_nodes=12)


@pytest.fixture(scope="module")
def coarse(cgrid, exps223):
    spec = smallness_amplitude(ROLL, cgrid, exps223)
    h = make_initial_data(spec, cgrid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        u, tr = run_iteration(h, exps223, cgrid)
    return spec, h, u, tr


@pytest.fixture(scope="module")
def tiny():
    g = stokes_grid(M=8, time_nodes=8)
    return g, make_initial_data(ROLL, g)


# ---------------------------------------------------------------------------
# building blocks


def test_nonlinear_flux_is_minus_outer_product(tiny):
    g, h = tiny
    u = caloric_part(h)
    F = nonlinear_flux(u)
    assert F.values.shape == (len(g.t), 2, 2) + g.shape
    assert np.allclose(F.values[:, 0, 1], -u.values[:, 0] * u.values[:, 1])
    assert np.allclose(F.initial, -np.einsum("k...,i...->ki...", h.values, h.values))


def test_step_nonlinearity_is_bilinear(tiny):
    g, h = tiny
    zero = SpaceTimeField(g, np.zeros((len(g.t), 2) + g.shape), np.zeros((2,) + g.shape))
    u = caloric_part(h)
    w = SpaceTimeField(g, np.roll(u.values, 3, axis=2), np.roll(u.initial, 3, axis=1))
    B = lambda a: picard_step(zero, a).values
    scale = np.max(np.abs(B(u)))
    assert np.max(np.abs(B(u * 2.0) - 4 * B(u))) < 1e-12 * 4 * scale
    polar = B(u + w) + B(u - w * 1.0) - 2 * B(u) - 2 * B(w)
    assert np.max(np.abs(polar)) < 1e-12 * scale * 10


def test_bilinear_norm(coarse, exps223):
    _, _, u, _ = coarse
    g = u.grid
    zero = SpaceTimeField(g, np.zeros_like(u.values), np.zeros_like(u.initial))
    assert bilinear_norm(u, zero, exps223)["value"] == 0.0
    r = bilinear_norm(u, u, exps223)
    assert r["value"] > 0 and math.isfinite(r["ratio"])
    assert r["ratio"] < 10


def test_longest_decay_run():
    assert longest_decay_run([0.5, 0.4, 1.2, 0.3, 0.2, 0.1, 0.9]) == (4, 0.9)
    assert longest_decay_run([]) == (0, 0.0)
    assert longest_decay_run([1.5, 2.0]) == (0, 0.0)


def test_windows_cover_time_axis(coarse, exps223):
    _, _, u, _ = coarse
    norms = WorkingNorms(exps223)
    J = len(u.grid.t)
    assert _windows(norms, u, float("inf")) == [(-1, J - 1)]
    wins = _windows(norms, u, 0.5 * norms.lebesgue(u))
    assert wins[0][0] == -1 and wins[-1][1] == J - 1
    assert all(a[1] == b[0] for a, b in zip(wins, wins[1:]))


# ---------------------------------------------------------------------------
# iteration


def test_zero_data_converges_immediately(tiny, exps223):
    g, _ = tiny
    h = make_initial_data(DataSpec(family="zero"), g)
    u, tr = run_iteration(h, exps223, g)
    assert tr.converged and tr.message == "zero data"
    assert not np.any(u.values)
    mon = smallness_monitor(tr)
    assert mon.passed and mon.constants == {}
    assert weak_limit_check(u, h)["residual"] == 0.0


def test_data_must_live_on_grid(tiny, cgrid, exps223):
    _, h = tiny
    with pytest.raises(ValueError, match="iteration grid"):
        run_iteration(h, exps223, cgrid)


def test_monitor_needs_two_iterates():
    tr = IterationTrace(data_norm=1.0, data_norm_besov=1.0)
    tr.u_leb.append(1.0)
    tr.u_bes.append(1.0)
    with pytest.raises(ValueError, match="two iterates"):
        smallness_monitor(tr)


def test_small_data_contracts(coarse):
    _, _, _, tr = coarse
    assert tr.converged and not tr.diverged
    assert longest_decay_run(tr.ratios)[0] >= 5
    mon = smallness_monitor(tr)
    assert mon.passed, mon.verdicts
    assert mon.constants["c6"] > mon.constants["c5"]
    assert max(tr.no_slip) < 1e-4 and max(tr.solenoidal) < 1e-4


def test_small_data_limit_is_weak_solution(coarse):
    _, h, u, _ = coarse
    assert weak_limit_check(u, h)["residual"] < 1e-2


@pytest.mark.parametrize("factor,reason", [(100, "no contraction"), (400, "grew")])
def test_large_data_is_flagged_divergent(coarse, cgrid, exps223, factor, reason):
    spec = coarse[0]
    h = make_initial_data(with_amplitude(spec, factor * spec.amplitude), cgrid)
    _, tr = run_iteration(h, exps223, cgrid, maxiter=6)
    assert tr.diverged and not tr.converged
    assert reason in tr.message
    assert not smallness_monitor(tr).verdicts["geometric decay"]


def test_smallness_amplitude_rejects_zero(cgrid, exps223):
    with pytest.raises(ValueError, match="zero data"):
        smallness_amplitude(DataSpec(family="zero"), cgrid, exps223)


def test_smallness_amplitude_scales_linearly(cgrid, exps223):
    a = smallness_amplitude(ROLL, cgrid, exps223).amplitude
    b = smallness_amplitude(with_amplitude(ROLL, 5.0), cgrid, exps223).amplitude
    assert b == pytest.approx(a, rel=1e-10)


def test_calibrate_amplitude_targets_ratio(coarse, cgrid, exps223):
    spec = with_amplitude(coarse[0], 10 * coarse[0].amplitude)
    cal = calibrate_amplitude(spec, cgrid, exps223, target_ratio=0.05, probe_steps=2)
    h = make_initial_data(cal, cgrid)
    _, tr = run_iteration(h, exps223, cgrid, maxiter=2, stop_tol=0.0)
    assert 0.025 < tr.ratios[-1] < 0.1


@pytest.mark.parametrize("lam", [0.5, 2.0])
def test_iterate_norms_are_scale_invariant(tiny, exps223, lam):
    g, h = tiny
    h = h * 0.1
    _, a = run_iteration(h, exps223, g, maxiter=2, stop_tol=0.0)
    gs = g.scaled(lam)
    _, b = run_iteration(Field(gs, lam * h.values), exps223, gs, maxiter=2, stop_tol=0.0)
    assert np.allclose(b.u_leb, a.u_leb, rtol=1e-8)
    assert np.allclose(b.U_leb, a.U_leb, rtol=1e-8)
    assert np.allclose(b.u_bes, a.u_bes, rtol=1e-6)


# ---------------------------------------------------------------------------
# uniqueness


def test_perturbation_field_properties(cgrid):
    p = perturbation_field(cgrid, seed=4)
    _, vals = p.with_initial()
    assert np.max(np.abs(vals)) == pytest.approx(1.0)
    assert np.max(np.abs(vals[..., 0])) < 1e-6
    assert np.all(np.diff(np.max(np.abs(p.values), axis=tuple(range(1, p.values.ndim)))) < 0)
    assert not np.array_equal(perturbation_field(cgrid, seed=5).values, p.values)


def test_zero_perturbation_reproduces_base(coarse, exps223):
    _, h, u, tr = coarse
    rep = uniqueness_experiment(h, exps223, epsilon=0.0, base=(u, tr))
    assert rep.perturbation_scale == 0.0
    assert rep.final_distance == 0.0 and rep.relative == 0.0


def test_perturbed_rerun_reaches_same_limit(coarse, exps223):
    _, h, u, tr = coarse
    rep = uniqueness_experiment(h, exps223, perturbation_seed=1, base=(u, tr))
    assert rep.perturbed_trace.converged
    assert rep.max_window_relative < 1e-2


def test_perturbation_violating_no_slip_is_rejected(coarse, cgrid, exps223):
    _, h, u, tr = coarse
    x, z = cgrid.mesh()
    W = np.zeros((2,) + cgrid.shape)
    W[0] = np.cos(x) * np.exp(-z)
    bad = SpaceTimeField(cgrid, np.broadcast_to(W, (len(cgrid.t),) + W.shape).copy(), W)
    with pytest.raises(ValueError, match="no-slip"):
        uniqueness_experiment(h, exps223, perturbation=bad, base=(u, tr))


def test_uniqueness_needs_converged_base(coarse, exps223):
    _, h, u, tr = coarse
    _, short = run_iteration(h, exps223, maxiter=1, stop_tol=0.0)
    with pytest.raises(ValueError, match="converged base"):
        uniqueness_experiment(h, exps223, base=(u, short))


# ---------------------------------------------------------------------------
# pressure


def test_pressure_needs_alpha_above_one_over_p(coarse):
    _, h, u, _ = coarse
    with pytest.raises(ValueError, match="alpha > 1/p"):
        pressure_for_solution(u, h, exponent_family(3, 3, 6))


def test_pressure_of_zero_solution(tiny, exps223):
    g, _ = tiny
    h = make_initial_data(DataSpec(family="zero"), g)
    u = caloric_part(h)
    rep = pressure_for_solution(u, h, exps223)
    assert rep.total == 0.0 and rep.ratio == 0.0


def test_pressure_parts_finite_and_bounded(coarse, exps223):
    _, h, u, _ = coarse
    rep = pressure_for_solution(u, h, exps223)
    vals = [rep.p1, rep.P0] + rep.Pj
    assert all(math.isfinite(v) and v > 0 for v in vals)
    assert 0 < rep.ratio < 10
