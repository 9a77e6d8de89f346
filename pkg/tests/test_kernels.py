import math

import numpy as np
import pytest
from scipy.integrate import quad

from halfns.grid import PeriodicBox, SpaceTimeField, graded_nodes, make_grid
from halfns.green import _laplacian_series, time_derivative
from halfns.kernels import (KernelParams, WallOperators, duhamel, duhamel_rule, heat_convolve,
                            heat_kernel, newtonian, poisson_extend, reflect, riesz_tangential,
                            sphere_area)


def gaussian_closed_form(r2, sigma, t, n):
    # Gamma_t * exp(-|x|^2 / (4 sigma)) = (sigma / (sigma + t))^{n/2} exp(-|x|^2 / (4 (sigma + t)))
    return (sigma / (sigma + t)) ** (n / 2) * np.exp(-r2 / (4 * (sigma + t)))


HEAT_CASES = [(0.1, 0.01), (0.1, 0.1), (0.2, 0.05), (0.3, 0.5), (0.5, 1.0)]


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("sigma,t", HEAT_CASES)
def test_heat_convolution_of_gaussian(n, sigma, t):
    N = 128
    box = PeriodicBox((24.0,) * n, (N,) * n)
    r2 = sum(c ** 2 for c in box.coords())
    f = np.exp(-r2 / (4 * sigma))
    got = heat_convolve(f, box, t)
    want = gaussian_closed_form(r2, sigma, t, n)
    assert np.max(np.abs(got - want)) / np.max(want) < 1e-6


@pytest.mark.parametrize("n", [1, 2, 3])
def test_heat_kernel_unit_mass(n):
    t = 0.3
    if n == 1:
        mass = quad(lambda x: heat_kernel(np.array([x]), t, 1), -20, 20)[0]
    else:
        box = PeriodicBox((20.0,) * n, (64,) * n)
        x = np.stack(np.broadcast_arrays(*box.coords()), axis=-1)
        mass = float(np.sum(heat_kernel(x, t, n)) * box.cell)
    assert mass == pytest.approx(1.0, rel=1e-10)


def test_heat_kernel_alternative_normalization():
    x = np.array([0.3, -0.2])
    std = heat_kernel(x, 0.4, KernelParams(2))
    alt = heat_kernel(x, 0.4, KernelParams(2, "two-pi"))
    assert alt / std == pytest.approx(2.0)
    with pytest.raises(ValueError):
        KernelParams(2, "other")
    assert heat_kernel(x, 0.0, 2) == 0.0


def test_sphere_area():
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)


@pytest.mark.parametrize("n", [2, 3])
def test_newtonian_closed_form_and_harmonic(n):
    x = np.array([0.6, 0.8, 0.0][:n])
    want = math.log(1.0) / (2 * math.pi) if n == 2 else -1.0 / (4 * math.pi)
    assert newtonian(x, n) == pytest.approx(want, abs=1e-15)
    # second differences vanish away from the origin
    h = 1e-3
    x0 = np.array([1.0, 0.5, 0.7][:n])
    lap = sum(newtonian(x0 + h * e, n) - 2 * newtonian(x0, n) + newtonian(x0 - h * e, n)
              for e in np.eye(n)) / h ** 2
    assert abs(lap) < 1e-5
    with pytest.raises(ValueError):
        newtonian(np.zeros(n), n)


def test_reflect_flips_normal_component():
    y = np.array([[1.0, 2.0], [3.0, -4.0]])
    assert np.array_equal(reflect(y), [[1.0, -2.0], [3.0, 4.0]])
    assert np.array_equal(y[:, 1], [2.0, -4.0])


@pytest.fixture(scope="module")
def g2():
    return make_grid(n=2, M=32, wall_nodes=64, x_max=8.0)


@pytest.mark.parametrize("k", [1, 3])
def test_poisson_extension_oracle(g2, k):
    x, z = g2.mesh()
    g = np.cos(k * x[:, 0])
    u = poisson_extend(g, g2)
    assert np.allclose(u.values, np.cos(k * x) * np.exp(-k * z), atol=1e-12)


def test_poisson_extension_keeps_mean(g2):
    u = poisson_extend(np.full(g2.M[0], 2.5), g2)
    assert np.allclose(u.values, 2.5)


@pytest.mark.parametrize("k", [1, 2, 5])
def test_riesz_of_cosine_is_sine(g2, k):
    x = g2.mesh()[0][:, 0]
    assert np.allclose(riesz_tangential(np.cos(k * x), g2, 0), np.sin(k * x), atol=1e-12)
    assert np.allclose(riesz_tangential(np.ones_like(x), g2, 0), 0.0)


def test_riesz_on_full_grid_and_bad_direction(g2):
    x, z = g2.mesh()
    f = np.cos(2 * x) * np.exp(-z) + 0 * z
    assert np.allclose(riesz_tangential(f, g2, 0), np.sin(2 * x) * np.exp(-z), atol=1e-12)
    with pytest.raises(ValueError):
        riesz_tangential(f, g2, 1)


@pytest.mark.parametrize("sigma", [1e-4, 0.01, 0.3])
def test_heat_matrix_matches_quadrature(sigma):
    z = graded_nodes(8.0, 256, 1.005)
    ops = WallOperators(z)
    f = lambda y: np.exp(-(y - 2.0) ** 2)
    targets = np.array([0.0, 0.5, 1.9, 3.3, -0.7])
    got = ops.heat_matrix(sigma, targets) @ f(z)
    g = lambda x, y: np.exp(-(x - y) ** 2 / (4 * sigma)) / math.sqrt(4 * math.pi * sigma)
    want = [quad(lambda y: g(x, y) * f(y), 0, z[-1], points=[x] if x > 0 else None,
                 epsabs=1e-13, limit=200)[0] for x in targets]
    assert np.allclose(got, want, atol=2e-6)


def test_interp_matrix_reproduces_cubics(g2):
    ops = WallOperators(g2.z)
    p = lambda y: 1 - y + 0.3 * y ** 2 - 0.02 * y ** 3
    pts = np.array([0.01, 0.77, 2.5, 7.9])
    assert np.allclose(ops.interp_matrix(pts) @ p(g2.z), p(pts), atol=1e-11)
    assert np.allclose(ops.interp_matrix(np.array([-1.0, 9.0])) @ p(g2.z), 0.0)


def test_volterra_matrix_oracle(g2):
    ops = WallOperators(g2.z)
    kap = 1.5
    E = ops.volterra_matrix(kap)
    # int_0^x exp(-kap (x - y)) dy = (1 - exp(-kap x)) / kap
    assert np.allclose(E @ np.ones_like(g2.z), (1 - np.exp(-kap * g2.z)) / kap, atol=1e-12)
    assert ops.volterra_matrix(kap) is E


@pytest.mark.parametrize("t", [0.01, 0.5, 1.0])
def test_duhamel_rule_integrates_sqrt_singularity(t):
    s, w = duhamel_rule(t)
    assert np.all((s > 0) & (s < t))
    assert np.sum(w) == pytest.approx(t, rel=1e-13)
    # int_0^t s^{-1/2} ds = 2 sqrt(t)
    assert np.dot(w, s ** -0.5) == pytest.approx(2 * math.sqrt(t), rel=1e-9)
    assert len(duhamel_rule(0.0)[0]) == 0


def test_duhamel_solves_forced_heat_equation():
    g = make_grid(n=2, M=16, wall_nodes=96, x_max=10.0, time_nodes=40, T=0.5)
    x, z = g.mesh()
    W = np.cos(x) * np.exp(-((z - 3.0) / 0.8) ** 2)
    a = np.exp(-g.t)
    F = SpaceTimeField(g, a[:, None, None] * W[None], W.copy())
    w = duhamel(F)
    res = time_derivative(w.values, g.t) - _laplacian_series(g, w.values) - F.values
    inner = (z[0] > 1.0) & (z[0] < 5.0)
    late = g.t > 0.1
    rel = np.max(np.abs(res[late][..., inner])) / np.max(np.abs(F.values))
    assert rel < 1e-3


def test_duhamel_image_variant_is_small_far_from_wall():
    g = make_grid(n=2, M=8, wall_nodes=64, x_max=10.0, time_nodes=12, T=0.2)
    x, z = g.mesh()
    W = np.cos(x) * np.exp(-((z - 4.0) / 0.5) ** 2)
    F = SpaceTimeField(g, np.broadcast_to(W, (len(g.t),) + g.shape).copy(), W.copy())
    inner = duhamel(F, "interior")
    image = duhamel(F, "image")
    assert np.max(np.abs(image.values)) < 1e-6 * np.max(np.abs(inner.values))
    with pytest.raises(ValueError):
        duhamel(F, "other")


def test_duhamel_warns_on_underresolved_forcing():
    g = make_grid(n=2, M=8, wall_nodes=32, x_max=8.0, time_nodes=5, T=1.0)
    x, z = g.mesh()
    W = np.cos(x) * np.exp(-(z - 2.0) ** 2)
    osc = np.cos(40 * g.t)
    F = SpaceTimeField(g, osc[:, None, None] * W[None], W.copy())
    with pytest.warns(UserWarning, match="under-resolves"):
        duhamel(F)
