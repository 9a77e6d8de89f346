import io
import warnings

import numpy as np
import pytest

from halfns.grid import (Field, SpaceTimeField, divergence, extend, fd_matrix, fornberg_weights,
                         gradient, graded_nodes, laplacian, make_grid, partial, read_field,
                         trace_boundary, write_field, zoned_nodes)


def test_fornberg_exact_on_polynomials():
    x = np.array([0.0, 0.3, 0.7, 1.2, 2.0])
    w = fornberg_weights(0.5, x, 2)
    for k in range(5):
        f = x ** k
        assert w[0] @ f == pytest.approx(0.5 ** k, abs=1e-13)
        assert w[1] @ f == pytest.approx(k * 0.5 ** (k - 1) if k else 0.0, abs=1e-12)
        assert w[2] @ f == pytest.approx(k * (k - 1) * 0.5 ** (k - 2) if k > 1 else 0.0, abs=1e-11)


@pytest.mark.parametrize("order,width", [(1, 5), (2, 6)])
def test_fd_matrix_convergence(order, width):
    errs = []
    for N, r in ((40, 1.03), (80, 1.03 ** 0.5)):
        z = graded_nodes(4.0, N, r)
        D = fd_matrix(z, order, width)
        f = np.sin(z)
        exact = np.cos(z) if order == 1 else -np.sin(z)
        errs.append(np.max(np.abs(D @ f - exact)))
    assert errs[1] < errs[0] / 8


def test_graded_and_zoned_nodes():
    z = graded_nodes(8.0, 40, 1.05)
    assert z[0] == 0 and z[-1] == pytest.approx(8.0) and np.all(np.diff(np.diff(z)) > 0)
    zz = zoned_nodes(12.0, 0.01, 1.1, 0.08, 4.0, 1.15)
    h = np.diff(zz)
    assert zz[0] == 0 and zz[-1] == pytest.approx(12.0)
    assert h[0] == pytest.approx(0.01)
    core = (zz[:-1] > 1.0) & (zz[1:] < 4.0)
    assert np.allclose(h[core], 0.08)
    with pytest.raises(ValueError):
        zoned_nodes(3.0, 0.01, 1.1, 0.08, 4.0, 1.15)


def test_wall_quadrature_and_time_weights():
    g = make_grid(n=2, M=8, wall_nodes=64, x_max=10.0, time_nodes=16, T=2.0)
    assert g.zw @ np.exp(-g.z) == pytest.approx(1 - np.exp(-10.0), rel=1e-5)
    assert np.sum(g.tw) == pytest.approx(2.0, rel=1e-13)
    assert g.tw @ g.t == pytest.approx(2.0, rel=1e-10)
    assert g.tw @ np.sqrt(g.t) == pytest.approx(2 / 3 * 2 ** 1.5, rel=1e-4)


def test_make_grid_validation():
    with pytest.raises(ValueError):
        make_grid(n=4)
    with pytest.raises(ValueError):
        make_grid(M=7)


def test_spectral_and_normal_derivatives():
    g = make_grid(n=2, M=32, wall_nodes=80, x_max=8.0, wall_ratio=1.03)
    x, z = g.mesh()
    f = np.sin(2 * x) * z ** 2 * np.exp(-z)
    assert np.allclose(partial(g, f, 0), 2 * np.cos(2 * x) * z ** 2 * np.exp(-z), atol=1e-12)
    dz = np.sin(2 * x) * (2 * z - z ** 2) * np.exp(-z)
    assert np.max(np.abs(partial(g, f, 1) - dz)) < 1e-5
    lap = laplacian(Field(g, f)).values
    exact = np.sin(2 * x) * np.exp(-z) * (-4 * z ** 2 + 2 - 4 * z + z ** 2)
    assert np.max(np.abs(lap - exact)) < 1e-4


def test_divergence_of_curl_vanishes():
    g = make_grid(n=3, M=16, wall_nodes=48, x_max=8.0)
    x, y, z = g.mesh()
    psi = np.cos(x) * np.sin(y) * z ** 2 * np.exp(-z)
    psi = np.broadcast_to(psi, g.shape)
    u = np.stack([partial(g, psi, 2), np.zeros(g.shape), -partial(g, psi, 0)])
    assert divergence(Field(g, u)).norm() / Field(g, u).norm() < 1e-12
    assert gradient(Field(g, np.array(psi))).values.shape == (3,) + g.shape


def test_tensor_divergence_convention():
    g = make_grid(n=2, M=16, wall_nodes=48)
    x, z = g.mesh()
    F = np.zeros((2, 2) + g.shape)
    F[0, 1] = np.sin(x) * z ** 2 * np.exp(-z)     # f_1 = D_0 F_01? no: f_i = D_k F_ki
    d = divergence(Field(g, F)).values
    assert np.allclose(d[1], np.cos(x) * z ** 2 * np.exp(-z), atol=1e-12)
    assert np.allclose(d[0], 0.0)


def test_trace_extrapolation_and_warning():
    g = make_grid(n=2, M=8, wall_nodes=64, x_max=8.0)
    x, z = g.mesh()
    f = Field(g, np.cos(x) * (1 + z) * np.exp(-z))
    assert np.allclose(trace_boundary(f), np.cos(x[:, 0]), atol=1e-4)
    rough = Field(g, np.cos(x) * np.abs(np.sin(40 * z)))
    with pytest.warns(UserWarning):
        trace_boundary(rough, tol=1e-8)


@pytest.mark.parametrize("mode", ["zero", "odd", "even", "hestenes"])
def test_extension_modes(mode):
    g = make_grid(n=2, M=8, wall_nodes=64, x_max=8.0)
    x, z = g.mesh()
    f = Field(g, np.broadcast_to(np.cos(x) * np.exp(-(z - 1) ** 2), g.shape).copy())
    vals, box = extend(f, mode)
    assert vals.shape == box.shape
    y = -g.x_max + 2 * g.x_max * np.arange(box.shape[-1]) / box.shape[-1]
    neg = vals[g.M[0] // 2, y < 0]          # row x = 0
    pos = np.exp(-(np.abs(y[y < 0]) - 1) ** 2)
    if mode == "zero":
        assert np.all(neg == 0)
    elif mode == "odd":
        assert np.allclose(neg, -pos, atol=1e-4)
    elif mode == "even":
        assert np.allclose(neg, pos, atol=1e-4)


def test_hestenes_extension_is_c2():
    # second differences across y = 0 stay bounded under refinement for the
    # C^2 reflection, while the even extension has a kink there
    g = make_grid(n=2, M=8, wall_nodes=96, x_max=8.0, wall_ratio=1.02)
    x, z = g.mesh()
    f = Field(g, np.broadcast_to(np.exp(-(z - 0.5) ** 2) * (1 + 0 * x), g.shape).copy())

    def d2_near_wall(mode, nu):
        vals, box = extend(f, mode, nz_uniform=nu)
        h = box.spacing[-1]
        i0 = nu // 2
        return np.max(np.abs(np.diff(vals[0, i0 - 3:i0 + 4], 2))) / h ** 2

    hes = [d2_near_wall("hestenes", nu) for nu in (1024, 2048)]
    even = [d2_near_wall("even", nu) for nu in (1024, 2048)]
    assert hes[1] < 1.1 * hes[0] and hes[1] < 5
    assert even[1] > 1.8 * even[0]


def test_field_dump_roundtrip(tmp_path):
    g = make_grid(n=2, M=8, wall_nodes=16, time_nodes=4)
    rng = np.random.default_rng(0)
    f = Field(g, rng.normal(size=(2,) + g.shape))
    buf = io.BytesIO()
    write_field(buf, f)
    buf.seek(0)
    back = read_field(buf)
    assert np.array_equal(back.values, f.values)
    assert np.array_equal(back.grid.z, g.z)
    st = SpaceTimeField(g, rng.normal(size=(4, 2, 2) + g.shape))
    path = tmp_path / "u.field"
    write_field(str(path), st)
    back = read_field(str(path))
    assert isinstance(back, SpaceTimeField) and np.array_equal(back.values, st.values)
    assert path.read_bytes().startswith(b"HALFNS-FIELD dim=2 comp=2x2 ")


def test_with_initial_extrapolates_quadratics():
    g = make_grid(n=2, M=4, wall_nodes=8, time_nodes=8)
    vals = (1 + g.t + g.t ** 2)[:, None, None] * np.ones((8,) + g.shape)
    t, allv = SpaceTimeField(g, vals).with_initial()
    assert t[0] == 0 and np.allclose(allv[0], 1.0)


def test_scaled_grid():
    g = make_grid(n=2, M=8, wall_nodes=16, time_nodes=4, x_max=8.0, T=1.0)
    s = g.scaled(2.0)
    assert s.x_max == pytest.approx(4.0) and s.T == pytest.approx(0.25)
    assert s.L[0] == pytest.approx(np.pi / 2)
    assert np.allclose(s.kappa, 2 * g.kappa)
