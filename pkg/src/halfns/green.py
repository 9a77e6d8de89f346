"""Solution operators of the half-space Stokes system.

Per tangential mode (kappa = |xi'|) the Green tensor acting on data ``h``
splits into an odd-image heat evolution plus a harmonic correction driven by

    W_j(z, t) = exp(-kappa^2 t) int_0^oo g_t(z + y) h_j^(y) dy     (reflected heat flow)
    S(z, t)   = sum_{j<n} i xi_j W_j(z, t)

and ``v_i^ = exp(-kappa^2 t) H_odd(t) h_i^ + 4 K_i * S`` where
``K_n(s) = exp(-kappa s) / 2``, ``K_i(s) = -i xi_i exp(-kappa s) / (2 kappa)``
for tangential i and ``*`` is the Volterra convolution over (0, x_n).
The pressure potentials only need the wall values ``w_j = W_j(0, t)``.

Duhamel versions replace ``h`` with the projected forcing and accumulate the
same quantities over the graded time quadrature.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .grid import (Field, HalfSpaceGrid, SpaceTimeField, d_normal, divergence, fd_matrix,
                   fornberg_weights, from_modes, lp_norm, partial, to_modes)
from .helmholtz import check_boundary_zero, project_hat
from .kernels import duhamel_modes, time_interpolant, wall_operators

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PressureParts:
    """p = D_t p1 + sum_j D_j P_j + P0; the raw potentials are kept for inspection."""

    p1: SpaceTimeField
    Pj: list
    P0: SpaceTimeField
    extras: dict = field(default_factory=dict)

    def __add__(self, other: "PressureParts") -> "PressureParts":
        return PressureParts(self.p1 + other.p1, [a + b for a, b in zip(self.Pj, other.Pj)],
                             self.P0 + other.P0)


# ---------------------------------------------------------------------------
# mode-space helpers


def _correction(grid: HalfSpaceGrid, S_hat: np.ndarray) -> np.ndarray:
    """4 K_i * S for all components; S_hat has shape (..., M..., Nz)."""
    ops = wall_operators(grid)
    n = grid.n
    kap = grid.kappa
    keys, inv = np.unique(np.round(kap.ravel(), 12), return_inverse=True)
    lead = S_hat.shape[: S_hat.ndim - n]
    flat = S_hat.reshape(lead + (-1, grid.Nz))
    C = np.zeros_like(flat)
    for u, k in enumerate(keys):
        if k == 0:
            continue
        sel = inv == u
        C[..., sel, :] = flat[..., sel, :] @ ops.volterra_matrix(k).T
    C = C.reshape(S_hat.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_k = np.where(kap > 0, 1.0 / np.where(kap > 0, kap, 1.0), 0.0)[..., None]
    out = [-2j * grid.xi[i][..., None] * inv_k * C for i in range(n - 1)]
    out.append(2.0 * C)
    return np.stack(out, axis=-n - 1)


def _velocity_from(grid: HalfSpaceGrid, free: np.ndarray, refl: np.ndarray) -> np.ndarray:
    """Combine free/reflected heat flows (..., n, M..., Nz) into the Green-tensor velocity."""
    n = grid.n
    ax = refl.ndim - n - 1
    S = sum(1j * grid.xi[j][..., None] * np.take(refl, j, axis=ax) for j in range(n - 1))
    return (free - refl) + _correction(grid, S)


def _pressure_potentials(grid: HalfSpaceGrid, wall: np.ndarray, pi2_sign: float = -1.0) -> dict:
    """Mode-space potentials from wall values w (J, n, M...).

    Returns pi1 (J, n-1, M.., Nz), pi00 (J, M.., Nz), pi2 (J, n-1, M.., Nz).
    ``pi2_sign`` multiplies 4 D_k N(w_n) in pi_2k; only -1 closes the momentum balance.
    """
    n = grid.n
    kap = grid.kappa
    decay = np.exp(-kap[..., None] * grid.z)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_k = np.where(kap > 0, 1.0 / np.where(kap > 0, kap, 1.0), 0.0)
    pi1 = 2.0 * wall[:, : n - 1, ..., None] * decay
    Nwn = -0.5 * (inv_k * wall[:, n - 1])[..., None] * decay      # N(w_n)
    pi00 = 4.0 * Nwn
    pi2 = np.stack([pi2_sign * 4.0 * 1j * grid.xi[k][..., None] * Nwn for k in range(n - 1)], axis=1)
    return {"pi1": pi1, "pi00": pi00, "pi2": pi2}


def _st(grid: HalfSpaceGrid, hat: np.ndarray, initial=None) -> SpaceTimeField:
    return SpaceTimeField(grid, from_modes(grid, hat), initial)


# ---------------------------------------------------------------------------
# caloric part


def _caloric_modes(grid: HalfSpaceGrid, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ops = wall_operators(grid)
    hh = to_modes(grid, h)
    J = len(grid.t)
    v = np.empty((J,) + hh.shape, dtype=complex)
    wall = np.empty((J, grid.n) + tuple(grid.M), dtype=complex)
    k2 = grid.kappa[..., None] ** 2
    for j, t in enumerate(grid.t):
        damp = np.exp(-k2 * t)
        free = (hh @ ops.heat_matrix(t, grid.z).T) * damp
        refl = (hh @ ops.heat_matrix(t, -grid.z).T) * damp
        v[j] = _velocity_from(grid, free, refl)
        wall[j] = refl[..., 0]
    return v, wall


def check_solenoidal(h: Field, tol: float = 1e-4) -> float:
    scale = h.norm(2)
    if scale == 0:
        return 0.0
    r = divergence(h).norm(2) / scale
    if r > tol:
        warnings.warn(f"initial data divergence {r:.2e} exceeds {tol:g} (relative)")
    return r


def caloric_solution(h: Field, grid: HalfSpaceGrid | None = None) -> SpaceTimeField:
    """Velocity v_i = int G_ij(x, y, t) h_j(y) dy at every time node."""
    grid = grid or h.grid
    check_solenoidal(h)
    v, _ = _caloric_modes(grid, h.values)
    return _st(grid, v, h.values)


def caloric_pressure(h: Field, grid: HalfSpaceGrid | None = None, pi2_sign: float = -1.0) -> dict:
    """Potentials pi_1j, pi_00, pi_2k of the caloric pressure (SpaceTimeFields)."""
    grid = grid or h.grid
    _, wall = _caloric_modes(grid, h.values)
    pots = _pressure_potentials(grid, wall, pi2_sign)
    return {k: _st(grid, v) for k, v in pots.items()}


# ---------------------------------------------------------------------------
# forced part


@dataclass(frozen=True, eq=False)
class DuhamelResult:
    V: SpaceTimeField
    Pf: SpaceTimeField
    potentials: dict
    P0: SpaceTimeField


def _forcing_series(grid: HalfSpaceGrid, forcing: SpaceTimeField, is_tensor: bool,
                    tol: float) -> tuple[np.ndarray, np.ndarray]:
    """(times incl. 0, f samples incl. t = 0)."""
    times, vals = forcing.with_initial()
    if is_tensor:
        for k in range(len(times)):
            if np.any(vals[k]):
                check_boundary_zero(Field(grid, vals[k]), tol)
        f = np.stack([divergence(Field(grid, vals[k])).values for k in range(len(times))])
    else:
        f = vals
    return times, f


def duhamel_solve(forcing: SpaceTimeField, kind: str = "tensor", tol: float = 1e-6,
                  rule: dict | None = None, pi2_sign: float = -1.0) -> DuhamelResult:
    """Forced Stokes flow with zero data.

    ``kind='tensor'``: forcing holds F with f = div F (f_i = D_k F_ki).
    ``kind='vector'``: forcing holds f itself.
    """
    grid = forcing.grid
    n = grid.n
    times, f = _forcing_series(grid, forcing, kind == "tensor", tol)
    fh = to_modes(grid, f)
    Pf = np.empty_like(fh)
    Qf = np.empty(fh.shape[:1] + fh.shape[2:], dtype=complex)
    for k in range(len(times)):
        Pf[k], q1, q2, _ = project_hat(grid, fh[k])
        Qf[k] = q1 + q2
    free, refl = duhamel_modes(grid, times, Pf, [grid.z, -grid.z], rule=rule)
    V = _velocity_from(grid, free, refl)
    pots = _pressure_potentials(grid, refl[..., 0], pi2_sign)
    zeros = np.zeros((n,) + grid.shape)
    return DuhamelResult(
        V=_st(grid, V, zeros),
        Pf=SpaceTimeField(grid, from_modes(grid, Pf[1:]), from_modes(grid, Pf[0])),
        potentials={k: _st(grid, v) for k, v in pots.items()},
        P0=SpaceTimeField(grid, from_modes(grid, Qf[1:]), from_modes(grid, Qf[0])),
    )


def duhamel_solution(forcing: SpaceTimeField, kind: str = "tensor", **kw) -> SpaceTimeField:
    return duhamel_solve(forcing, kind, **kw).V


def duhamel_pressure(forcing: SpaceTimeField, kind: str = "tensor", **kw) -> dict:
    r = duhamel_solve(forcing, kind, **kw)
    out = dict(r.potentials)
    out["P0"] = r.P0
    return out


# ---------------------------------------------------------------------------
# assembly


def _parts_from(grid: HalfSpaceGrid, pots: dict, P0: SpaceTimeField | None) -> PressureParts:
    n = grid.n
    p1 = pots["pi00"]
    Pj = [SpaceTimeField(grid, pots["pi1"].values[:, j] + pots["pi2"].values[:, j]) for j in range(n - 1)]
    if P0 is None:
        P0 = SpaceTimeField(grid, np.zeros_like(p1.values))
    return PressureParts(p1, Pj, P0, extras=pots)


def stokes_solve(h: Field | None, forcing: SpaceTimeField | None, grid: HalfSpaceGrid | None = None,
                 kind: str = "tensor", pi2_sign: float = -1.0,
                 rule: dict | None = None) -> tuple[SpaceTimeField, PressureParts]:
    """u = v + V with the pressure split p = D_t p1 + sum_j D_j P_j + P0."""
    grid = grid or (h.grid if h is not None else forcing.grid)
    n = grid.n
    u = None
    parts = None
    if h is not None:
        check_solenoidal(h)
        v, wall = _caloric_modes(grid, h.values)
        u = _st(grid, v, h.values)
        parts = _parts_from(grid, {k: _st(grid, x) for k, x in
                                   _pressure_potentials(grid, wall, pi2_sign).items()}, None)
    if forcing is not None:
        r = duhamel_solve(forcing, kind, rule=rule, pi2_sign=pi2_sign)
        dparts = _parts_from(grid, r.potentials, r.P0)
        u = r.V if u is None else u + r.V
        parts = dparts if parts is None else parts + dparts
    if u is None:
        zero = np.zeros((len(grid.t), n) + grid.shape)
        u = SpaceTimeField(grid, zero, zero[0])
        zs = SpaceTimeField(grid, np.zeros((len(grid.t),) + grid.shape))
        parts = PressureParts(zs, [zs] * (n - 1), zs)
    return u, parts


def time_derivative(values: np.ndarray, t: np.ndarray, width: int = 5) -> np.ndarray:
    """d/dt along axis 0 on the (graded) nodes t; centred stencils, one-sided at the ends."""
    D = fd_matrix(t, 1, width)
    return np.tensordot(D, values, axes=([1], [0]))


def assemble_pressure_gradient(parts: PressureParts, width: int = 5) -> np.ndarray:
    """grad p at every time node; D_t p1 by finite differences in time."""
    g = parts.p1.grid
    n = g.n
    p1t = time_derivative(parts.p1.values, g.t, width)
    p = p1t + parts.P0.values
    for j in range(n - 1):
        p = p + partial(g, parts.Pj[j].values, j)
    return np.stack([partial(g, p, k) for k in range(n)], axis=1)


def _laplacian_series(g: HalfSpaceGrid, vals: np.ndarray) -> np.ndarray:
    hat = to_modes(g, vals)
    tan = from_modes(g, -(g.kappa[..., None] ** 2) * hat)
    return tan + d_normal(g, vals, 2)


def momentum_residual(u: SpaceTimeField, parts: PressureParts, f: SpaceTimeField | None = None,
                      skip: int = 2, width: int = 5) -> float:
    """||u_t - Delta u + grad p - f|| / max term norm over space-time (L^2 grid norm).

    The first ``skip`` time nodes are excluded (one-sided differences there).
    ``width`` is the time stencil size (3 gives the second-order scheme).
    """
    g = u.grid
    ut = time_derivative(u.values, g.t, width)
    lap = _laplacian_series(g, u.values)
    gp = assemble_pressure_gradient(parts, width)
    ff = np.zeros_like(u.values) if f is None else f.values
    res = ut - lap + gp - ff
    sl = slice(skip, None)

    def nrm(a):
        a = a[sl]
        sq = np.array([lp_norm(g, a[k], 2) ** 2 for k in range(len(a))])
        return float(np.sqrt(np.sum(sq * np.gradient(g.t[sl]))))

    scale = max(nrm(ut), nrm(lap), nrm(gp), nrm(ff))
    if scale == 0:
        return 0.0
    return nrm(res) / scale


def no_slip_residual(u: SpaceTimeField) -> float:
    """max |u| at the wall over all nodes, relative to the max of |u| (wall value by extrapolation)."""
    g = u.grid
    w = fornberg_weights(0.0, g.z[1:4], 0)[0]
    tr = u.values[..., 1:4] @ w
    scale = float(np.max(np.abs(u.values))) or 1.0
    return float(np.max(np.abs(tr))) / scale


def solenoidal_residual(u: SpaceTimeField) -> float:
    g = u.grid
    worst = 0.0
    for k in range(len(g.t)):
        uk = Field(g, u.values[k])
        s = uk.norm(2)
        if s > 0:
            worst = max(worst, divergence(uk).norm(2) / s)
    return worst


# ---------------------------------------------------------------------------
# weak form


@dataclass(frozen=True)
class TestField:
    """Phi = (D_n psi e_1 - D_1 psi e_n), psi = theta(x') x_n^2 exp(-(x_n/depth)^2) chi(t).

    The Gaussian wall profile is negligible at x_max for the default depths and
    stays resolvable on graded wall nodes, unlike a compactly supported bump.
    """

    __test__ = False      # not a pytest class

    center: tuple
    width: float
    depth: float          # wall-normal Gaussian width
    t_cut: float
    wave: tuple = ()

    def potential(self, grid: HalfSpaceGrid) -> np.ndarray:
        mesh = grid.mesh()
        th = np.ones(1)
        for j in range(grid.n - 1):
            x = mesh[j]
            d = (x - self.center[j]) / self.width
            th = th * np.exp(-d ** 2)
            if self.wave:
                th = th * np.cos(self.wave[j] * x)
        z = mesh[-1]
        return th * z ** 2 * np.exp(-(z / self.depth) ** 2)

    def chi(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = np.clip(np.asarray(t) / self.t_cut, 0, 1)
        c = (1 - s ** 2) ** 3
        dc = -6 * s * (1 - s ** 2) ** 2 / self.t_cut
        return c, dc

    def spatial(self, grid: HalfSpaceGrid) -> np.ndarray:
        psi = self.potential(grid)
        psi = np.broadcast_to(psi, grid.shape)
        phi = np.zeros((grid.n,) + grid.shape)
        phi[0] = partial(grid, psi, grid.n - 1)
        phi[grid.n - 1] = -partial(grid, psi, 0)
        return phi


def default_testset(grid: HalfSpaceGrid, t_cut: float | None = None) -> list[TestField]:
    t_cut = t_cut or grid.T
    L = grid.L[0]
    w = L / 3
    out = []
    for c, depth, wave in [(0.0, 1.0, 0.0), (L / 4, 1.5, 1.0), (-L / 4, 0.8, 2.0)]:
        center = tuple([c] + [0.0] * (grid.n - 2))
        out.append(TestField(center, w, depth, t_cut, tuple([wave] * (grid.n - 1))))
    return out


def _time_integral(g: HalfSpaceGrid, series: np.ndarray, initial) -> float:
    from scipy.integrate import simpson
    tt = np.concatenate([[0.0], g.t])
    vals = np.concatenate([[initial], series])
    return float(simpson(vals, x=tt))


def weak_form_residual(u: SpaceTimeField, h: Field | None, flux: SpaceTimeField | str | None,
                       testset: list[TestField] | None = None, div_tol: float = 1e-10) -> dict:
    """Variational identity -<<u, Delta Phi>> = <<u, Phi_t>> - <<F, grad Phi>> + <h, Phi(0)>.

    ``flux`` is the tensor F, the string 'nonlinear' for F = -u (x) u, or None.
    Returns the worst relative mismatch and the per-test data.
    """
    g = u.grid
    n = g.n
    testset = testset or default_testset(g)
    tt, uall = u.with_initial()
    if h is not None:
        uall = uall.copy()
        uall[0] = h.values
    if isinstance(flux, str):
        Fall = -np.einsum("tk...,ti...->tki...", uall, uall)
    elif flux is None:
        Fall = None
    else:
        _, Fall = flux.with_initial()
    rows = []
    for tf in testset:
        phi = tf.spatial(g)
        d = divergence(Field(g, phi)).norm(2) / (Field(g, phi).norm(2) or 1.0)
        if d > div_tol:
            raise ValueError(f"test field divergence {d:.2e} exceeds {div_tol:g}")
        lap = np.stack([_laplacian_series(g, phi[i]) for i in range(n)])
        grad = np.stack([np.stack([partial(g, phi[i], k) for i in range(n)]) for k in range(n)])
        chi, dchi = tf.chi(tt)
        s_lap = np.array([g.integrate(np.sum(uall[k] * lap, axis=0)) for k in range(len(tt))])
        s_phi = np.array([g.integrate(np.sum(uall[k] * phi, axis=0)) for k in range(len(tt))])
        lhs_t = -s_lap * chi
        rhs_t = s_phi * dchi
        if Fall is not None:
            s_F = np.array([g.integrate(np.sum(Fall[k] * grad, axis=(0, 1))) for k in range(len(tt))])
            rhs_t = rhs_t - s_F * chi
        else:
            s_F = np.zeros_like(s_lap)
        lhs = _time_integral(g, lhs_t[1:], lhs_t[0])
        rhs_main = _time_integral(g, rhs_t[1:], rhs_t[0])
        init = float(g.integrate(np.sum(uall[0] * phi, axis=0))) * chi[0] if h is not None else 0.0
        rhs = rhs_main + init
        scale = max(abs(lhs), abs(_time_integral(g, (s_phi * dchi)[1:], (s_phi * dchi)[0])),
                    abs(_time_integral(g, (s_F * chi)[1:], (s_F * chi)[0])), abs(init))
        rows.append({"lhs": lhs, "rhs": rhs, "scale": scale,
                     "rel": abs(lhs - rhs) / scale if scale > 0 else 0.0})
    worst = max(r["rel"] for r in rows)
    return {"residual": worst, "tests": rows}


def weak_divergence_residual(u: SpaceTimeField, psis: list[np.ndarray]) -> float:
    """max over t, Psi of |int u . grad Psi| / (||u|| ||grad Psi||)."""
    g = u.grid
    worst = 0.0
    for psi in psis:
        gp = np.stack([partial(g, np.broadcast_to(psi, g.shape), k) for k in range(g.n)])
        gn = lp_norm(g, gp, 2)
        for k in range(len(g.t)):
            un = lp_norm(g, u.values[k], 2)
            if un == 0:
                continue
            worst = max(worst, abs(g.integrate(np.sum(u.values[k] * gp, axis=0))) / (un * gn))
    return float(worst)
