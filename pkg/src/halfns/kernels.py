"""Elementary kernels and the per-mode heat machinery on the half-line.

Whole-space operators act on :class:`~halfns.grid.PeriodicBox` samples and are
spectral.  Half-space operators work per tangential Fourier mode: the
tangential part of the heat kernel is the multiplier ``exp(-|xi'|^2 t)`` and
the wall-normal part is the 1D Gaussian acting on a piecewise-cubic
interpolant of the wall-node samples.  The Gaussian moments over each cell
are integrated exactly, so ``heat_matrix`` is exact for the interpolant.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import erfc, gamma

from .grid import (Field, HalfSpaceGrid, PeriodicBox, SpaceTimeField, from_modes,
                   to_modes)

SQRT_PI = math.sqrt(math.pi)


@dataclass(frozen=True)
class KernelParams:
    n: int
    normalization: str = "standard"   # or "two-pi": (2 pi t)^{-n/2}, mass 2^{n/2}

    def __post_init__(self):
        if self.normalization not in ("standard", "two-pi"):
            raise ValueError(f"unknown normalization {self.normalization!r}")


def heat_kernel(x, t: float, params: KernelParams | int) -> np.ndarray:
    """Gaussian heat kernel; ``x`` has the spatial components on its last axis."""
    if isinstance(params, int):
        params = KernelParams(params)
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1) if x.ndim else x * x
    if t <= 0:
        return np.zeros_like(r2)
    base = 4 * np.pi * t if params.normalization == "standard" else 2 * np.pi * t
    return base ** (-params.n / 2) * np.exp(-r2 / (4 * t))


def heat_convolve(f: np.ndarray, box: PeriodicBox, t: float) -> np.ndarray:
    """Gamma_t * f on a periodic box (multiplier exp(-|xi|^2 t))."""
    ax = tuple(range(-box.n, 0))
    if t <= 0:
        return np.array(f, dtype=float, copy=True)
    return np.fft.ifftn(np.fft.fftn(f, axes=ax) * np.exp(-box.ksq() * t), axes=ax).real


def sphere_area(n: int) -> float:
    return 2 * np.pi ** (n / 2) / gamma(n / 2)


def newtonian(x, n: int) -> np.ndarray:
    """Fundamental solution of the Laplacian (Delta N = delta)."""
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1))
    if np.any(r == 0):
        raise ValueError("Newtonian kernel is singular at the origin")
    if n == 2:
        return np.log(r) / (2 * np.pi)
    return 1.0 / (sphere_area(n) * (2 - n) * r ** (n - 2))


def reflect(y) -> np.ndarray:
    y = np.array(y, dtype=float, copy=True)
    y[..., -1] *= -1
    return y


def poisson_extend(g: np.ndarray, grid: HalfSpaceGrid) -> Field:
    """Harmonic extension g^(xi') exp(-|xi'| x_n); the zero mode is constant in x_n."""
    gh = np.fft.fftn(g, axes=tuple(range(g.ndim - (grid.n - 1), g.ndim)))
    hat = gh[..., None] * np.exp(-grid.kappa[..., None] * grid.z)
    return Field(grid, from_modes(grid, hat))


def riesz_tangential(g: np.ndarray, grid: HalfSpaceGrid, j: int) -> np.ndarray:
    """R_j with multiplier -i xi_j / |xi'| (zero mode -> 0).

    ``g`` is either a boundary array (shape M) or full grid samples (shape M + (Nz,)).
    """
    if not 0 <= j < grid.n - 1:
        raise ValueError("Riesz direction must be tangential")
    kap = grid.kappa
    with np.errstate(divide="ignore", invalid="ignore"):
        mult = np.where(kap > 0, -1j * grid.xi[j] / np.where(kap > 0, kap, 1.0), 0.0)
    on_grid = g.shape[-1] == grid.Nz and g.ndim == grid.n
    axes = tuple(range(grid.n - 1)) if on_grid else tuple(range(g.ndim - (grid.n - 1), g.ndim))
    if on_grid:
        mult = mult[..., None]
    return np.fft.ifftn(np.fft.fftn(g, axes=axes) * mult, axes=axes).real


# ---------------------------------------------------------------------------
# half-line machinery

_GL12 = np.polynomial.legendre.leggauss(12)
_GL8 = np.polynomial.legendre.leggauss(8)


class WallOperators:
    """Per-mode 1D operators on the wall-normal nodes of a grid.

    Data between nodes is the local cubic through four neighbouring nodes,
    zero beyond ``x_max``.  Matrices map node samples to target samples.
    """

    def __init__(self, z: np.ndarray):
        z = np.asarray(z, dtype=float)
        self.z = z
        nn = len(z)
        S = nn - 1
        start = np.clip(np.arange(S) - 1, 0, nn - 4)
        self.idx = start[:, None] + np.arange(4)          # (S, 4)
        self.c = 0.5 * (z[:-1] + z[1:])
        self.d = 0.5 * (z[1:] - z[:-1])
        ell = (z[self.idx] - self.c[:, None]) / self.d[:, None]
        V = ell[:, :, None] ** np.arange(4)                # (S, 4 nodes, 4 powers)
        self.Vinv = np.linalg.inv(V)                       # powers -> nodes
        scatter = np.zeros((S * 4, nn))
        scatter[np.arange(S * 4), self.idx.ravel()] = 1.0
        self.scatter = scatter
        self._volterra: dict = {}

    @property
    def S(self) -> int:
        return len(self.c)

    def _assemble(self, moments: np.ndarray) -> np.ndarray:
        """moments (T, S, 4 powers) -> (T, Nz) matrix."""
        coef = np.einsum("tsm,smk->tsk", moments, self.Vinv)
        return coef.reshape(len(coef), -1) @ self.scatter

    def interp_matrix(self, targets: np.ndarray) -> np.ndarray:
        targets = np.asarray(targets, dtype=float)
        out = np.zeros((len(targets), self.S, 4))
        k = np.clip(np.searchsorted(self.z, targets, side="right") - 1, 0, self.S - 1)
        inside = (targets >= 0) & (targets <= self.z[-1])
        ell = (targets - self.c[k]) / self.d[k]
        rows = np.nonzero(inside)[0]
        out[rows, k[rows], :] = ell[rows, None] ** np.arange(4)
        return self._assemble(out)

    def heat_matrix(self, sigma: float, targets: np.ndarray) -> np.ndarray:
        """(H f)(x) = int_0^xmax g_sigma(x - y) f(y) dy, g_sigma the 1D heat kernel."""
        targets = np.asarray(targets, dtype=float)
        if sigma <= 0:
            return self.interp_matrix(targets)
        s = 2.0 * math.sqrt(sigma)
        beta = (self.d / s)[None, :]                      # (1, S)
        gam = (targets[:, None] - self.c[None, :]) / s     # (T, S)
        beta = np.broadcast_to(beta, gam.shape)
        K = np.empty(gam.shape + (4,))
        big = beta >= 0.5
        if np.any(big):
            K[big] = _moments_recurrence(beta[big], gam[big])
        if np.any(~big):
            K[~big] = _moments_gl(beta[~big], gam[~big])
        K *= (beta / SQRT_PI)[..., None]
        return self._assemble(K)

    def volterra_matrix(self, kappa: float) -> np.ndarray:
        """(E f)(x_i) = int_0^{x_i} exp(-kappa (x_i - y)) f(y) dy."""
        key = round(float(kappa), 12)
        hit = self._volterra.get(key)
        if hit is not None:
            return hit
        xg, wg = _GL8
        y = self.c[:, None] + self.d[:, None] * xg[None, :]              # (S, Q)
        B = np.einsum("qm,smk->sqk", xg[:, None] ** np.arange(4), self.Vinv)
        W = B * (self.d[:, None] * wg[None, :])[..., None]                # (S, Q, 4)
        zi = self.z[:, None, None]
        ex = np.exp(-kappa * np.maximum(zi - y[None], 0.0))
        ex *= (np.arange(self.S)[None, :, None] < np.arange(len(self.z))[:, None, None])
        contrib = np.einsum("isq,sqk->isk", ex, W)
        E = contrib.reshape(len(self.z), -1) @ self.scatter
        self._volterra[key] = E
        return E


def _erf_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """erf(a) - erf(b) for a > b without cancellation in the tails."""
    pos = b >= 0
    return np.where(pos, erfc(b) - erfc(a), erfc(-a) - erfc(-b))


def _moments_recurrence(beta: np.ndarray, gam: np.ndarray) -> np.ndarray:
    """K_m = int_{-1}^{1} l^m exp(-(beta l - gam)^2) dl, m = 0..3 (beta not small)."""
    Ep = np.exp(-(beta - gam) ** 2)
    Em = np.exp(-(beta + gam) ** 2)
    K = np.empty(beta.shape + (4,))
    K[..., 0] = SQRT_PI / (2 * beta) * _erf_diff(beta - gam, -beta - gam)
    r = gam / beta
    h = 1.0 / (2 * beta * beta)
    K[..., 1] = r * K[..., 0] - h * (Ep - Em)
    K[..., 2] = r * K[..., 1] - h * ((Ep + Em) - K[..., 0])
    K[..., 3] = r * K[..., 2] - h * ((Ep - Em) - 2 * K[..., 1])
    return K


def _moments_gl(beta: np.ndarray, gam: np.ndarray) -> np.ndarray:
    x, w = _GL12
    e = np.exp(-(beta[..., None] * x - gam[..., None]) ** 2) * w
    return np.stack([e @ x ** m for m in range(4)], axis=-1)


_WALL_CACHE: dict = {}


def wall_operators(grid: HalfSpaceGrid) -> WallOperators:
    key = grid.z.tobytes()
    op = _WALL_CACHE.get(key)
    if op is None:
        op = _WALL_CACHE[key] = WallOperators(grid.z)
    return op


# ---------------------------------------------------------------------------
# Duhamel time quadrature


def duhamel_rule(t: float, panels: int = 8, order: int = 5, ratio: float = 0.35):
    """Nodes/weights for int_0^t g(sigma) d sigma via sigma = u^2 on graded panels in u."""
    if t <= 0:
        return np.zeros(0), np.zeros(0)
    ut = math.sqrt(t)
    edges = np.concatenate([[0.0], ut * ratio ** np.arange(panels - 1, -1, -1)])
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    u = 0.5 * (a + b) + 0.5 * (b - a) * x
    wu = 0.5 * (b - a) * w
    return (u ** 2).ravel(), (2 * u * wu).ravel()


def time_interpolant(times: np.ndarray, values: np.ndarray) -> CubicSpline:
    return CubicSpline(times, values, axis=0)


def _check_time_resolution(times: np.ndarray, values: np.ndarray, tol: float = 1e-2) -> None:
    if len(times) < 4:
        return
    spl = time_interpolant(times, values)
    tm = 0.5 * (times[-2] + times[-1])
    lin = 0.5 * (values[-2] + values[-1])
    scale = float(np.max(np.abs(values))) or 1.0
    gap = float(np.max(np.abs(spl(tm) - lin)))
    if gap > tol * scale:
        warnings.warn(f"time grid under-resolves the forcing near the final node (gap {gap:.2e})")


def duhamel_modes(grid: HalfSpaceGrid, times: np.ndarray, F_hat: np.ndarray,
                  targets: list[np.ndarray], out_times: np.ndarray | None = None,
                  rule: dict | None = None) -> list[np.ndarray]:
    """Core Duhamel sum in mode space.

    ``F_hat`` has shape (len(times),) + comp + M + (Nz,) and is interpolated in
    time.  For each output time t and each target node set X the result is
    sum_q w_q exp(-kappa^2 s_q) H(s_q; X) F_hat(t - s_q).
    """
    ops = wall_operators(grid)
    rule = rule or {}
    out_times = grid.t if out_times is None else out_times
    spl = time_interpolant(times, F_hat)
    k2 = grid.kappa ** 2
    res = [np.zeros((len(out_times),) + F_hat.shape[1:-1] + (len(X),), dtype=complex)
           for X in targets]
    for i, t in enumerate(out_times):
        sig, wts = duhamel_rule(t, **rule)
        if len(sig) == 0:
            continue
        Fq = spl(t - sig)                                   # (Q, comp..., M..., Nz)
        for q, (s, w) in enumerate(zip(sig, wts)):
            damp = (w * np.exp(-k2 * s))[..., None]
            for r, X in enumerate(targets):
                H = ops.heat_matrix(s, X)
                res[r][i] += (Fq[q] @ H.T) * damp
    return res


def duhamel(F: SpaceTimeField, variant: str = "interior", rule: dict | None = None) -> SpaceTimeField:
    """Space-time heat convolution over the half-space.

    ``interior``: int_0^t int Gamma(x - y, t - s) F(y, s) dy ds.
    ``image``:    the same with the reflected kernel Gamma(x' - y', x_n + y_n, t - s).
    """
    if variant not in ("interior", "image"):
        raise ValueError(f"unknown variant {variant!r}")
    grid = F.grid
    times, vals = F.with_initial()
    _check_time_resolution(times, vals)
    hat = to_modes(grid, vals)
    X = grid.z if variant == "interior" else -grid.z
    (out,) = duhamel_modes(grid, times, hat, [X], rule=rule)
    return SpaceTimeField(grid, from_modes(grid, out), np.zeros_like(vals[0]))
