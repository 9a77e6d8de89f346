"""Built-in analytic families for initial data and forcing."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .grid import Field, HalfSpaceGrid, SpaceTimeField, d_normal, d_tangential, divergence

FAMILIES = ("gaussian-roll", "single-mode", "zero")


@dataclass(frozen=True)
class DataSpec:
    family: str = "gaussian-roll"
    amplitude: float = 1.0
    center: tuple = (0.0,)
    width: float = 0.8          # tangential Gaussian width
    offset: float = 1.0         # wall-normal centre of the profile
    depth: float = 0.6          # wall-normal width
    wave: int = 1               # tangential wavenumber for single-mode
    extra: dict = field(default_factory=dict)


def wall_profile(z: np.ndarray, offset: float, depth: float) -> np.ndarray:
    """z^2 exp(-((z - offset)/depth)^2): vanishes to second order at the wall."""
    return z ** 2 * np.exp(-((z - offset) / depth) ** 2)


def _tangential_profile(grid: HalfSpaceGrid, spec: DataSpec) -> np.ndarray:
    mesh = grid.mesh()
    th = np.ones(1)
    cen = tuple(spec.center) + (0.0,) * (grid.n - 1 - len(spec.center))
    for j in range(grid.n - 1):
        x = mesh[j][..., 0]
        if spec.family == "single-mode":
            th = th * (np.cos(spec.wave * np.pi / grid.L[j] * x) if j == 0 else 1.0)
        else:
            th = th * np.exp(-((x - cen[j]) / spec.width) ** 2)
    return np.broadcast_to(th, tuple(grid.M))


def potential_curl(grid: HalfSpaceGrid, psi: np.ndarray) -> np.ndarray:
    """(D_n psi, 0, ..., -D_1 psi): divergence-free for the discrete operators."""
    out = np.zeros((grid.n,) + grid.shape)
    out[0] = d_normal(grid, psi)
    out[grid.n - 1] = -d_tangential(grid, psi, 0)
    return out


def make_initial_data(spec: DataSpec | str, grid: HalfSpaceGrid,
                      norm: Callable[[Field], float] | None = None,
                      target: float | None = None, rtol: float = 1e-3,
                      maxiter: int = 8) -> Field:
    """Divergence-free, wall-compatible data h.

    With ``norm`` and ``target`` the amplitude is rescaled until norm(h) = target.
    """
    if isinstance(spec, str):
        spec = DataSpec(family=spec)
    if spec.family not in FAMILIES:
        raise ValueError(f"unknown data family {spec.family!r}; choose from {FAMILIES}")
    if spec.family == "zero" or spec.amplitude == 0:
        return Field(grid, np.zeros((grid.n,) + grid.shape))
    th = _tangential_profile(grid, spec)
    psi = spec.amplitude * th[..., None] * wall_profile(grid.z, spec.offset, spec.depth)
    h = Field(grid, potential_curl(grid, psi))
    if norm is not None and target is not None:
        for _ in range(maxiter):
            cur = norm(h)
            if cur == 0:
                raise ValueError("cannot normalize a zero field")
            if abs(cur / target - 1) < rtol:
                break
            h = h * (target / cur)
    return h


def divergence_residual(h: Field) -> float:
    s = h.norm(2)
    return 0.0 if s == 0 else divergence(h).norm(2) / s


def manufactured_flow(grid: HalfSpaceGrid, spec: DataSpec | None = None, rate: float = 1.0):
    """w(x, t) = t e^{-rate t} W(x) with W a gaussian roll; returns (w, f = w_t - Delta w).

    W vanishes to second order at the wall in every component, so f is
    divergence-free with zero normal trace and the Stokes pressure is zero.
    """
    spec = spec or DataSpec()
    W = make_initial_data(spec, grid).values
    from .green import _laplacian_series
    lapW = _laplacian_series(grid, W)
    t = grid.t
    a = t * np.exp(-rate * t)
    da = (1 - rate * t) * np.exp(-rate * t)
    shape = (-1,) + (1,) * W.ndim
    w = a.reshape(shape) * W[None]
    f = da.reshape(shape) * W[None] - a.reshape(shape) * lapW[None]
    w0 = np.zeros_like(W)
    f0 = W.copy()
    return SpaceTimeField(grid, w, w0), SpaceTimeField(grid, f, f0)


def with_amplitude(spec: DataSpec, amp: float) -> DataSpec:
    return replace(spec, amplitude=amp)


def periodic_bump(x: np.ndarray, center: float, width: float) -> np.ndarray:
    """exp((cos(x - c) - 1) / w^2): a Gaussian-like bump that is smooth on the periodic box."""
    return np.exp((np.cos(x - center) - 1.0) / width ** 2)


def helmholtz_corpus(grid: HalfSpaceGrid, count: int = 10, seed: int = 0) -> list[dict]:
    """Random localized fields for projection checks.

    Each entry holds a vector field ``f`` (no wall condition), a symmetric
    tensor ``F`` vanishing at the wall and a scalar potential ``phi``.
    """
    rng = np.random.default_rng(seed)
    mesh = grid.mesh()
    z = mesh[-1]
    n = grid.n

    def tangential(w):
        out = np.ones(1)
        for j in range(n - 1):
            c = rng.uniform(-1.0, 1.0)
            m = rng.integers(0, 3)
            out = out * periodic_bump(mesh[j], c, w) * np.cos(m * (mesh[j] - c))
        return out

    def normal(power):
        zc, d = rng.uniform(1.0, 2.0), rng.uniform(0.5, 0.9)
        return z ** power * np.exp(-((z - zc) / d) ** 2)

    out = []
    for _ in range(count):
        f = np.stack([np.broadcast_to(tangential(rng.uniform(0.5, 0.9)) * normal(rng.integers(0, 2)),
                                      grid.shape) for _ in range(n)])
        F = np.empty((n, n) + grid.shape)
        for i in range(n):
            for k in range(i, n):
                F[i, k] = F[k, i] = np.broadcast_to(
                    rng.normal() * tangential(rng.uniform(0.5, 0.9)) * normal(2), grid.shape)
        phi = np.broadcast_to(tangential(rng.uniform(0.5, 0.9)) * normal(0), grid.shape)
        out.append({"f": Field(grid, f), "F": Field(grid, F), "phi": Field(grid, np.array(phi))})
    return out
