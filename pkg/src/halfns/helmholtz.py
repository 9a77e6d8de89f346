"""Half-space Helmholtz projection, solved per tangential mode.

For each mode with kappa = |xi'| > 0 the potentials solve two-point problems
on the wall nodes with the discrete operator ``D1 @ D1 - kappa^2``:

* ``q1``: Dirichlet zero at the wall, right-hand side ``i xi . f' + D1 f_n``;
* ``q2``: harmonic with wall Neumann datum ``f_n - D1 q1``;

both with the decaying Robin row ``q' + kappa q = 0`` at ``x_max``.  Using the
same ``D1`` for the gradient makes the projected field discretely
divergence-free at interior nodes with an exactly zero normal trace, and the
projection exactly idempotent.

Zero tangential mode: ``(Pf)_n`` is set to zero and the tangential mean is
kept; the flux ``f_n`` surviving at ``x_max`` is reported as incompatible.
"""

from __future__ import annotations

import logging
import threading
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.linalg import lu_factor, lu_solve

from .grid import Field, HalfSpaceGrid, d_normal, divergence, from_modes, to_modes

log = logging.getLogger(__name__)

# scipy's LU wrappers corrupt the heap when called from several threads at once
_LAPACK_LOCK = threading.Lock()


@dataclass(frozen=True, eq=False)
class ProjectionParts:
    q1: Field
    q2: Field
    projected: Field
    A: Field | None = None
    B: Field | None = None
    zero_mode_flux: float = 0.0


class _ModeSolver:
    """LU-factored per-kappa systems for the Dirichlet, Neumann and harmonic solves."""

    def __init__(self, grid: HalfSpaceGrid):
        self.grid = grid
        kap = grid.kappa
        self.keys, self.inverse = np.unique(np.round(kap.ravel(), 12), return_inverse=True)
        self._lu: dict = {}

    def _factor(self, kind: str, k: float):
        key = (kind, k)
        lu = self._lu.get(key)
        if lu is None:
            D1 = self.grid.D1
            N = len(D1)
            A = D1 @ D1 - k * k * np.eye(N)
            A[0] = 0.0
            if kind == "dirichlet":
                A[0, 0] = 1.0
            else:
                A[0] = D1[0]
            A[-1] = D1[-1]
            A[-1, -1] += k
            with _LAPACK_LOCK:
                lu = self._lu[key] = lu_factor(A)
        return lu

    def solve(self, kind: str, rhs: np.ndarray) -> np.ndarray:
        """rhs: (modes..., Nz) complex with rows 0 and N already holding boundary data."""
        flat = rhs.reshape(-1, rhs.shape[-1])
        out = np.zeros_like(flat)
        for u, k in enumerate(self.keys):
            if k == 0:
                continue
            sel = self.inverse == u
            lu = self._factor(kind, k)
            with _LAPACK_LOCK:
                out[sel] = lu_solve(lu, flat[sel].T).T
        return out.reshape(rhs.shape)


_SOLVERS: dict = {}


def _solver(grid: HalfSpaceGrid) -> _ModeSolver:
    s = _SOLVERS.get(id(grid))
    if s is None or s.grid is not grid:
        s = _SOLVERS[id(grid)] = _ModeSolver(grid)
    return s


def _zero_mask(grid: HalfSpaceGrid) -> np.ndarray:
    return grid.kappa == 0


def _cumint(grid: HalfSpaceGrid, y: np.ndarray) -> np.ndarray:
    """int_0^z y along the last axis."""
    ci = lambda v: cumulative_simpson(v, x=grid.z, axis=-1, initial=0.0)
    if np.iscomplexobj(y):
        return ci(y.real) + 1j * ci(y.imag)
    return ci(y)


def _as_vector(f, grid: HalfSpaceGrid | None = None, tol: float = 1e-6) -> Field:
    if f.kind == "tensor":
        check_boundary_zero(f, tol)
        return divergence(f)
    return f


def check_boundary_zero(F: Field, tol: float = 1e-6) -> float:
    """Relative wall size of a tensor field; raises when it exceeds ``tol``."""
    wall = np.max(np.abs(F.values[..., 0]))
    scale = np.max(np.abs(F.values)) or 1.0
    rel = float(wall / scale)
    if rel > tol:
        raise ValueError(f"tensor field does not vanish at the wall (relative {rel:.2e})")
    return rel


def _q1_hat(grid: HalfSpaceGrid, fh: np.ndarray) -> np.ndarray:
    """Per-mode q1 from the mode-space vector fh (n, M..., Nz)."""
    n = grid.n
    rhs = sum(1j * grid.xi[j][..., None] * fh[j] for j in range(n - 1)) + d_normal(grid, fh[n - 1])
    rhs = np.array(rhs, dtype=complex)
    rhs[..., 0] = 0.0
    rhs[..., -1] = 0.0
    q = _solver(grid).solve("dirichlet", rhs)
    zm = _zero_mask(grid)
    q[zm] = _cumint(grid, fh[n - 1][zm])
    return q


def _q2_hat(grid: HalfSpaceGrid, fh: np.ndarray, q1h: np.ndarray) -> tuple[np.ndarray, float]:
    n = grid.n
    g = fh[n - 1][..., 0] - q1h @ grid.D1[0]
    rhs = np.zeros_like(q1h)
    rhs[..., 0] = g
    q = _solver(grid).solve("neumann", rhs)
    zm = _zero_mask(grid)
    q[zm] = 0.0
    mtot = np.prod(grid.M)
    flux = float(np.max(np.abs(fh[n - 1][zm][..., -1]))) / mtot
    return q, flux


def _grad_hat(grid: HalfSpaceGrid, qh: np.ndarray) -> np.ndarray:
    n = grid.n
    parts = [1j * grid.xi[j][..., None] * qh for j in range(n - 1)]
    parts.append(d_normal(grid, qh))
    return np.stack(parts)


def q1_solve(f: Field, tol: float = 1e-6) -> Field:
    """Dirichlet potential with Delta q1 = div f, q1 = 0 at the wall."""
    g = f.grid
    fv = _as_vector(f, g, tol)
    return Field(g, from_modes(g, _q1_hat(g, to_modes(g, fv.values))))


def q2_solve(f: Field, q1: Field, tol: float = 1e-6, flux_tol: float = 1e-6) -> Field:
    """Harmonic potential with wall Neumann datum f_n - D_n q1."""
    g = f.grid
    fv = _as_vector(f, g, tol)
    q2h, flux = _q2_hat(g, to_modes(g, fv.values), to_modes(g, q1.values))
    if flux > flux_tol:
        warnings.warn(f"zero-mode normal flux {flux:.2e} reaches x_max (incompatible)")
    return Field(g, from_modes(g, q2h))


def neumann_potential(g_wall: np.ndarray, grid: HalfSpaceGrid) -> Field:
    """Harmonic q with D_n q = g at the wall: per mode -g^ exp(-kappa x_n) / kappa."""
    gh = np.fft.fftn(g_wall, axes=tuple(range(grid.n - 1)))
    kap = grid.kappa
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(kap > 0, -gh / np.where(kap > 0, kap, 1.0), 0.0)
    return Field(grid, from_modes(grid, c[..., None] * np.exp(-kap[..., None] * grid.z)))


def project_hat(grid: HalfSpaceGrid, fh: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Mode-space projection: (Pf^, q1^, q2^, zero-mode flux)."""
    n = grid.n
    q1h = _q1_hat(grid, fh)
    q2h, flux = _q2_hat(grid, fh, q1h)
    grad = _grad_hat(grid, q1h + q2h)
    zm = _zero_mask(grid)
    grad[:, zm] = 0.0
    grad[n - 1][zm] = fh[n - 1][zm]
    return fh - grad, q1h, q2h, flux


def project(f: Field, tol: float = 1e-6, flux_tol: float = 1e-6) -> ProjectionParts:
    """Helmholtz projection Pf = f - grad(q1 + q2); accepts f or a tensor F (f = div F)."""
    g = f.grid
    fv = _as_vector(f, g, tol)
    ph, q1h, q2h, flux = project_hat(g, to_modes(g, fv.values))
    if flux > flux_tol:
        warnings.warn(f"zero-mode normal flux {flux:.2e} reaches x_max (incompatible)")
    return ProjectionParts(Field(g, from_modes(g, q1h)), Field(g, from_modes(g, q2h)),
                           Field(g, from_modes(g, ph)), zero_mode_flux=flux)


def projection_residuals(f: Field, parts: ProjectionParts) -> dict:
    """Relative divergence and normal-trace residuals of the projected field."""
    P = parts.projected
    g = P.grid
    scale = max(P.norm(2), 1e-300)
    div = divergence(P).norm(2) / scale
    mag = float(np.max(np.abs(P.values))) or 1.0
    trace = float(np.max(np.abs(P.values[g.n - 1][..., 0]))) / mag
    return {"div": div, "trace": trace}


def decompose_AB(F: Field, tol: float = 1e-6) -> dict:
    """Split the potential of f = div F through the image potentials A and B.

    A solves Delta A = div F_n (row n of F) with zero Neumann datum;
    B(x) = int N(x' - y', x_n) A(y', 0) dy', per mode -A^(0) exp(-kappa x_n) / (2 kappa).
    Returns A, B and both representations of q1 and q2.
    """
    g = F.grid
    n = g.n
    check_boundary_zero(F, tol)
    Fh = to_modes(g, F.values)
    rows = Fh[n - 1]
    rhs = sum(1j * g.xi[i][..., None] * rows[i] for i in range(n - 1)) + d_normal(g, rows[n - 1])
    rhs = np.array(rhs, dtype=complex)
    rhs[..., 0] = 0.0
    rhs[..., -1] = 0.0
    Ah = _solver(g).solve("neumann", rhs)
    zm = _zero_mask(g)
    Ah[zm] = _cumint(g, rows[n - 1][zm]) - _cumint(g, rows[n - 1][zm])[..., -1:]
    kap = g.kappa
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(kap > 0, -Ah[..., 0] / (2 * np.where(kap > 0, kap, 1.0)), 0.0)
    Bh = c[..., None] * np.exp(-kap[..., None] * g.z)
    # direct path
    fh = to_modes(g, divergence(F).values)
    q1h = _q1_hat(g, fh)
    q2h, _ = _q2_hat(g, fh, q1h)
    # representation path
    dnA = d_normal(g, Ah)
    dnA[zm] = rows[n - 1][zm]
    q1r = dnA.copy()
    q2r = -2 * (kap ** 2)[..., None] * Bh
    for k in range(n - 1):
        ik = 1j * g.xi[k][..., None]
        q1k = _q1_hat(g, Fh[k])
        q2k, _ = _q2_hat(g, Fh[k], q1k)
        q1r = q1r + ik * q1k
        q2r = q2r + ik * q2k
    to = lambda h: Field(g, from_modes(g, h))
    return {"A": to(Ah), "B": to(Bh), "q1": to(q1h), "q2": to(q2h),
            "q1_rep": to(q1r), "q2_rep": to(q2r)}


def corpus_metrics(entry: dict) -> dict:
    """Projection checks for one corpus entry (see :func:`halfns.data.helmholtz_corpus`)."""
    from .grid import gradient
    f, F, phi = entry["f"], entry["F"], entry["phi"]
    parts = project(f)
    res = projection_residuals(f, parts)
    P = parts.projected.values
    P2 = project(parts.projected).projected.values
    idem = float(np.max(np.abs(P2 - P)) / (np.max(np.abs(P)) or 1.0))
    gp = gradient(phi)
    annih = project(gp).projected.norm(2) / (gp.norm(2) or 1.0)
    d = decompose_AB(F)
    rel = lambda a, b: float(np.max(np.abs(a.values - b.values)) / (np.max(np.abs(a.values)) or 1.0))
    two_path = max(rel(d["q1"], d["q1_rep"]), rel(d["q2"], d["q2_rep"]))
    return {"div": res["div"], "trace": res["trace"], "annihilation": annih,
            "idempotence": idem, "two_path": two_path}
