"""Half-space grid, field containers and basic differential operators.

Layout conventions
------------------
A field's ``values`` array has shape ``comp_shape + grid.shape`` where
``grid.shape = (M_1, ..., M_{n-1}, Nz)``: periodic tangential samples first,
wall-normal nodes last.  ``comp_shape`` is ``()`` for scalars, ``(n,)`` for
vectors and ``(n, n)`` for tensors.  The wall node ``x_n = 0`` is stored as
node 0.

Tangential derivatives are spectral; wall-normal derivatives use 5-point
finite-difference stencils on the graded nodes (Fornberg weights).
"""

from __future__ import annotations

import io
import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline

log = logging.getLogger(__name__)


def fornberg_weights(x0: float, x: np.ndarray, m: int) -> np.ndarray:
    """Finite-difference weights for derivatives 0..m at x0 from nodes x."""
    x = np.asarray(x, dtype=float)
    nn = len(x)
    c = np.zeros((m + 1, nn))
    c1, c4 = 1.0, x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, nn):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def fd_matrix(x: np.ndarray, order: int, width: int = 5) -> np.ndarray:
    """Dense derivative matrix on nodes x; centred stencils, one-sided at ends."""
    nn = len(x)
    D = np.zeros((nn, nn))
    h = width // 2
    for i in range(nn):
        lo = min(max(i - h, 0), nn - width)
        idx = np.arange(lo, lo + width)
        D[i, idx] = fornberg_weights(x[i], x[idx], order)[order]
    return D


def graded_nodes(x_max: float, count: int, ratio: float) -> np.ndarray:
    """0 = x_0 < ... < x_count = x_max with geometrically growing spacing."""
    if ratio == 1.0:
        return np.linspace(0.0, x_max, count + 1)
    k = np.arange(count)
    h = ratio ** k
    h *= x_max / h.sum()
    return np.concatenate([[0.0], np.cumsum(h)])


def zoned_nodes(x_max: float, h0: float, ratio: float, h_core: float, z_core: float,
                far_ratio: float) -> np.ndarray:
    """Wall nodes in three zones: geometric growth from h0 up to h_core, uniform
    spacing h_core up to z_core, then geometric growth by far_ratio up to x_max.
    The far zone is rescaled so the last node lands on x_max."""
    if not (0 < h0 <= h_core and z_core < x_max and ratio >= 1 and far_ratio >= 1):
        raise ValueError("inconsistent zoned wall-grid parameters")
    hs = []
    z = 0.0
    h = h0
    while z < z_core:
        hs.append(h)
        z += h
        h = min(h * ratio, h_core)
    core_end = z
    far = []
    h = h_core
    while core_end + sum(far) < x_max:
        h *= far_ratio
        far.append(h)
    far = np.array(far)
    if far.size:
        far *= (x_max - core_end) / far.sum()
    return np.concatenate([[0.0], np.cumsum(np.concatenate([hs, far]))])


def _simpson_weights(x: np.ndarray) -> np.ndarray:
    return simpson(np.eye(len(x)), x=x, axis=1)


@dataclass(frozen=True, eq=False)
class HalfSpaceGrid:
    n: int
    L: tuple
    M: tuple
    z: np.ndarray
    t: np.ndarray
    zw: np.ndarray = field(repr=False)
    tw: np.ndarray = field(repr=False)
    time_exponent: float = 2.0

    # ---- geometry ------------------------------------------------------
    @property
    def Nz(self) -> int:
        return len(self.z)

    @property
    def shape(self) -> tuple:
        return tuple(self.M) + (self.Nz,)

    @property
    def x_max(self) -> float:
        return float(self.z[-1])

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @cached_property
    def x_tangential(self) -> list:
        return [-L + 2 * L * np.arange(M) / M for L, M in zip(self.L, self.M)]

    def mesh(self) -> list:
        """Broadcastable coordinate arrays, last one is x_n."""
        axes = self.x_tangential + [self.z]
        return np.meshgrid(*axes, indexing="ij", sparse=True)

    @cached_property
    def xi(self) -> list:
        """Tangential wavenumbers, each broadcastable over grid.shape[:-1]."""
        out = []
        for j, (L, M) in enumerate(zip(self.L, self.M)):
            k = np.fft.fftfreq(M, d=1.0 / M) * (np.pi / L)
            shape = [1] * (self.n - 1)
            shape[j] = M
            out.append(k.reshape(shape))
        return out

    @cached_property
    def kappa(self) -> np.ndarray:
        """|xi'| on the tangential mode array."""
        return np.sqrt(sum(k ** 2 for k in self.xi)) * np.ones(self.M)

    @cached_property
    def cell_area(self) -> float:
        return float(np.prod([2 * L / M for L, M in zip(self.L, self.M)]))

    @cached_property
    def D1(self) -> np.ndarray:
        return fd_matrix(self.z, 1, 5)

    @cached_property
    def D2(self) -> np.ndarray:
        return fd_matrix(self.z, 2, 6)

    # ---- quadrature ---------------------------------------------------
    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integral over the half-space box of the trailing grid axes."""
        nd = self.n
        s = np.tensordot(values, self.zw, axes=([-1], [0]))
        return s.sum(axis=tuple(range(-(nd - 1), 0))) * self.cell_area

    def lp_norm(self, values: np.ndarray, p: float) -> np.ndarray:
        """L^p norm over space of a scalar sample array (no component axes)."""
        return self.integrate(np.abs(values) ** p) ** (1.0 / p)

    def time_integrate(self, series: np.ndarray) -> np.ndarray:
        """Integral over (0, T] of samples on the time nodes (axis 0)."""
        return np.tensordot(self.tw, series, axes=([0], [0]))

    def with_times(self, t: np.ndarray) -> "HalfSpaceGrid":
        t = np.asarray(t, dtype=float)
        return HalfSpaceGrid(self.n, self.L, self.M, self.z, t, self.zw, _time_weights(t),
                             self.time_exponent)

    def scaled(self, lam: float) -> "HalfSpaceGrid":
        """Grid for x -> x / lam, t -> t / lam^2 (matches f_lam(x) = lam f(lam x))."""
        z = self.z / lam
        t = self.t / lam ** 2
        return HalfSpaceGrid(self.n, tuple(L / lam for L in self.L), self.M, z, t,
                             _simpson_weights(z), _time_weights(t), self.time_exponent)


def _time_weights(t: np.ndarray) -> np.ndarray:
    """Weights for int_0^T g dt from g(t_1..t_J); g(0) is quadratically extrapolated."""
    tt = np.concatenate([[0.0], t])
    w = _simpson_weights(tt)
    e = fornberg_weights(0.0, t[:3], 0)[0]
    out = w[1:].copy()
    out[:3] += w[0] * e
    return out


def make_grid(n: int = 2, L=np.pi, M=64, wall_nodes: int = 48, x_max: float = 8.0,
              wall_ratio: float = 1.04, time_nodes: int = 32, T: float = 1.0,
              time_exponent: float = 2.0, zones: dict | None = None) -> HalfSpaceGrid:
    """Construct a :class:`HalfSpaceGrid`.

    ``L`` and ``M`` may be scalars (same for every tangential direction).
    Time nodes are ``T (j/J)^gamma`` for ``j = 1..J``.  With ``zones``
    (keys h0, ratio, h_core, z_core, far_ratio) the wall nodes come from
    :func:`zoned_nodes` and ``wall_nodes``/``wall_ratio`` are ignored.
    """
    if n not in (2, 3):
        raise ValueError(f"only n = 2 or 3 supported, got {n}")
    Ls = tuple(float(v) for v in np.broadcast_to(np.asarray(L, dtype=float), (n - 1,)))
    Ms = tuple(int(v) for v in np.broadcast_to(np.asarray(M), (n - 1,)))
    if any(m <= 0 or m % 2 for m in Ms):
        raise ValueError(f"mode counts must be positive and even, got {Ms}")
    if any(v <= 0 for v in Ls) or x_max <= 0 or T <= 0:
        raise ValueError("box sizes, x_max and T must be positive")
    if wall_nodes < 6 or time_nodes < 3:
        raise ValueError("need at least 6 wall intervals and 3 time nodes")
    if wall_ratio <= 0:
        raise ValueError("wall grading ratio must be positive")
    z = zoned_nodes(x_max, **zones) if zones else graded_nodes(x_max, wall_nodes, wall_ratio)
    t = T * (np.arange(1, time_nodes + 1) / time_nodes) ** time_exponent
    return HalfSpaceGrid(n, Ls, Ms, z, t, _simpson_weights(z), _time_weights(t), time_exponent)


# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True, eq=False)
class Field:
    """Grid samples; ``comp_shape`` is (), (n,) or (n, n)."""

    grid: HalfSpaceGrid
    values: np.ndarray
    boundary_zero: bool = False

    def __post_init__(self):
        gshape = self.grid.shape
        if tuple(self.values.shape[-len(gshape):]) != gshape:
            raise ValueError(f"values shape {self.values.shape} does not end with grid shape {gshape}")

    @property
    def comp_shape(self) -> tuple:
        return tuple(self.values.shape[: self.values.ndim - len(self.grid.shape)])

    @property
    def kind(self) -> str:
        return {0: "scalar", 1: "vector", 2: "tensor"}[len(self.comp_shape)]

    def __add__(self, other: "Field") -> "Field":
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "Field":
        return Field(self.grid, self.values * c, self.boundary_zero)

    __rmul__ = __mul__

    def norm(self, p: float = 2.0) -> float:
        return float(lp_norm(self.grid, self.values, p))


def ScalarField(grid, values) -> Field:
    return Field(grid, np.asarray(values))


def VectorField(grid, values) -> Field:
    v = np.asarray(values)
    if v.shape[0] != grid.n:
        raise ValueError("vector field needs n components")
    return Field(grid, v)


def TensorField(grid, values, boundary_zero: bool = False) -> Field:
    v = np.asarray(values)
    if v.shape[:2] != (grid.n, grid.n):
        raise ValueError("tensor field needs n x n components")
    return Field(grid, v, boundary_zero)


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """One snapshot per time node: ``values.shape = (J,) + comp_shape + grid.shape``."""

    grid: HalfSpaceGrid
    values: np.ndarray
    initial: np.ndarray | None = None   # value at t = 0 when known

    def __post_init__(self):
        if self.values.shape[0] != len(self.grid.t):
            raise ValueError("one snapshot per time node required")

    def at(self, j: int) -> Field:
        return Field(self.grid, self.values[j])

    def __add__(self, other: "SpaceTimeField") -> "SpaceTimeField":
        init = None
        if self.initial is not None and other.initial is not None:
            init = self.initial + other.initial
        return SpaceTimeField(self.grid, self.values + other.values, init)

    def __sub__(self, other: "SpaceTimeField") -> "SpaceTimeField":
        init = None
        if self.initial is not None and other.initial is not None:
            init = self.initial - other.initial
        return SpaceTimeField(self.grid, self.values - other.values, init)

    def __mul__(self, c: float) -> "SpaceTimeField":
        return SpaceTimeField(self.grid, self.values * c,
                              None if self.initial is None else self.initial * c)

    __rmul__ = __mul__

    def with_initial(self) -> tuple[np.ndarray, np.ndarray]:
        """(times including 0, stacked values) using the stored or extrapolated t=0 value."""
        t = self.grid.t
        if self.initial is not None:
            v0 = self.initial
        else:
            w = fornberg_weights(0.0, t[:3], 0)[0]
            v0 = np.tensordot(w, self.values[:3], axes=([0], [0]))
        return np.concatenate([[0.0], t]), np.concatenate([v0[None], self.values])


def lp_norm(grid: HalfSpaceGrid, values: np.ndarray, p: float) -> np.ndarray:
    """Spatial L^p norm; leading component axes are combined in the Euclidean norm."""
    ncomp_axes = values.ndim - len(grid.shape)
    v = np.abs(values)
    if ncomp_axes:
        v = np.sqrt((v ** 2).sum(axis=tuple(range(ncomp_axes))))
    return grid.integrate(v ** p) ** (1.0 / p)


# ---------------------------------------------------------------------------
# tangential transforms and derivatives

def tan_axes(grid: HalfSpaceGrid) -> tuple:
    return tuple(range(-grid.n, -1))


def to_modes(grid: HalfSpaceGrid, values: np.ndarray) -> np.ndarray:
    return np.fft.fftn(values, axes=tan_axes(grid))


def from_modes(grid: HalfSpaceGrid, hat: np.ndarray, real: bool = True) -> np.ndarray:
    out = np.fft.ifftn(hat, axes=tan_axes(grid))
    return out.real if real else out


def _xi_b(grid: HalfSpaceGrid, j: int) -> np.ndarray:
    return grid.xi[j][..., None]


def d_tangential(grid: HalfSpaceGrid, values: np.ndarray, j: int, order: int = 1) -> np.ndarray:
    hat = to_modes(grid, values)
    return from_modes(grid, hat * (1j * _xi_b(grid, j)) ** order)


def d_normal(grid: HalfSpaceGrid, values: np.ndarray, order: int = 1) -> np.ndarray:
    D = grid.D1 if order == 1 else grid.D2
    return values @ D.T


def partial(grid: HalfSpaceGrid, values: np.ndarray, k: int, order: int = 1) -> np.ndarray:
    if k == grid.n - 1:
        return d_normal(grid, values, order)
    return d_tangential(grid, values, k, order)


def divergence(u: Field) -> Field:
    g = u.grid
    if u.comp_shape[:1] != (g.n,):
        raise ValueError("divergence needs an n-component field")
    if u.kind == "tensor":
        # f_i = D_k F_ki
        out = sum(partial(g, u.values[k], k) for k in range(g.n))
        return Field(g, out)
    return Field(g, sum(partial(g, u.values[k], k) for k in range(g.n)))


def gradient(f: Field) -> Field:
    g = f.grid
    return Field(g, np.stack([partial(g, f.values, k) for k in range(g.n)]))


def laplacian(f: Field) -> Field:
    g = f.grid
    hat = to_modes(g, f.values)
    tan = from_modes(g, -(g.kappa[..., None] ** 2) * hat)
    return Field(g, tan + d_normal(g, f.values, 2))


# ---------------------------------------------------------------------------
# boundary trace and extension

def trace_boundary(f: Field, tol: float = 1e-4, offset: float | None = None) -> np.ndarray:
    """Wall trace by quadratic extrapolation from the three smallest positive nodes.

    The stored wall sample is ignored so the result is an independent check of it.
    """
    g = f.grid
    z = g.z[1:4]
    if offset is not None and z[0] > offset:
        raise ValueError(f"smallest node {z[0]} exceeds trace offset {offset}")
    w3 = fornberg_weights(0.0, z, 0)[0]
    w4 = fornberg_weights(0.0, g.z[1:5], 0)[0]
    v = f.values
    tr = v[..., 1:4] @ w3
    alt = v[..., 1:5] @ w4
    scale = float(np.max(np.abs(v))) or 1.0
    resid = float(np.max(np.abs(tr - alt)))
    if resid > tol * scale:
        warnings.warn(f"trace extrapolation residual {resid:.2e} exceeds {tol:g} x field scale")
    return tr


@dataclass(frozen=True)
class PeriodicBox:
    """Uniform periodic whole-space box; axis lengths are full periods."""

    lengths: tuple
    shape: tuple

    @property
    def n(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> tuple:
        return tuple(Lp / N for Lp, N in zip(self.lengths, self.shape))

    @property
    def cell(self) -> float:
        return float(np.prod(self.spacing))

    def coords(self) -> list:
        axes = [-Lp / 2 + Lp * np.arange(N) / N for Lp, N in zip(self.lengths, self.shape)]
        return np.meshgrid(*axes, indexing="ij", sparse=True)

    def ksq(self) -> np.ndarray:
        ks = np.meshgrid(*[2 * np.pi * np.fft.fftfreq(N, d=Lp / N)
                           for Lp, N in zip(self.lengths, self.shape)], indexing="ij", sparse=True)
        return sum(k ** 2 for k in ks)

    def lp(self, values: np.ndarray, p: float) -> np.ndarray:
        ax = tuple(range(-self.n, 0))
        return (np.sum(np.abs(values) ** p, axis=ax) * self.cell) ** (1.0 / p)

    def scaled(self, lam: float) -> "PeriodicBox":
        return PeriodicBox(tuple(Lp / lam for Lp in self.lengths), self.shape)


# C^2 reflection f(-y) = sum a_k f(y/k), k = 1, 2, 3
_HESTENES_B = np.array([1.0, 0.5, 1.0 / 3.0])
_HESTENES_A = np.linalg.solve(np.vander(_HESTENES_B, 3, increasing=True).T, np.array([1.0, -1.0, 1.0]))


def extension_box(grid: HalfSpaceGrid, nz_uniform: int | None = None) -> PeriodicBox:
    if nz_uniform is None:
        nz_uniform = int(2 ** np.ceil(np.log2(2 * grid.Nz)))
    return PeriodicBox(tuple(2 * L for L in grid.L) + (2 * grid.x_max,), tuple(grid.M) + (nz_uniform,))


def extend(f: Field | np.ndarray, mode: str = "zero", grid: HalfSpaceGrid | None = None,
           nz_uniform: int | None = None) -> tuple[np.ndarray, PeriodicBox]:
    """Extend a half-space field across x_n = 0 onto a uniform periodic box.

    Modes: ``zero``, ``odd``, ``even`` and ``hestenes`` (C^2 reflection
    f(-y) = sum_k a_k f(y/k) with a cutoff that switches it off before x_max/3).
    Returns (values on the box, box).  Tangential samples are kept as they are.
    """
    if isinstance(f, Field):
        grid, values = f.grid, f.values
    else:
        values = np.asarray(f)
    box = extension_box(grid, nz_uniform)
    nu = box.shape[-1]
    y = -grid.x_max + 2 * grid.x_max * np.arange(nu) / nu
    spline = CubicSpline(grid.z, values, axis=-1, extrapolate=False)
    pos = y >= 0
    out = np.zeros(values.shape[:-1] + (nu,))
    out[..., pos] = np.nan_to_num(spline(y[pos]))
    yn = -y[~pos]
    if mode == "zero":
        pass
    elif mode == "odd":
        out[..., ~pos] = -np.nan_to_num(spline(yn))
    elif mode == "even":
        out[..., ~pos] = np.nan_to_num(spline(yn))
    elif mode == "hestenes":
        cut = _cutoff(yn / (grid.x_max / 3.0))
        acc = sum(a * np.nan_to_num(spline(b * yn)) for a, b in zip(_HESTENES_A, _HESTENES_B))
        out[..., ~pos] = acc * cut
    else:
        raise ValueError(f"unknown extension mode {mode!r}")
    return out, box


def _cutoff(s: np.ndarray) -> np.ndarray:
    """Smooth 1 -> 0 transition on s in [1/2, 1]."""
    s = np.clip(2 * s - 1, 0.0, 1.0)

    def e(v):
        return np.where(v > 0, np.exp(-1.0 / np.where(v > 0, v, 1.0)), 0.0)

    return e(1 - s) / (e(1 - s) + e(s))


# ---------------------------------------------------------------------------
# field dump format

def write_field(path_or_buf, f: Field | SpaceTimeField) -> None:
    """Header line with the grid description, then little-endian float64 payload."""
    g = f.grid
    snap = f.values[0] if isinstance(f, SpaceTimeField) else f.values
    comp = snap.shape[: snap.ndim - len(g.shape)]
    header = {
        "dim": g.n,
        "comp": "x".join(str(c) for c in comp) or "1",
        "modes": ",".join(str(m) for m in g.M),
        "L": ",".join(repr(v) for v in g.L),
        "z": ",".join(repr(float(v)) for v in g.z),
        "t": ",".join(repr(float(v)) for v in g.t),
        "snapshots": f.values.shape[0] if isinstance(f, SpaceTimeField) else 0,
    }
    line = "HALFNS-FIELD " + " ".join(f"{k}={v}" for k, v in header.items()) + "\n"
    payload = np.ascontiguousarray(f.values, dtype="<f8").tobytes()
    if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
        with open(path_or_buf, "wb") as fh:
            fh.write(line.encode("ascii"))
            fh.write(payload)
    else:
        path_or_buf.write(line.encode("ascii"))
        path_or_buf.write(payload)


def read_field(path_or_buf) -> Field | SpaceTimeField:
    if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
        with open(path_or_buf, "rb") as fh:
            data = fh.read()
    else:
        data = path_or_buf.read()
    nl = data.index(b"\n")
    head = data[:nl].decode("ascii").split()
    if head[0] != "HALFNS-FIELD":
        raise ValueError("not a field dump")
    kv = dict(item.split("=", 1) for item in head[1:])
    n = int(kv["dim"])
    M = tuple(int(v) for v in kv["modes"].split(","))
    L = tuple(float(v) for v in kv["L"].split(","))
    z = np.array([float(v) for v in kv["z"].split(",")])
    t = np.array([float(v) for v in kv["t"].split(",")])
    grid = HalfSpaceGrid(n, L, M, z, t, _simpson_weights(z), _time_weights(t))
    comp = () if kv["comp"] == "1" else tuple(int(c) for c in kv["comp"].split("x"))
    snaps = int(kv["snapshots"])
    shape = ((snaps,) if snaps else ()) + comp + grid.shape
    values = np.frombuffer(data[nl + 1:], dtype="<f8").reshape(shape).copy()
    if snaps:
        return SpaceTimeField(grid, values)
    return Field(grid, values)
