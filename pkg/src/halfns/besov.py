"""Discrete norm estimators.

The homogeneous Besov norm uses the heat-semigroup (thermic) form

    ( int_0^oo ( t^{k - s/2} || D_t^k Gamma_t * f ||_{L^p} )^q dt/t )^{1/q}

divided by ``c = (Gamma(q(k - s/2)) / q^{q(k - s/2)})^{1/q}``, which makes the
p = q = 2 case coincide with the Fourier-side norm || |xi|^s f^ ||_{L^2}.
Half-space fields are first carried to a uniform periodic box by extension.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy.integrate import simpson
from scipy.special import gammaln

from .grid import (Field, HalfSpaceGrid, PeriodicBox, SpaceTimeField, extend, lp_norm,
                   partial)

log = logging.getLogger(__name__)

FLAVORS = ("whole", "halfspace_zero", "halfspace_restriction")
RESTRICTION_CANDIDATES = ("zero", "even", "hestenes")


@dataclass(frozen=True)
class NormSpec:
    s: float
    p: float
    q: float
    k: int | None = None
    flavor: str = "halfspace_zero"
    n_t: int = 64
    t_range: tuple | None = None
    tail_tol: float = 0.01

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise ValueError(f"unknown flavor {self.flavor!r}")
        if not (self.p > 1 and self.q > 1):
            raise ValueError("p and q must exceed 1")
        if self.k is not None and not self.k > self.s / 2:
            raise ValueError(f"k={self.k} must exceed s/2={self.s / 2}")

    @property
    def order(self) -> int:
        return self.k if self.k is not None else math.ceil(self.s / 2) + 1


@dataclass(frozen=True)
class NormReport:
    value: float
    tail_low: float
    tail_high: float
    flavor: str
    k: int
    detail: str = ""


def _normalization(s: float, q: float, k: int) -> float:
    a = q * (k - s / 2)
    return math.exp((gammaln(a) - a * math.log(q)) / q)


def _default_t_range(box: PeriodicBox) -> tuple[float, float]:
    return min(box.spacing) ** 2 / 16.0, max(box.lengths) ** 2


def thermic_norm(values: np.ndarray, box: PeriodicBox, spec: NormSpec) -> NormReport:
    """Thermic estimator on periodic-box samples; leading axes are components."""
    k = spec.order
    ax = tuple(range(-box.n, 0))
    fh = np.fft.fftn(values, axes=ax)
    ksq = box.ksq()
    t_lo, t_hi = spec.t_range or _default_t_range(box)
    ts = np.geomspace(t_lo, t_hi, spec.n_t)
    mult0 = (-ksq) ** k
    comp_axes = tuple(range(values.ndim - box.n))
    g = np.empty(len(ts))
    for i, t in enumerate(ts):
        w = np.fft.ifftn(fh * (mult0 * np.exp(-ksq * t)), axes=ax).real
        if comp_axes:
            w = np.sqrt(np.sum(w * w, axis=comp_axes))
        g[i] = (t ** (k - spec.s / 2) * box.lp(w, spec.p)) ** spec.q
    lt = np.log(ts)
    total = simpson(g, x=lt)
    if total <= 0:
        return NormReport(0.0, 0.0, 0.0, spec.flavor, k)
    m = max(spec.n_t // 16, 2)
    tail_low = simpson(g[: m + 1], x=lt[: m + 1]) / total
    tail_high = simpson(g[-m - 1:], x=lt[-m - 1:]) / total
    if max(tail_low, tail_high) > spec.tail_tol:
        warnings.warn(f"thermic estimator tails ({tail_low:.2%}, {tail_high:.2%}) exceed "
                      f"{spec.tail_tol:.0%}: widen the t range")
    value = total ** (1.0 / spec.q) / _normalization(spec.s, spec.q, k)
    return NormReport(float(value), float(tail_low), float(tail_high), spec.flavor, k)


def besov_norm(f: Field | np.ndarray, spec: NormSpec, box: PeriodicBox | None = None,
               nz_uniform: int | None = None) -> NormReport:
    """Homogeneous Besov norm of a half-space field (or of box samples for ``whole``)."""
    if spec.flavor == "whole":
        if box is None:
            raise ValueError("whole-space flavor needs a PeriodicBox")
        return thermic_norm(np.asarray(f), box, spec)
    if not isinstance(f, Field):
        raise TypeError("half-space flavors need a Field")
    if spec.flavor == "halfspace_zero":
        vals, b = extend(f, "zero", nz_uniform=nz_uniform)
        return thermic_norm(vals, b, spec)
    best = None
    for mode in RESTRICTION_CANDIDATES:
        vals, b = extend(f, mode, nz_uniform=nz_uniform)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = thermic_norm(vals, b, spec)
        if best is None or rep.value < best.value:
            best = NormReport(rep.value, rep.tail_low, rep.tail_high, spec.flavor, rep.k, mode)
    return best


def sobolev_seminorm(f: Field, k: int, p: float) -> float:
    """sum over multi-indices |l| = k of ||D^l f||_{L^p} (components combined pointwise)."""
    if k not in (0, 1, 2):
        raise ValueError("k must be 0, 1 or 2")
    g = f.grid
    v = f.values
    ncomp = v.ndim - len(g.shape)

    if k == 0:
        return float(lp_norm(g, v, p))
    total = 0.0
    for i in range(g.n):
        di = _apply(g, v, ncomp, i)
        if k == 1:
            total += float(lp_norm(g, di, p))
            continue
        for j in range(i, g.n):
            total += float(lp_norm(g, _apply(g, di, ncomp, j), p))
    return total


def _apply(g: HalfSpaceGrid, v: np.ndarray, ncomp: int, axis: int) -> np.ndarray:
    if ncomp == 0:
        return partial(g, v, axis)
    flat = v.reshape((-1,) + g.shape)
    return np.stack([partial(g, c, axis) for c in flat]).reshape(v.shape)


def bochner_norm(u: SpaceTimeField, q: float, spatial: NormSpec | Callable[[np.ndarray], float] | float,
                 tail: bool = False) -> float | tuple[float, float]:
    """(int_0^T ||u(t)||_X^q dt)^{1/q} on the graded time grid.

    ``spatial`` is a NormSpec (Besov), a callable on snapshot arrays, or a
    number p for the plain L^p norm.  With ``tail`` the fraction carried by
    the last decade of nodes is returned as well.
    """
    g = u.grid
    vals = spatial_norms(u, spatial)
    integrand = vals ** q
    total = float(np.dot(g.tw, integrand))
    value = total ** (1.0 / q)
    if not tail:
        return value
    last = g.t >= g.T / 10
    frac = float(np.dot(g.tw[last], integrand[last]) / total) if total > 0 else 0.0
    return value, frac


def spatial_norms(u: SpaceTimeField, spatial) -> np.ndarray:
    g = u.grid
    out = np.empty(len(g.t))
    for j in range(len(g.t)):
        snap = u.values[j]
        if isinstance(spatial, NormSpec):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                out[j] = besov_norm(Field(g, snap), spatial).value
        elif callable(spatial):
            out[j] = spatial(snap)
        else:
            out[j] = float(lp_norm(g, snap, float(spatial)))
    return out


# ---------------------------------------------------------------------------
# Littlewood-Paley oracle


def _phi(r: np.ndarray) -> np.ndarray:
    """Radial cutoff: 1 on [0, 1], 0 on [2, oo), smooth in between."""
    s = np.clip(r - 1.0, 0.0, 1.0)

    def e(v):
        return np.where(v > 0, np.exp(-1.0 / np.where(v > 0, v, 1.0)), 0.0)

    return e(1 - s) / (e(1 - s) + e(s))


def lp_dyadic_oracle(values: np.ndarray, box: PeriodicBox, s: float, p: float, q: float) -> float:
    """(sum_j (2^{js} ||Delta_j f||_{L^p})^q)^{1/q} with sum_j psi_j^2 = 1 off the origin."""
    ax = tuple(range(-box.n, 0))
    fh = np.fft.fftn(values, axes=ax)
    kabs = np.sqrt(box.ksq())
    nz = kabs[kabs > 0]
    if nz.size == 0:
        return 0.0
    j_lo = int(math.floor(math.log2(nz.min()))) - 1
    j_hi = int(math.ceil(math.log2(nz.max()))) + 1
    comp_axes = tuple(range(values.ndim - box.n))
    acc = 0.0
    for j in range(j_lo, j_hi + 1):
        psi2 = _phi(kabs / 2.0 ** j) - _phi(kabs / 2.0 ** (j - 1))
        psi = np.sqrt(np.clip(psi2, 0.0, None))
        w = np.fft.ifftn(fh * psi, axes=ax).real
        if comp_axes:
            w = np.sqrt(np.sum(w * w, axis=comp_axes))
        acc += (2.0 ** (j * s) * float(box.lp(w, p))) ** q
    return acc ** (1.0 / q)


# ---------------------------------------------------------------------------
# product estimate


def _recip_sum_ok(p, r, s) -> bool:
    F = lambda x: Fraction(x).limit_denominator(10 ** 6) if isinstance(x, float) else Fraction(x)
    return 1 / F(r) + 1 / F(s) == 1 / F(p)


@dataclass(frozen=True)
class ProductReport:
    lhs: float
    rhs: float
    ratio: float


def product_estimate_monitor(f1: np.ndarray, f2: np.ndarray, box: PeriodicBox, beta: float,
                             p, q, r1, s1, r2, s2) -> ProductReport:
    """LHS ||f1 f2||_{B^beta_pq} against ||f1||_{B^beta_{s1 q}}||f2||_{r1} + ||f1||_{s2}||f2||_{B^beta_{r2 q}}."""
    if not (_recip_sum_ok(p, r1, s1) and _recip_sum_ok(p, r2, s2)):
        raise ValueError("exponents must satisfy 1/r_i + 1/s_i = 1/p")
    if beta <= 0:
        raise ValueError("beta must be positive")
    fl = lambda x: float(Fraction(x)) if not isinstance(x, float) else x
    p, q, r1, s1, r2, s2 = map(fl, (p, q, r1, s1, r2, s2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        B = lambda f, pp: thermic_norm(f, box, NormSpec(beta, pp, q, flavor="whole")).value
        lhs = B(f1 * f2, p)
        rhs = B(f1, s1) * float(box.lp(f2, r1)) + float(box.lp(f1, s2)) * B(f2, r2)
    return ProductReport(lhs, rhs, lhs / rhs if rhs > 0 else 0.0)
