"""Picard iteration for the half-space Navier-Stokes system.

u^1 is the caloric Stokes solution of the data h and u^{m+1} = u^1 + V[-u^m (x) u^m],
where V is the Duhamel solution operator with a tensor forcing.  The trace
records the iterate and difference norms in the two working spaces

    ||.||_0 = L^{q0}(0, T; L^{p0})        ||.||_B = L^q(0, T; B^alpha_{pq})

and the smallness bookkeeping is evaluated with constants measured as
maximal observed ratios.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.integrate import simpson

from .besov import NormSpec, besov_norm, bochner_norm, spatial_norms
from .data import DataSpec, make_initial_data
from .exponents import DerivedExponents
from .green import (PressureParts, _caloric_modes, _st, duhamel_solve, no_slip_residual,
                    solenoidal_residual, stokes_solve, weak_form_residual)
from .grid import Field, HalfSpaceGrid, SpaceTimeField, lp_norm

log = logging.getLogger(__name__)

# iterations whose difference norm sits below this fraction of ||u^1||_0 are
# dominated by roundoff and excluded from the constant measurements
ROUNDOFF_FLOOR = 5e-16


# ---------------------------------------------------------------------------
# norms


@dataclass(frozen=True)
class WorkingNorms:
    """The norms of the iteration for one exponent family."""

    exps: DerivedExponents
    n_t: int = 48

    @property
    def alpha(self) -> float:
        return float(self.exps.base.alpha)

    @property
    def besov_spec(self) -> NormSpec:
        b = self.exps.base
        return NormSpec(float(b.alpha), float(b.p), float(b.q), n_t=self.n_t)

    @property
    def data_spec(self) -> NormSpec:
        """B^{-2/q0}_{p0 q0, 0}; equals the critical data space B^{alpha - 2/q}_{pq, 0} in scaling."""
        e = self.exps
        return NormSpec(float(-2 / e.q0), float(e.p0), float(e.q0), n_t=self.n_t)

    @property
    def data_spec_besov(self) -> NormSpec:
        """B^{alpha - 2/q}_{pq, 0}: the data norm paired with the L^q B^alpha bound."""
        b = self.exps.base
        return NormSpec(float(b.alpha - 2 / b.q), float(b.p), float(b.q), n_t=self.n_t)

    def lebesgue(self, u: SpaceTimeField) -> float:
        return float(bochner_norm(u, float(self.exps.q0), float(self.exps.p0)))

    def besov(self, u: SpaceTimeField) -> float:
        return float(bochner_norm(u, float(self.exps.base.q), self.besov_spec))

    def data(self, h: Field, besov: bool = False) -> float:
        if not np.any(h.values):
            return 0.0
        return besov_norm(h, self.data_spec_besov if besov else self.data_spec).value

    def windowed_lebesgue(self, u: SpaceTimeField, lo: int, hi: int) -> float:
        """L^{q0}(t_lo, t_hi; L^{p0}) on the node range lo..hi (node -1 means t = 0)."""
        g = u.grid
        q0 = float(self.exps.q0)
        vals = np.array([float(lp_norm(g, u.values[j], float(self.exps.p0))) for j in range(len(g.t))])
        tt, vv = g.t, vals
        if lo < 0:
            _, allv = u.with_initial()
            tt = np.concatenate([[0.0], g.t])
            vv = np.concatenate([[float(lp_norm(g, allv[0], float(self.exps.p0)))], vals])
            lo, hi = lo + 1, hi + 1
        seg = slice(lo, hi + 1)
        if hi - lo < 1:
            return 0.0
        return float(simpson(vv[seg] ** q0, x=tt[seg])) ** (1 / q0)


# ---------------------------------------------------------------------------
# trace


@dataclass
class IterationTrace:
    """Per-iteration norms (index m - 1 holds u^m and U^m = u^{m+1} - u^m)."""

    u_leb: list = field(default_factory=list)
    u_bes: list = field(default_factory=list)
    U_leb: list = field(default_factory=list)
    U_bes: list = field(default_factory=list)
    no_slip: list = field(default_factory=list)
    solenoidal: list = field(default_factory=list)
    data_norm: float = 0.0
    data_norm_besov: float = 0.0
    converged: bool = False
    diverged: bool = False
    message: str = ""

    @property
    def iterations(self) -> int:
        return len(self.u_leb)

    @property
    def ratios(self) -> list:
        """||U^m||_0 / ||U^{m-1}||_0."""
        U = self.U_leb
        return [U[m] / U[m - 1] if U[m - 1] > 0 else 0.0 for m in range(1, len(U))]

    def rows(self) -> list[dict]:
        out = []
        r = [float("nan")] + self.ratios
        for m in range(self.iterations):
            out.append({
                "m": m + 1,
                "u_lqlp": self.u_leb[m], "u_besov": self.u_bes[m],
                "U_lqlp": self.U_leb[m] if m < len(self.U_leb) else float("nan"),
                "U_besov": self.U_bes[m] if m < len(self.U_bes) else float("nan"),
                "ratio": r[m] if m < len(r) else float("nan"),
                "no_slip": self.no_slip[m], "solenoidal": self.solenoidal[m],
            })
        return out


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("k...,i...->ki...", a, b)


def nonlinear_flux(u: SpaceTimeField, w: SpaceTimeField | None = None) -> SpaceTimeField:
    """F = -u (x) w as a space-time tensor (with its t = 0 value)."""
    w = u if w is None else w
    _, ua = u.with_initial()
    _, wa = w.with_initial()
    F = -np.einsum("tk...,ti...->tki...", ua, wa)
    return SpaceTimeField(u.grid, F[1:], F[0])


def _zero(grid: HalfSpaceGrid) -> SpaceTimeField:
    z = np.zeros((len(grid.t), grid.n) + grid.shape)
    return SpaceTimeField(grid, z, z[0])


def caloric_part(h: Field) -> SpaceTimeField:
    g = h.grid
    v, _ = _caloric_modes(g, h.values)
    return _st(g, v, h.values)


def picard_step(v: SpaceTimeField, u: SpaceTimeField, rule: dict | None = None) -> SpaceTimeField:
    """v + V[-u (x) u]."""
    r = duhamel_solve(nonlinear_flux(u), "tensor", rule=rule)
    return v + r.V


def run_iteration(h: Field, exps: DerivedExponents, grid: HalfSpaceGrid | None = None,
                  maxiter: int = 30, stop_tol: float = 1e-15, rule: dict | None = None,
                  first: SpaceTimeField | None = None, norms: WorkingNorms | None = None,
                  blowup: float = 1e6, keep: bool = False):
    """Run the iteration; returns (final iterate, trace) or (final, trace, iterates) with ``keep``.

    ``first`` replaces the first iterate (used by the uniqueness experiment).
    Divergence (three consecutive growths of ||U^m||_0, a non-finite norm, or
    growth beyond ``blowup`` times ||u^1||_0) is recorded and stops the run.
    Reaching ``maxiter`` after any difference ratio >= 1 is also reported as
    divergence (failed contraction).
    """
    grid = grid or h.grid
    if h.grid is not grid:
        raise ValueError("h must live on the iteration grid")
    norms = norms or WorkingNorms(exps)
    trace = IterationTrace(data_norm=norms.data(h), data_norm_besov=norms.data(h, besov=True))
    v = caloric_part(h)
    u = v if first is None else first
    iterates = [u] if keep else None

    def record(w):
        trace.u_leb.append(norms.lebesgue(w))
        trace.u_bes.append(norms.besov(w))
        trace.no_slip.append(no_slip_residual(w))
        trace.solenoidal.append(solenoidal_residual(w))

    record(u)
    scale = trace.u_leb[0]
    if scale == 0:
        trace.converged = True
        trace.message = "zero data"
        out = (u, trace, iterates) if keep else (u, trace)
        return out
    growth = 0
    for m in range(maxiter):
        nxt = picard_step(v, u, rule)
        diff = nxt - u
        dl, db = norms.lebesgue(diff), norms.besov(diff)
        trace.U_leb.append(dl)
        trace.U_bes.append(db)
        record(nxt)
        u = nxt
        if keep:
            iterates.append(u)
        log.info("picard m=%d |U|_0=%.3e |u|_0=%.3e", m + 1, dl, trace.u_leb[-1])
        if not (math.isfinite(dl) and math.isfinite(trace.u_leb[-1])) or trace.u_leb[-1] > blowup * scale:
            trace.diverged = True
            trace.message = f"norm blow-up at iteration {m + 2}"
            break
        growth = growth + 1 if len(trace.U_leb) > 1 and dl > trace.U_leb[-2] else 0
        if growth >= 3:
            trace.diverged = True
            trace.message = f"difference norm grew over 3 consecutive iterations (m={m + 2})"
            break
        if dl < stop_tol * scale:
            trace.converged = True
            trace.message = f"converged after {m + 1} steps"
            break
    else:
        if any(r >= 1 for r in trace.ratios):
            trace.diverged = True
            trace.message = "no contraction: maxiter reached after a ratio >= 1"
        else:
            trace.message = "maxiter reached"
    return (u, trace, iterates) if keep else (u, trace)


# ---------------------------------------------------------------------------
# smallness bookkeeping


@dataclass(frozen=True)
class Monitor:
    constants: dict
    verdicts: dict
    contraction: dict

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())


def _safe_max(xs) -> float:
    xs = [x for x in xs if math.isfinite(x)]
    return max(xs) if xs else 0.0


def longest_decay_run(ratios: list) -> tuple[int, float]:
    """Longest run of consecutive ratios < 1 and the largest ratio within it."""
    best, best_max, cur, cur_max = 0, 0.0, 0, 0.0
    for r in ratios:
        if r < 1:
            cur += 1
            cur_max = max(cur_max, r)
            if cur > best:
                best, best_max = cur, cur_max
        else:
            cur, cur_max = 0, 0.0
    return best, best_max


def smallness_monitor(trace: IterationTrace, eta: float = 1e-3, tiny: float = 1e-9) -> Monitor:
    """Measured constants and the smallness/contraction verdicts.

    N0 and N are the data norms entering the two uniform bounds and
    c1 = max ||u^{m+1}||_0 / (N0 + ||u^m||_0^2), ||u^{m+1}||_B / (N + ||u^m||_0 ||u^m||_B);
    c5 = 2 max ||U^m||_0 / ((||u^{m-1}||_0 + ||u^m||_0) ||U^{m-1}||_0);
    c6 = max ||U^m||_B / (M ||U^{m-1}||_0 + M0 ||U^{m-1}||_B).
    M0 and M are the smallest admissible bounds: the observed maxima, raised
    to 2 c1 N0 and 2 c1 N when those are larger.
    """
    ul, ub, Ul, Ub = trace.u_leb, trace.u_bes, trace.U_leb, trace.U_bes
    if not ul or ul[0] == 0:
        keys = ("M0 <= 1/(2c1)", "N0 < M0/(2c1)", "2c1N <= M", "c5M0 < 1", "c6M0 < 1", "c6 > c5",
                "geometric decay")
        return Monitor({}, {k: True for k in keys}, {})
    if len(ul) < 2:
        raise ValueError("smallness monitor needs at least two iterates")
    N0, N = trace.data_norm, trace.data_norm_besov
    floor = ROUNDOFF_FLOOR * ul[0]
    c1 = 0.0
    for m in range(len(ul) - 1):
        c1 = max(c1, ul[m + 1] / (N0 + ul[m] ** 2), ub[m + 1] / (N + ul[m] * ub[m]))
    M0 = max(max(ul), 2 * c1 * N0) * (1 + tiny)
    M = max(max(ub), 2 * c1 * N) * (1 + tiny)
    c = []
    c6r = []
    for m in range(1, len(Ul)):
        if Ul[m - 1] <= floor or Ul[m] <= floor:
            continue
        c.append(Ul[m] / ((ul[m - 1] + ul[m]) * Ul[m - 1]))
        c6r.append(Ub[m] / (M * Ul[m - 1] + M0 * Ub[m - 1]))
    c5 = 2 * _safe_max(c)
    c6_measured = _safe_max(c6r)
    c6 = c6_measured if c6_measured > c5 else c5 * (1 + eta)
    A = c6 * M / ((c6 - c5) * M0) if c6 > c5 else float("inf")
    combined = [Ub[m] + A * Ul[m] for m in range(len(Ul))]
    comb_ratios = [combined[m] / combined[m - 1] for m in range(1, len(combined))
                   if Ul[m] > floor and Ul[m - 1] > floor]
    leb_ratios = [r for m, r in enumerate(trace.ratios) if Ul[m] > floor and Ul[m + 1] > floor]
    run, run_max = longest_decay_run(leb_ratios)
    constants = {"c1": c1, "c5": c5, "c6": c6, "c6_measured": c6_measured, "N0": N0, "N": N,
                 "M0": M0, "M": M, "A": A, "c0": ul[0] / N0 if N0 else 0.0,
                 "c2": ub[0] / N if N else 0.0}
    verdicts = {
        "M0 <= 1/(2c1)": M0 <= 1 / (2 * c1),
        "N0 < M0/(2c1)": N0 < M0 / (2 * c1),
        "2c1N <= M": 2 * c1 * N <= M,
        "c5M0 < 1": c5 * M0 < 1,
        "c6M0 < 1": c6 * M0 < 1,
        "c6 > c5": c6 > c5,
        "geometric decay": bool(comb_ratios) and max(comb_ratios) < 1 and not trace.diverged,
    }
    contraction = {"lebesgue_run": run, "lebesgue_max_ratio": run_max,
                   "max_observed_ratio": _safe_max(leb_ratios), "c5M0": c5 * M0,
                   "c6M0": c6 * M0, "combined_max_ratio": _safe_max(comb_ratios)}
    return Monitor(constants, verdicts, contraction)


def smallness_amplitude(spec: DataSpec, grid: HalfSpaceGrid, exps: DerivedExponents,
                        margin: float = 0.7) -> DataSpec:
    """Rescale the data so the smallness verdicts hold with room to spare.

    For small data c1 is the linear constant max(||u^1||_0 / N0, ||u^1||_B / N)
    and M0 = 2 c1 N0, so M0 <= 1/(2 c1) reads N0 <= 1/(4 c1^2); the data is
    scaled to ``margin`` times that bound.
    """
    h = make_initial_data(spec, grid)
    norms = WorkingNorms(exps)
    v = caloric_part(h)
    N0, N = norms.data(h), norms.data(h, besov=True)
    if N0 == 0:
        raise ValueError("cannot calibrate zero data")
    c1 = max(norms.lebesgue(v) / N0, norms.besov(v) / N)
    from dataclasses import replace
    return replace(spec, amplitude=spec.amplitude * margin / (4 * c1 ** 2 * N0))


def calibrate_amplitude(spec: DataSpec, grid: HalfSpaceGrid, exps: DerivedExponents,
                        target_ratio: float = 0.25, probe_steps: int = 3, rule: dict | None = None
                        ) -> DataSpec:
    """Rescale the data amplitude so the measured contraction ratio is near ``target_ratio``.

    The difference ratio is linear in the amplitude to leading order.
    """
    h = make_initial_data(spec, grid)
    _, tr = run_iteration(h, exps, grid, maxiter=probe_steps, stop_tol=0.0, rule=rule)
    r = tr.ratios[-1] if tr.ratios else 0.0
    if not r > 0:
        raise ValueError("cannot calibrate: no measurable contraction")
    from dataclasses import replace
    return replace(spec, amplitude=spec.amplitude * target_ratio / r)


# ---------------------------------------------------------------------------
# bilinear estimate


def bilinear_norm(u: SpaceTimeField, w: SpaceTimeField, exps: DerivedExponents,
                  n_t: int = 48) -> dict:
    """||u (x) w||_{L^{q1} B^beta_{p1 q}} against ||u||_{L^q B^alpha_{pq}} ||w||_{L^{q0} L^{p0}}.

    Also reports the intermediate ||u||_{L^q B^beta_{p2 q}} factor.
    """
    b = exps.base
    g = u.grid
    prod = SpaceTimeField(g, np.einsum("tk...,ti...->tki...", u.values, w.values))
    lhs = float(bochner_norm(prod, float(exps.q1), NormSpec(float(exps.beta), float(exps.p1), float(b.q), n_t=n_t)))
    wn = WorkingNorms(exps, n_t)
    ub = wn.besov(u)
    wl = wn.lebesgue(w)
    mid = float(bochner_norm(u, float(b.q), NormSpec(float(exps.beta), float(exps.p2), float(b.q), n_t=n_t)))
    rhs = ub * wl
    return {"value": lhs, "rhs": rhs, "ratio": lhs / rhs if rhs > 0 else 0.0,
            "intermediate": mid * wl}


# ---------------------------------------------------------------------------
# weak limit and uniqueness


def weak_limit_check(u: SpaceTimeField, h: Field, testset=None) -> dict:
    """Variational residual of u with the nonlinear flux -u (x) u."""
    if not np.any(u.values) and not np.any(h.values):
        return {"residual": 0.0, "tests": []}
    return weak_form_residual(u, h, "nonlinear", testset)


def perturbation_field(grid: HalfSpaceGrid, seed: int, rate: float = 1.0) -> SpaceTimeField:
    """phi(t) W(x): a random div-free roll W vanishing at the wall, phi(t) = e^{-rate t}."""
    rng = np.random.default_rng(seed)
    L = grid.L[0]
    spec = DataSpec(center=tuple(rng.uniform(-L / 3, L / 3, grid.n - 1)),
                    width=float(rng.uniform(0.6, 1.0)), offset=float(rng.uniform(0.8, 1.4)),
                    depth=float(rng.uniform(0.6, 0.8)))
    W = make_initial_data(spec, grid).values
    W = W / (float(np.max(np.abs(W))) or 1.0)
    phi = np.exp(-rate * grid.t)
    return SpaceTimeField(grid, phi.reshape((-1,) + (1,) * W.ndim) * W[None], W)


def _windows(norms: WorkingNorms, u: SpaceTimeField, limit: float) -> list[tuple[int, int]]:
    """Consecutive node windows (lo, hi) on which the windowed ||u||_0 stays below ``limit``."""
    J = len(u.grid.t)
    out = []
    lo = -1
    while lo < J - 1:
        hi = lo + 1
        while hi + 1 < J and norms.windowed_lebesgue(u, lo, hi + 1) < limit:
            hi += 1
        out.append((lo, hi))
        lo = hi
    return out


@dataclass(frozen=True)
class UniquenessReport:
    epsilon: float
    perturbation_scale: float
    windows: list
    distances: list
    final_distance: float
    base_trace: IterationTrace
    perturbed_trace: IterationTrace

    @property
    def relative(self) -> float:
        return self.final_distance / self.perturbation_scale if self.perturbation_scale > 0 else 0.0

    @property
    def max_window_relative(self) -> float:
        if self.perturbation_scale == 0:
            return 0.0
        return max(self.distances, default=0.0) / self.perturbation_scale


def uniqueness_experiment(h: Field, exps: DerivedExponents, perturbation_seed: int = 0,
                          epsilon: float = 1e-3, maxiter: int = 40, stop_tol: float = 1e-15,
                          rule: dict | None = None, perturbation: SpaceTimeField | None = None,
                          base: tuple | None = None, no_slip_tol: float = 1e-6) -> UniquenessReport:
    """Rerun the iteration from a perturbed first iterate and compare limits window by window.

    The perturbation is epsilon * ||u^1||_0-scaled; windows are chosen so the
    windowed ||u||_0 of the base limit stays below 1/c5.
    """
    g = h.grid
    norms = WorkingNorms(exps)
    u, tr = base if base is not None else run_iteration(h, exps, g, maxiter, stop_tol, rule)
    if not tr.converged:
        raise ValueError("uniqueness experiment needs a converged base run")
    pert = perturbation if perturbation is not None else perturbation_field(g, perturbation_seed)
    _, pa = pert.with_initial()
    mag = float(np.max(np.abs(pa))) or 1.0
    wall = float(np.max(np.abs(pa[..., 0]))) / mag
    if wall > no_slip_tol:
        raise ValueError(f"perturbation violates no-slip (relative wall value {wall:.2e})")
    v1 = caloric_part(h)
    pn = norms.lebesgue(pert)
    scale_u = tr.u_leb[0]
    eps_eff = 0.0 if pn == 0 or epsilon == 0 else epsilon * scale_u / pn
    delta = pert * eps_eff
    first = v1 + delta
    up, trp = run_iteration(h, exps, g, maxiter, stop_tol, rule, first=first, norms=norms)
    diff = up - u
    mon = smallness_monitor(tr)
    c5 = mon.constants.get("c5", 0.0)
    limit = 1 / c5 if c5 > 0 else float("inf")
    wins = _windows(norms, u, limit)
    dists = [norms.windowed_lebesgue(diff, lo, hi) for lo, hi in wins]
    return UniquenessReport(epsilon, norms.lebesgue(delta), wins, dists, norms.lebesgue(diff), tr, trp)


# ---------------------------------------------------------------------------
# pressure


@dataclass(frozen=True)
class PressureReport:
    parts: PressureParts
    p1: float
    Pj: list
    P0: float
    rhs: float

    @property
    def total(self) -> float:
        return self.p1 + sum(self.Pj) + self.P0

    @property
    def ratio(self) -> float:
        return self.total / self.rhs if self.rhs > 0 else 0.0


def pressure_for_solution(u: SpaceTimeField, h: Field, exps: DerivedExponents, n_t: int = 48,
                          rule: dict | None = None) -> PressureReport:
    """Pressure parts of the solution and their norms.

    p1 in L^q B^{alpha+1}_{pq}, P_j in L^q B^alpha_{pq}, P0 in L^{q1} B^beta_{p1 q},
    all in the restriction flavor; rhs = ||h|| + ||u||_0 ||u||_B.
    """
    b = exps.base
    if not b.alpha > Fraction(1) / b.p:
        raise ValueError(f"pressure bounds need alpha > 1/p (alpha={b.alpha}, 1/p={1 / b.p})")
    g = u.grid
    norms = WorkingNorms(exps, n_t)
    if not np.any(u.values) and not np.any(h.values):
        z = SpaceTimeField(g, np.zeros((len(g.t),) + g.shape))
        return PressureReport(PressureParts(z, [z] * (g.n - 1), z), 0.0, [0.0] * (g.n - 1), 0.0, 0.0)
    _, parts = stokes_solve(h, nonlinear_flux(u), rule=rule)
    q, a, p = float(b.q), float(b.alpha), float(b.p)
    flavor = "halfspace_restriction"
    n_p1 = float(bochner_norm(parts.p1, q, NormSpec(a + 1, p, q, flavor=flavor, n_t=n_t)))
    n_Pj = [float(bochner_norm(P, q, NormSpec(a, p, q, flavor=flavor, n_t=n_t))) for P in parts.Pj]
    n_P0 = float(bochner_norm(parts.P0, float(exps.q1),
                              NormSpec(float(exps.beta), float(exps.p1), q, flavor=flavor, n_t=n_t)))
    rhs = norms.data(h) + norms.lebesgue(u) * norms.besov(u)
    return PressureReport(parts, n_p1, n_Pj, n_P0, rhs)
