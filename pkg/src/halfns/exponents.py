"""Scaling-critical exponent algebra.

Every quantity here is an exact :class:`fractions.Fraction`; floats only
appear when a numerical module asks for them via ``float(...)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Union

Rational = Union[int, Fraction, str]


class ExponentError(ValueError):
    """Raised for inadmissible exponent input."""


def _frac(x: Rational) -> Fraction:
    if isinstance(x, float):
        raise TypeError("exponents must be exact (int, Fraction or 'a/b' string)")
    return Fraction(x)


@dataclass(frozen=True)
class ExponentTuple:
    n: int
    p: Fraction
    q: Fraction
    alpha: Fraction

    @property
    def in_range(self) -> bool:
        return 0 < self.alpha < 2

    @property
    def n_over_p(self) -> Fraction:
        return Fraction(self.n) / self.p

    @property
    def two_over_q(self) -> Fraction:
        return Fraction(2) / self.q


@dataclass(frozen=True)
class DerivedExponents:
    base: ExponentTuple
    eps1: Fraction
    eps2: Fraction
    p0: Fraction
    q0: Fraction
    p1: Fraction
    q1: Fraction
    p2: Fraction
    beta: Fraction

    def identities(self) -> dict[str, tuple[Fraction, Fraction]]:
        """All defining and derived relations as (lhs, rhs) pairs."""
        t = self.base
        n = Fraction(t.n)
        return {
            "2/q1 = 2/q + eps1": (2 / self.q1, 2 / t.q + self.eps1),
            "n/p1 = n/p + eps2": (n / self.p1, n / t.p + self.eps2),
            "n/p0 = 1 - eps1": (n / self.p0, 1 - self.eps1),
            "2/q0 = eps1": (2 / self.q0, self.eps1),
            "n/p2 = -1 + eps1 + eps2 + n/p": (n / self.p2, -1 + self.eps1 + self.eps2 + n / t.p),
            "beta = alpha - 1 + eps1 + eps2": (self.beta, t.alpha - 1 + self.eps1 + self.eps2),
            "n/p0 + 2/q0 = 1": (n / self.p0 + 2 / self.q0, Fraction(1)),
            "1/p1 = 1/p2 + 1/p0": (1 / self.p1, 1 / self.p2 + 1 / self.p0),
            "beta - n/p2 = alpha - n/p": (self.beta - n / self.p2, t.alpha - n / t.p),
            "1/q1 = 1/q + 1/q0": (1 / self.q1, 1 / t.q + 1 / self.q0),
            "beta = alpha-1+n(1/p1-1/p)+2/q1-2/q": (
                self.beta,
                t.alpha - 1 + n * (1 / self.p1 - 1 / t.p) + 2 / self.q1 - 2 / t.q,
            ),
        }

    def orderings(self) -> dict[str, bool]:
        t = self.base
        out = {
            "1 < p1 < p < p2": 1 < self.p1 < t.p < self.p2,
            "1 < q1 < q": 1 < self.q1 < t.q,
            "1 < p0, q0": self.p0 > 1 and self.q0 > 1,
            "0 < beta < alpha": 0 < self.beta < t.alpha,
        }
        if t.alpha > 1:
            out["beta > 1"] = self.beta > 1
        return out

    def as_rows(self) -> list[tuple[str, Fraction]]:
        return [
            ("n", Fraction(self.base.n)), ("p", self.base.p), ("q", self.base.q),
            ("alpha", self.base.alpha), ("eps1", self.eps1), ("eps2", self.eps2),
            ("p0", self.p0), ("q0", self.q0), ("p1", self.p1), ("q1", self.q1),
            ("p2", self.p2), ("beta", self.beta),
        ]


def validate_tuple(n: int, p: Rational, q: Rational) -> ExponentTuple:
    """Build the tuple with alpha = n/p + 2/q - 1.

    An alpha outside (0, 2) is reported through ``in_range``, not raised.
    """
    if int(n) != n or n < 2:
        raise ExponentError(f"dimension must be an integer >= 2, got {n}")
    p, q = _frac(p), _frac(q)
    if p <= 1:
        raise ExponentError(f"p must exceed 1, got {p}")
    if q <= 1:
        raise ExponentError(f"q must exceed 1, got {q}")
    alpha = Fraction(int(n)) / p + 2 / q - 1
    return ExponentTuple(int(n), p, q, alpha)


def classify_region(t: ExponentTuple) -> str:
    """Region label of the point (n/p, 2/q).

    Lines: alpha=0 (n/p + 2/q = 1), alpha=2 (n/p + 2/q = 3), n/p = 1, 2/q = 2.
    Any point on one of them is "boundary".
    """
    x, y = t.n_over_p, t.two_over_q
    s = x + y
    if x == 1 or s == 1 or s == 3 or y == 2:
        return "boundary"
    if x < 1 and s < 1:
        return "I"
    if x < 1 and y < 2 and 1 < s < 3:
        return "III"
    if x > 1 and 1 < s < 3:
        return "II"
    return "outside"


def _bounds(t: ExponentTuple) -> tuple[Fraction, Fraction, Fraction]:
    """(eps1 upper bound, lower and upper bound of eps1 + eps2)."""
    a = t.alpha
    e1_max = min(Fraction(1), 2 - t.two_over_q)
    if a < 1:
        lo = max(Fraction(0), 1 - a, 1 - t.n_over_p)
        hi = min(Fraction(1), 2 - a)
    else:
        lo = max(Fraction(0), 2 - a, 1 - t.n_over_p)
        hi = Fraction(1)
    return e1_max, lo, hi


def check_epsilons(t: ExponentTuple, eps1: Rational, eps2: Rational) -> None:
    e1, e2 = _frac(eps1), _frac(eps2)
    e1_max, lo, hi = _bounds(t)
    if not 0 < e1 < e1_max:
        raise ExponentError(f"eps1={e1} violates 0 < eps1 < {e1_max}")
    if not 0 < e2 < 1:
        raise ExponentError(f"eps2={e2} violates 0 < eps2 < 1")
    if not lo < e1 + e2 < hi:
        raise ExponentError(f"eps1+eps2={e1 + e2} violates {lo} < eps1+eps2 < {hi}")
    if t.n_over_p + e2 >= t.n:
        raise ExponentError(f"n/p + eps2 = {t.n_over_p + e2} must stay below n (p1 > 1)")


def choose_epsilons(t: ExponentTuple, strategy: str = "midpoint",
                    explicit: tuple[Rational, Rational] | None = None) -> tuple[Fraction, Fraction]:
    if not t.in_range:
        raise ExponentError(f"alpha={t.alpha} outside (0, 2)")
    if strategy == "explicit":
        if explicit is None:
            raise ExponentError("explicit strategy needs (eps1, eps2)")
        e1, e2 = _frac(explicit[0]), _frac(explicit[1])
        check_epsilons(t, e1, e2)
        return e1, e2
    if strategy != "midpoint":
        raise ExponentError(f"unknown strategy {strategy!r}")
    e1_max, lo, hi = _bounds(t)
    if lo >= hi:
        raise ExponentError(f"empty admissible interval for eps1+eps2: ({lo}, {hi})")
    s = (lo + hi) / 2
    e1 = s / 2 if s / 2 < e1_max else e1_max / 2
    e2 = s - e1
    # keep n/p1 = n/p + eps2 below n by shifting weight onto eps1
    room = t.n - t.n_over_p
    if e2 >= room:
        e2 = room / 2
        e1 = s - e2
    check_epsilons(t, e1, e2)
    return e1, e2


def derive_exponents(t: ExponentTuple, eps1: Rational, eps2: Rational) -> DerivedExponents:
    e1, e2 = _frac(eps1), _frac(eps2)
    check_epsilons(t, e1, e2)
    n = Fraction(t.n)
    d = DerivedExponents(
        base=t, eps1=e1, eps2=e2,
        q0=2 / e1,
        p0=n / (1 - e1),
        q1=2 / (2 / t.q + e1),
        p1=n / (n / t.p + e2),
        p2=n / (-1 + e1 + e2 + n / t.p),
        beta=t.alpha - 1 + e1 + e2,
    )
    bad = [k for k, (lhs, rhs) in d.identities().items() if lhs != rhs]
    bad += [k for k, ok in d.orderings().items() if not ok]
    if bad:
        raise ExponentError(f"exponent self-check failed: {bad}")
    return d


def exponent_family(n: int, p: Rational, q: Rational, eps: tuple[Rational, Rational] | None = None
                    ) -> DerivedExponents:
    t = validate_tuple(n, p, q)
    if eps is None:
        e1, e2 = choose_epsilons(t)
    else:
        e1, e2 = choose_epsilons(t, "explicit", eps)
    return derive_exponents(t, e1, e2)
