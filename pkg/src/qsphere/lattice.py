"""The lattice ``I_q = -q^N u q^Z``, its weighted counting measure, and graded functions on it.

A :class:`GradedFunction` is an even part on the whole lattice window plus
an odd part living only on points with ``|p| < 1``. The odd part simply has
no slots for ``|p| >= 1``, so that constraint is structural.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .errors import DomainError

__all__ = [
    "LatticePoint",
    "LatticeWindow",
    "GradedFunction",
    "PointFunctional",
    "parse_point",
    "enumerate_points",
    "haar_weight",
    "inner_product",
    "mu",
]


@dataclass(frozen=True, order=True)
class LatticePoint:
    """The point ``sign * q**k``; the negative branch needs ``k >= 1``."""

    sign: int
    k: int

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise DomainError("lattice sign must be +1 or -1", sign=self.sign)
        if self.sign == -1 and self.k < 1:
            raise DomainError("negative branch requires k ≥ 1", k=self.k)

    def value(self, q: float) -> float:
        return self.sign * q**self.k

    def weight(self, q: float) -> float:
        """Haar weight ``p**2``."""
        return q ** (2 * self.k)

    @property
    def inside_unit(self) -> bool:
        """True when ``|p| < 1``, i.e. the point carries an odd component."""
        return self.k >= 1

    def label(self) -> str:
        return f"{'+' if self.sign > 0 else '-'}q^{self.k}"

    def to_json(self):
        return {"sign": self.sign, "k": self.k}

    @classmethod
    def from_json(cls, obj):
        return cls(int(obj["sign"]), int(obj["k"]))


_POINT_RE = re.compile(r"^\s*([+-]?)\s*q(?:\s*\^\s*\{?\s*(-?\d+)\s*\}?)?\s*$")


def parse_point(text: str) -> LatticePoint:
    """Parse the literal form ``[+-]q^k`` (e.g. ``-q^1``, ``q^-3``); a bare ``q`` means ``k = 1``.

    >>> parse_point("-q^2")
    LatticePoint(sign=-1, k=2)
    """
    m = _POINT_RE.match(text)
    if not m:
        raise DomainError(f"cannot parse lattice point {text!r}; expected [+-]q^k", text=text)
    sign = -1 if m.group(1) == "-" else 1
    return LatticePoint(sign, int(m.group(2)) if m.group(2) is not None else 1)


@dataclass(frozen=True)
class LatticeWindow:
    """Truncation ``k_min <= k <= k_max`` (negative branch from ``max(1, k_min)``)."""

    k_min: int
    k_max: int

    def __post_init__(self):
        if self.k_min > self.k_max:
            raise DomainError("window needs k_min <= k_max", k_min=self.k_min, k_max=self.k_max)

    def __contains__(self, p: LatticePoint) -> bool:
        return self.k_min <= p.k <= self.k_max

    def to_json(self):
        return {"k_min": self.k_min, "k_max": self.k_max}


def enumerate_points(window: LatticeWindow, sign_filter: int | None = None, odd: bool = False):
    """Points of the window in the canonical order.

    Descending ``|p|`` (ascending ``k``), positive before negative at equal
    ``|p|``. With ``odd=True`` only points with ``|p| < 1`` are listed.
    """
    out = []
    for k in range(window.k_min, window.k_max + 1):
        for sign in (1, -1):
            if sign_filter is not None and sign != sign_filter:
                continue
            if sign == -1 and k < 1:
                continue
            if odd and k < 1:
                continue
            out.append(LatticePoint(sign, k))
    return out


def mu(z):
    """``(z + 1/z) / 2``."""
    if z == 0:
        raise DomainError("mu is undefined at 0")
    return (z + 1 / z) / 2


@dataclass
class GradedFunction:
    """Even/odd pair on a lattice window.

    Attributes
    ----------
    q : float
    window : LatticeWindow
    even : dict[LatticePoint, complex]
    odd : dict[LatticePoint, complex]
        Keys must satisfy ``|p| < 1``; absent keys mean zero.
    """

    q: float
    window: LatticeWindow
    even: dict = field(default_factory=dict)
    odd: dict = field(default_factory=dict)

    def __post_init__(self):
        for p in list(self.even) + list(self.odd):
            if p not in self.window:
                raise DomainError(f"point {p.label()} outside the window", point=p.label())
        for p in self.odd:
            if not p.inside_unit:
                raise DomainError(f"odd part must vanish at |p| >= 1, got {p.label()}", point=p.label())

    @classmethod
    def delta(cls, q, window, p: LatticePoint, parity: str = "even", value=1.0):
        if parity == "even":
            return cls(q, window, even={p: complex(value)})
        return cls(q, window, odd={p: complex(value)})

    def scaled_sum(self, alpha, other: "GradedFunction", beta) -> "GradedFunction":
        def combine(a, b):
            return {p: alpha * a.get(p, 0) + beta * b.get(p, 0) for p in set(a) | set(b)}

        return GradedFunction(self.q, self.window, combine(self.even, other.even), combine(self.odd, other.odd))

    def to_json(self):
        def rows(part):
            return [
                {"sign": p.sign, "k": p.k, "re": float(complex(v).real), "im": float(complex(v).imag)}
                for p, v in sorted(part.items(), key=lambda kv: (kv[0].k, -kv[0].sign))
            ]

        return {"q": self.q, "window": self.window.to_json(), "even": rows(self.even), "odd": rows(self.odd)}

    @classmethod
    def from_json(cls, obj):
        try:
            window = LatticeWindow(int(obj["window"]["k_min"]), int(obj["window"]["k_max"]))
            q = float(obj["q"])

            def part(key):
                out = {}
                for r in obj.get(key, []):
                    out[LatticePoint(int(r["sign"]), int(r["k"]))] = complex(float(r["re"]), float(r.get("im", 0.0)))
                return out

            return cls(q, window, part("even"), part("odd"))
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed graded function: {exc}") from exc

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class PointFunctional:
    """``delta_{p,+}`` (even) or ``delta_{p,-}`` (odd); the odd one is zero for ``|p| >= 1``."""

    p: LatticePoint
    parity: str = "even"

    @property
    def is_zero(self) -> bool:
        return self.parity == "odd" and not self.p.inside_unit

    def __call__(self, f: GradedFunction):
        if self.is_zero:
            return 0j
        part = f.even if self.parity == "even" else f.odd
        return part.get(self.p, 0) * self.p.weight(f.q)


def haar_weight(f: GradedFunction):
    """Weighted sum ``sum_p even(p) p**2``; the odd part integrates to zero."""
    return sum(v * p.weight(f.q) for p, v in f.even.items())


def inner_product(f: GradedFunction, h: GradedFunction):
    """``<f, h> = sum even_f conj(even_h) p^2 + sum odd_f conj(odd_h) p^2``."""
    if f.window != h.window or f.q != h.q:
        raise DomainError("inner product needs functions on the same window and q")
    total = 0j
    for part_f, part_h in ((f.even, h.even), (f.odd, h.odd)):
        for p, v in part_f.items():
            if p in part_h:
                total += v * complex(part_h[p]).conjugate() * p.weight(f.q)
    return total
