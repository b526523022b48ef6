"""Exact rational angles with Farey-separation and Liouville-budget queries.

All arithmetic is bit-exact via fractions.Fraction; nothing here touches
floating point except the explicit to_float conversion.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import RangeError

# q^q becomes too large to materialise for huge denominators; beyond this
# cap callers get the base-2 logarithm instead of the exact value.
LIOUVILLE_EXACT_BITS = 200_000_000


@dataclass(frozen=True)
class RationalAngle:
    """Reduced fraction p/q representing an angle in Q/Z, 0 <= p < q."""

    p: int
    q: int

    def __post_init__(self):
        if self.q <= 0:
            raise RangeError("denominator must be positive")
        f = Fraction(self.p, self.q) % 1
        object.__setattr__(self, "p", f.numerator)
        object.__setattr__(self, "q", f.denominator)

    @classmethod
    def from_fraction(cls, f: Fraction) -> "RationalAngle":
        return cls(f.numerator, f.denominator)

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.p, self.q)

    def __add__(self, other: "RationalAngle") -> "RationalAngle":
        return RationalAngle.from_fraction(self.fraction + other.fraction)

    def __sub__(self, other: "RationalAngle") -> "RationalAngle":
        return RationalAngle.from_fraction(self.fraction - other.fraction)

    def signed_gap(self, other: "RationalAngle") -> Fraction:
        """Exact representative of self - other in (-1/2, 1/2]."""
        d = (self.fraction - other.fraction) % 1
        return d if d <= Fraction(1, 2) else d - 1

    def circle_dist(self, other: "RationalAngle") -> Fraction:
        return abs(self.signed_gap(other))

    def to_float(self) -> float:
        return self.p / self.q if self.q.bit_length() <= 53 else float(self.fraction)

    def multiple(self, k: int) -> "RationalAngle":
        return RationalAngle.from_fraction(k * self.fraction % 1)

    def __str__(self) -> str:
        return f"{self.p}/{self.q}"

    @classmethod
    def parse(cls, text: str) -> "RationalAngle":
        p, q = text.strip().split("/")
        return cls(int(p), int(q))


def farey_separation(alpha: RationalAngle) -> Fraction:
    """min{|alpha - l/k| != 0 : 1 <= k <= q, l integer}, exactly.

    |p/q - l/k| = |pk - lq|/(qk) and for k < q the numerator is a nonzero
    residue, minimised to 1 exactly at k = p^-1 mod q and its mirror q - k.
    The overall minimum is therefore 1/(q max(k1, q - k1)); no enumeration,
    so huge denominators stay cheap.
    """
    q = alpha.q
    if q == 1:
        # nearest other integer angle is at distance 1
        return Fraction(1)
    k1 = pow(alpha.p, -1, q)
    return Fraction(1, q * max(k1, q - k1))


def liouville_budget(alpha: RationalAngle) -> Fraction:
    """2^-q q^-q for the reduced denominator q, exact."""
    q = alpha.q
    bits = q * (1 + max(q.bit_length(), 1))
    if bits > LIOUVILLE_EXACT_BITS:
        raise RangeError(
            f"liouville budget for q={q} needs ~{bits} bits; "
            "use liouville_budget_log2 instead")
    return Fraction(1, (2 **q) * (q **q))


def liouville_budget_log2(alpha: RationalAngle) -> float:
    """log2 of the budget, usable for any denominator size."""
    import math

    q = alpha.q
    return -q * (1.0 + math.log2(q))


def liouville_budget_exactly_computable(alpha: RationalAngle) -> bool:
    q = alpha.q
    return q * (1 + q.bit_length()) <= LIOUVILLE_EXACT_BITS


def gap_below_liouville(step: Fraction, alpha: RationalAngle) -> bool:
    """Exact check |step| < 2^-q q^-q without materialising q^q when avoidable.

    |a/b| < 1/(2^q q^q)  iff  |a| 2^q q^q < b.  When the right-hand side is
    too large to build, compare bit lengths first: the product needs roughly
    q(1+log2 q) bits, so a much longer b decides immediately.
    """
    if step == 0:
        return False
    a = abs(step.numerator)
    b = step.denominator
    q = alpha.q
    if liouville_budget_exactly_computable(alpha):
        return a * (2 **q) * (q **q) < b
    # bit-length bound: a * 2^q * q^q < 2^(bits(a) + q + q*bits(q)) <= b guarantees truth
    upper_bits = a.bit_length() + q + q * q.bit_length() + 2
    if b.bit_length() > upper_bits:
        return True
    lower_bits = (a.bit_length() - 1) + q + q * (q.bit_length() - 1)
    if b.bit_length() <= lower_bits:
        return False
    raise RangeError(
        f"liouville comparison for q={q} is on the bit-length boundary; "
        "exact product would be required")
