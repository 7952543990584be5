"""Arithmetic in Z_p and the fixed-point encoding of reals in [0, 1].

Field elements are plain Python ints holding the least non-negative
residue. Python integers are arbitrary precision, so products of two
89-bit residues never overflow and a single ``%`` after each operation is
all the reduction we need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

from sympy import isprime

from .errors import ConfigError, DomainError, ScaleError

MERSENNE_89 = 2**89 - 1  # 618970019642690137449562111


@dataclass(frozen=True)
class FieldParams:
    """Public arithmetic parameters agreed by every node."""

    p: int = MERSENNE_89
    d: int = 10**7
    precision_t: int = 24
    truncate_n: int = field(default=-1)

    def __post_init__(self):
        if self.truncate_n < 0:
            object.__setattr__(self, "truncate_n", math.ceil(math.log2(self.d)))

    def validate(self, n_parties: int = 1) -> "FieldParams":
        if self.d < 2:
            raise ConfigError(f"normalization factor d={self.d} must be >= 2")
        if not isprime(self.p):
            raise ConfigError(f"modulus {self.p} is not prime")
        if self.p <= self.d**2 + n_parties * self.d:
            raise ConfigError(
                f"modulus too small: need p > d^2 + N*d = {self.d**2 + n_parties * self.d}"
            )
        return self


def add(a: int, b: int, p: int) -> int:
    return (a + b) % p


def sub(a: int, b: int, p: int) -> int:
    return (a - b) % p


def mul(a: int, b: int, p: int) -> int:
    return (a * b) % p


def inv(a: int, p: int) -> int:
    a %= p
    if a == 0:
        raise DomainError("zero has no multiplicative inverse")
    return pow(a, -1, p)


_OPS = {"add": add, "sub": sub, "mul": mul}


def field_arith(a: int, b: int | None, op: str, p: int) -> int:
    """Dispatch one of ``add``, ``sub``, ``mul``, ``inv`` (``b`` ignored for inv)."""
    if op == "inv":
        return inv(a, p)
    try:
        return _OPS[op](a, b, p)
    except KeyError:
        raise ValueError(f"unknown field operation {op!r}") from None


def encode(x, d: int) -> int:
    """round(x*d), half-up. ``x`` may be float, Fraction or Decimal in [0, 1]."""
    if not 0 <= x <= 1:
        raise ScaleError(f"fixed-point input {x} outside [0, 1]")
    if isinstance(x, Fraction):
        num, den = x.numerator * d, x.denominator
        return (2 * num + den) // (2 * den)
    scaled = Decimal(x) * d
    return int(scaled.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def decode(raw: int, d: int) -> float:
    if raw > d:
        raise ScaleError(f"raw value {raw} exceeds d={d}; a truncation is missing")
    return raw / d


def to_wire(value: int) -> str:
    """Canonical serialization: decimal digits of the least residue."""
    return str(value)


def from_wire(text: str, p: int) -> int:
    value = int(text)
    if not 0 <= value < p:
        raise DomainError(f"wire value {text} is not a residue mod p")
    return value
