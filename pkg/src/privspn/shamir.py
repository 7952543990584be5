"""Polynomial (Shamir) secret sharing over Z_p.

Shares are evaluations of a degree-``threshold_degree`` polynomial at the
party indices 1..N. Any ``threshold_degree + 1`` shares determine the
secret; ``2*threshold_degree + 1 <= N`` is required so that the product of
two sharings can still be interpolated.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .errors import ConfigError, InputError, ThresholdError


class Share(NamedTuple):
    party: int
    value: int


@dataclass(frozen=True)
class SharingParams:
    n_parties: int
    threshold_degree: int | None = None

    def __post_init__(self):
        if self.n_parties < 1:
            raise ConfigError("need at least one party")
        if self.threshold_degree is None:
            object.__setattr__(self, "threshold_degree", (self.n_parties + 1) // 2 - 1)
        t = self.threshold_degree
        if t < 0 or 2 * t + 1 > self.n_parties:
            raise ConfigError(
                f"threshold degree {t} violates 2t+1 <= N for N={self.n_parties}"
            )

    @property
    def t(self) -> int:
        return self.threshold_degree


def eval_poly(coeffs: Sequence[int], x: int, p: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % p
    return acc


def make_shares(
    secret: int,
    params: SharingParams,
    rng: random.Random,
    p: int,
    coefficients: Sequence[int] | None = None,
) -> list[Share]:
    """Share ``secret``; ``coefficients`` (degree 1..t) overrides the random draw."""
    if not 0 <= secret < p:
        raise InputError(f"secret {secret} is not a residue mod p")
    t = params.t
    if coefficients is None:
        coefficients = [rng.randrange(p) for _ in range(t)]
    elif len(coefficients) != t:
        raise InputError(f"expected {t} coefficients, got {len(coefficients)}")
    coeffs = [secret, *coefficients]
    return [Share(i, eval_poly(coeffs, i, p)) for i in range(1, params.n_parties + 1)]


def lagrange_at_zero(points: Sequence[int], p: int) -> list[int]:
    """Coefficients c_i with f(0) = sum c_i f(x_i) for deg f < len(points)."""
    coeffs = []
    for i, xi in enumerate(points):
        num, den = 1, 1
        for j, xj in enumerate(points):
            if i != j:
                num = num * (-xj) % p
                den = den * (xi - xj) % p
        coeffs.append(num * pow(den, -1, p) % p)
    return coeffs


def recombination_vector(m: int, p: int) -> list[int]:
    """lambda_1..lambda_m such that f(0) = sum lambda_i f(i) whenever deg f <= m-1."""
    if m < 1:
        raise InputError("recombination vector needs m >= 1")
    return lagrange_at_zero(range(1, m + 1), p)


def reconstruct(shares: Sequence[Share], p: int, threshold_degree: int | None = None) -> int:
    """Interpolate f(0) from ``shares`` (all of them are used)."""
    xs = [s.party for s in shares]
    if len(set(xs)) != len(xs):
        raise InputError(f"duplicate party indices in {xs}")
    need = 1 if threshold_degree is None else threshold_degree + 1
    if len(shares) < need or not shares:
        raise ThresholdError(f"need {need} shares, got {len(shares)}")
    lam = lagrange_at_zero(xs, p)
    return sum(c * s.value for c, s in zip(lam, shares)) % p
