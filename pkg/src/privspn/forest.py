"""Forests of K structures, their local weighting schemes and private weight aggregation."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DomainError, InputError
from .field import encode
from .mpc import FIXED_D, Session, SharedValue
from .spn import (LL_FLOOR, Structure, build_ratspn, deserialize, generate_region_graph, log_values,
                  serialize)

SCHEMES = ("uniform", "rank", "loglik", "loglik_squared")


@dataclass
class Forest:
    structures: list[Structure]
    weights: list[float] = field(default_factory=list)  # plaintext weights, baselines only
    weight_shares: list[SharedValue] = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.structures)

    @property
    def num_sum_params(self) -> int:
        return sum(s.num_sum_params for s in self.structures)

    @property
    def num_leaves(self) -> int:
        return sum(s.num_leaves for s in self.structures)


def generate_forest(num_vars: int, K: int, D: int, R: int = 1, S: int = 1, I: int = 2,
                    seed: int = 0) -> Forest:
    """K structures drawn from one public seed, so every party can rebuild them."""
    if K < 1:
        raise InputError("a forest needs at least one structure")
    rng = np.random.default_rng(seed)
    structures = [build_ratspn(generate_region_graph(num_vars, D, R, rng), S, I) for _ in range(K)]
    return Forest(structures, [1 / K] * K)


def serialize_forest(forest: Forest, params: bool = False) -> str:
    return "".join(f"structure {k}\n" + serialize(s, params) for k, s in enumerate(forest.structures))


def parse_forest(text: str) -> Forest:
    blocks: list[list[str]] = []
    for line in text.splitlines(keepends=True):
        if line.startswith("structure "):
            blocks.append([])
        elif blocks:
            blocks[-1].append(line)
    if not blocks:
        raise InputError("no structures in forest text")
    structures = [deserialize("".join(b)) for b in blocks]
    return Forest(structures, [1 / len(structures)] * len(structures))


def forest_hash(forest: Forest) -> str:
    return hashlib.sha256(serialize_forest(forest).encode()).hexdigest()


def forest_log_values(forest: Forest, rows, weights=None) -> np.ndarray:
    """log sum_k s_k P_k(x) per row."""
    weights = forest.weights if weights is None else weights
    with np.errstate(divide="ignore"):
        terms = np.stack([math.log(w) + log_values(s, rows)[-1] if w > 0 else
                          np.full(len(np.atleast_2d(rows)), -np.inf)
                          for w, s in zip(weights, forest.structures)])
    top = terms.max(axis=0)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(terms - safe).sum(axis=0))


def forest_log_likelihood(forest: Forest, rows, weights=None) -> float:
    rows = np.asarray(rows)
    if rows.size == 0:
        raise InputError("log-likelihood of an empty dataset")
    return float(np.mean(np.maximum(forest_log_values(forest, rows, weights), math.log(LL_FLOOR))))


def ranks(lls) -> list[int]:
    """Rank 1..K by ascending log-likelihood; ties go to the lower index first."""
    order = sorted(range(len(lls)), key=lambda k: (lls[k], k))
    out = [0] * len(lls)
    for r, k in enumerate(order, start=1):
        out[k] = r
    return out


def local_weights(lls, scheme: str = "rank") -> list[float]:
    lls = [float(x) for x in lls]
    if not lls:
        raise InputError("no structures to weight")
    if any(not math.isfinite(x) for x in lls):
        raise DomainError("validation log-likelihoods must be finite")
    if scheme == "uniform":
        raw = [1.0] * len(lls)
    elif scheme == "rank":
        raw = [float(r) for r in ranks(lls)]
    elif scheme in ("loglik", "loglik_squared"):
        if any(x == 0 for x in lls):
            raise DomainError("a log-likelihood of exactly 0 cannot be weighted by its reciprocal")
        power = 1 if scheme == "loglik" else 2
        raw = [1 / abs(x) ** power for x in lls]
    else:
        raise InputError(f"unknown weighting scheme {scheme!r}; expected one of {SCHEMES}")
    total = sum(raw)
    return [x / total for x in raw]


def weight_contributions(weights, n_parties: int, d: int) -> list[int]:
    """Fixed-point encodings of s_k / N, the values a party shares."""
    return [encode(Fraction(w) / n_parties, d) for w in weights]


def share_structure_weights(session: Session, K: int, key: str = "s") -> list[SharedValue]:
    """Every member shares its encoded s_k^n / N (private keys ``s:k``); summing gives shares of s_k.

    The message pattern depends only on K and N, never on the scheme.
    """
    keys = [f"{key}:{k}" for k in range(K)]
    per_member = [session.share_values(m, keys, FIXED_D) for m in session.members]
    return session.sum_many([list(col) for col in zip(*per_member)])
