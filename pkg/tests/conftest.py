import random

import pytest

from privspn.field import FieldParams
from privspn.mpc import INTEGER, SharedValue, simulated_session


def put_shares(session, values, scale=INTEGER):
    """Share plaintext ``values`` from member 1 into the session."""
    engine = session.backend.engines[1]
    keys = []
    for v in values:
        key = f"t{len(engine.private)}"
        engine.private[key] = v
        keys.append(key)
    return session.share_values(1, keys, scale)


def inject(session, polys, scale=INTEGER):
    """Plant shares of fixed polynomials (coefficient lists) directly in member memory."""
    p = session.fp.p
    out = []
    for coeffs in polys:
        (vid,) = session._ids(1)
        for m in session.members:
            session.backend.engines[m].shares[vid] = sum(c * m**k for k, c in enumerate(coeffs)) % p
        out.append(SharedValue(vid, scale))
    return out


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def session3():
    return simulated_session(3, seed=7)


@pytest.fixture
def small_d_session():
    return simulated_session(3, FieldParams(d=10), seed=11)
