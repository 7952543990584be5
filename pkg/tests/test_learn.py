import math
from fractions import Fraction

import numpy as np
import pytest

from privspn.data import partition, synthetic_dataset
from privspn.field import FieldParams, encode
from privspn.forest import Forest, generate_forest, serialize_forest, share_structure_weights
from privspn.learn import (PrivateModel, aggregate_plain, compute_leaf_parameters, compute_sum_parameters,
                           local_training, private_inference, private_training, reconstruct_model, set_local_data)
from privspn.mpc import DivisionConfig, simulated_session
from privspn.spn import Criterion, Node, Structure, evaluate, single_leaf, uniform_structure

D = 10**7


def division_slack(value, n):
    """Fixed-point tolerance of one private division producing ``value``."""
    bound = DivisionConfig.default(FieldParams(), n).relative_error_bound
    return value * bound + (n + 1)


def gated_forest():
    nodes = [
        Node(0, "ind", (0,), var=0, p=0.0, q=1.0),
        Node(1, "leaf", (1,), var=1),
        Node(2, "prod", (0, 1), children=(0, 1)),
        Node(3, "ind", (0,), var=0, p=1.0, q=0.0),
        Node(4, "leaf", (1,), var=1),
        Node(5, "prod", (0, 1), children=(3, 4)),
        Node(6, "sum", (0, 1), children=(2, 5), weights=[0.5, 0.5]),
    ]
    return Forest([Structure(2, nodes)], [1.0])


def plant(session, per_member: list[dict]):
    for m, values in enumerate(per_member, start=1):
        session.backend.engines[m].private.update(values)


def sum_weights_for(counts):
    """counts: per member (m0, m1, den) for the single sum node of gated_forest."""
    session = simulated_session(len(counts), seed=5)
    plant(session, [{"m:0:6:0": a, "m:0:6:1": b, "den:0:6": c} for a, b, c in counts])
    model = PrivateModel(gated_forest())
    compute_sum_parameters(session, model)
    return session.open(model.sum_weights[(0, 6)])


def test_sum_parameters_two_parties():
    w0, w1 = sum_weights_for([(3, 7, 10), (1, 9, 10)])
    assert abs(w0 - 2_000_000) <= division_slack(2_000_000, 2)
    assert abs(w1 - 8_000_000) <= division_slack(8_000_000, 2)


def test_sum_parameters_single_party():
    w = sum_weights_for([(6, 4, 10)])
    assert abs(w[0] - 6_000_000) <= division_slack(6_000_000, 1)
    assert abs(w[1] - 4_000_000) <= division_slack(4_000_000, 1)


def test_sum_parameters_symmetric():
    w = sum_weights_for([(5, 5, 10)] * 3)
    assert all(abs(x - 5_000_000) <= division_slack(5_000_000, 3) for x in w)


def leaf_mean(ps):
    n = len(ps)
    session = simulated_session(n, seed=9)
    plant(session, [{"p:0:1": encode(Fraction(p) / n, D), "q:0:1": encode(Fraction(1 - p) / n, D),
                     "p:0:4": 0, "q:0:4": 0} for p in ps])
    model = PrivateModel(gated_forest())
    compute_leaf_parameters(session, model)
    return session.open(list(model.leaves[(0, 1)]))


def test_leaf_means():
    p, _ = leaf_mean([0.4, 0.6])
    assert abs(p - 5_000_000) <= 2
    p, _ = leaf_mean([0.3, 0.3, 0.9])
    assert abs(p - 5_000_000) <= 3


@pytest.mark.parametrize("seed", range(20))
def test_leaf_p_plus_q(seed):
    rng = np.random.default_rng(seed)
    ps = rng.random(int(rng.integers(2, 6))).round(7).tolist()
    p, q = leaf_mean(ps)
    assert abs(p + q - D) <= 2 * len(ps)


# --- end to end on the synthetic stand-in --------------------------------------

@pytest.fixture(scope="module")
def trained():
    ds = synthetic_dataset("nltcs")
    n = 3
    plan = partition(ds, "iid", n, seed=1)
    forest = generate_forest(8, 3, 2, seed=1)
    session = simulated_session(n, seed=1, n_clients=1, record=True)
    session.local("load_forest", text=serialize_forest(forest))
    results = []
    for m in session.members:
        set_local_data(session.backend.engines[m], *plan.split(ds, m))
        results.append(local_training(forest, *plan.split(ds, m), Criterion(iterations=3)))
    session.local("train", criterion="3")
    model = private_training(session, forest)
    return ds, forest, session, model, results


def test_private_equals_plain_aggregation(trained):
    ds, forest, session, model, results = trained
    private = reconstruct_model(session, model)
    plain = aggregate_plain(forest, results)
    for sp, sq in zip(private.structures, plain.structures):
        for a, b in zip(sp.nodes, sq.nodes):
            for wa, wb in zip(a.weights, b.weights):
                assert abs(wa * D - wb * D) <= division_slack(wb * D, 3) + 1
            if a.kind == "leaf":
                assert abs(a.p - b.p) * D <= 3 and abs(a.q - b.q) * D <= 3
    assert abs(sum(private.weights) - 1) * D <= forest.K * 3
    # sum weights per node add up to d within the per-edge division error
    for s in private.structures:
        for node in s.sum_nodes():
            assert abs(sum(node.weights) - 1) * D <= len(node.weights) * division_slack(D, 3)


def test_sequential_divisions_agree(trained):
    ds, forest, session, model, results = trained
    before = session.exercise_counts["truncation"]
    seq = PrivateModel(forest)
    compute_sum_parameters(session, seq, batched=False)
    assert session.exercise_counts["truncation"] - before > 10
    a = session.open([w for key in sorted(model.sum_weights) for w in model.sum_weights[key]])
    b = session.open([w for key in sorted(seq.sum_weights) for w in seq.sum_weights[key]])
    assert all(abs(x - y) <= 2 * division_slack(max(x, y), 3) for x, y in zip(a, b))


def test_private_inference_matches_plaintext(trained):
    ds, forest, session, model, _ = trained
    plain = reconstruct_model(session, model)
    rows = ds.test[:10]
    querier = session.clients[0]
    session.backend.engines[querier].private["query"] = rows
    result = private_inference(session, model, querier, len(rows))
    expected = np.exp(np.log(plain.weights)[:, None] +
                      np.log([evaluate(s, rows) for s in plain.structures])).sum(axis=0)
    rel = np.abs(np.array(result.probabilities) - expected) / expected
    assert rel.max() <= 1e-3
    assert not any(result.underflow)


def test_inference_discloses_only_to_querier(trained):
    ds, forest, session, model, _ = trained
    net = session.backend.net
    net.transcripts.clear()
    querier = session.clients[0]
    session.backend.engines[querier].private["query"] = ds.test[:2]
    private_inference(session, model, querier, 2)
    # manager: metadata only; members: shares of evidence and intermediates, never an "open" payload
    assert all(m.payload == [] for m in net.transcripts[0])
    for member in session.members:
        received = [m for m in net.transcripts[member] if m.payload]
        assert not any(m.step.startswith("reveal/") for m in received)
        # evidence bits arrive as field-uniform shares, never as the bits themselves
        from_querier = [int(x) for m in received if m.sender == querier for x in m.payload]
        assert from_querier and all(x > 1 for x in from_querier)
    opens = [m for m in net.transcripts[querier] if m.step == "reveal/open"]
    assert {m.sender for m in opens} == set(session.members)


def test_single_party_reduces_to_local_em():
    ds = synthetic_dataset("nltcs")
    train, valid = ds.train[:3000], ds.train[3000:3500]
    forest = generate_forest(8, 3, 2, seed=7)
    session = simulated_session(1, seed=7)
    session.local("load_forest", text=serialize_forest(forest))
    set_local_data(session.backend.engines[1], train, valid)
    session.local("train", criterion="5")
    private = reconstruct_model(session, private_training(session, forest))
    local = local_training(forest, train, valid, Criterion(iterations=5))
    for sp, sl in zip(private.structures, local.structures):
        for a, b in zip(sp.nodes, sl.nodes):
            for wa, wb in zip(a.weights, b.weights):
                assert abs(wa - wb) * D <= division_slack(wb * D, 1)
            if a.kind == "leaf":
                assert abs(a.p - b.p) * D <= 1
    assert private.weights == pytest.approx(local.weights, abs=2 / D)


def test_external_client_holds_no_shares(trained):
    _, _, session, _, _ = trained
    client = session.backend.engines[session.clients[0]]
    assert not client.holds_shares and not client.shares


def tiny_model(structure, weights=(1.0,), leaf_values=None):
    forest = Forest([structure], list(weights))
    session = simulated_session(3, seed=2, n_clients=1)
    for m in session.members:
        vals = {"s:0": round(D / 3)}
        for n in structure.leaves():
            p = structure.nodes[n.id].p if leaf_values is None else leaf_values
            vals[f"p:0:{n.id}"] = round(p * D / 3)
            vals[f"q:0:{n.id}"] = round((1 - p) * D / 3)
        session.backend.engines[m].private.update(vals)
    model = PrivateModel(forest)
    model.structure_weights = share_structure_weights(session, 1)
    compute_leaf_parameters(session, model)
    return session, model


def query(session, model, rows):
    q = session.clients[0]
    session.backend.engines[q].private["query"] = np.asarray(rows)
    return private_inference(session, model, q, len(rows))


def test_inference_single_leaf_passthrough():
    session, model = tiny_model(single_leaf(0.3))
    result = query(session, model, [[1]])
    assert abs(result.raw[0] - 3_000_000) <= result.resolution


def test_inference_uniform_model():
    session, model = tiny_model(uniform_structure(8), leaf_values=0.5)
    result = query(session, model, [[0] * 8, [1, 0, 1, 1, 0, 0, 1, 0]])
    for raw in result.raw:
        assert abs(raw - 39_063) <= result.resolution
    assert math.isclose(result.probabilities[0], 1 / 256, rel_tol=1e-3)
