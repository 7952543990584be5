"""Private parameter learning and private inference over a weighted forest.

Members train locally, turn their results into a few integers and
fixed-point values (``member_values``), and share them. Sum weights then
need one private division per edge; leaf parameters and structure weights
are plain share sums because every party pre-divides by N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .data import load_dataset, read_plan
from .errors import InputError
from .field import encode
from .forest import Forest, forest_hash, local_weights, parse_forest, share_structure_weights
from .mpc import FIXED_D, INTEGER, Session, SharedValue, local_task
from .spn import SMOOTHING, Criterion, LocalCounts, Structure, local_em, log_likelihood


# --- local side ---------------------------------------------------------------

@dataclass
class LocalResult:
    structures: list[Structure]
    counts: list[LocalCounts]
    valid_lls: list[float]
    weights: list[float]


def local_training(forest: Forest, train, valid, criterion: Criterion | None = None,
                   scheme: str = "rank", alpha: float = SMOOTHING, pseudocount: float = 1.0) -> LocalResult:
    """Local EM on every structure, then validation LLs and local structure weights."""
    trained, counts, lls = [], [], []
    valid = valid if valid is not None and len(valid) else train
    for s in forest.structures:
        best, c, _ = local_em(s, train, valid, criterion, alpha, weight_alpha=pseudocount)
        trained.append(best)
        counts.append(c)
        lls.append(log_likelihood(best, valid))
    return LocalResult(trained, counts, lls, local_weights(lls, scheme))


def sum_edges(forest: Forest):
    """Public enumeration of (k, node id, child position) for every sum edge."""
    return [(k, n.id, j) for k, s in enumerate(forest.structures) for n in s.sum_nodes()
            for j in range(len(n.children))]


def sum_nodes(forest: Forest):
    return [(k, n.id, len(n.children)) for k, s in enumerate(forest.structures) for n in s.sum_nodes()]


def leaf_nodes(forest: Forest):
    return [(k, n.id) for k, s in enumerate(forest.structures) for n in s.leaves()]


def member_values(forest: Forest, result: LocalResult, n_parties: int, d: int,
                  pseudocount: int = 1) -> dict[str, int]:
    """The integers a member contributes, keyed by public names."""
    out: dict[str, int] = {}
    for k, nid, j in sum_edges(forest):
        out[f"m:{k}:{nid}:{j}"] = result.counts[k].m[nid][j] + pseudocount
    for k, nid, c in sum_nodes(forest):
        out[f"den:{k}:{nid}"] = result.counts[k].den[nid] + pseudocount * c
    for k, nid in leaf_nodes(forest):
        leaf = result.structures[k].nodes[nid]
        out[f"p:{k}:{nid}"] = encode(Fraction(leaf.p) / n_parties, d)
        out[f"q:{k}:{nid}"] = encode(Fraction(leaf.q) / n_parties, d)
    for k, w in enumerate(result.weights):
        out[f"s:{k}"] = encode(Fraction(w) / n_parties, d)
    return out


def aggregate_plain(forest: Forest, results: list[LocalResult], pseudocount: int = 1) -> Forest:
    """Pooled counts turned into parameters in the clear, as the distributed non-private baseline does."""
    n = len(results)
    structures = [s.copy() for s in forest.structures]
    for k, s in enumerate(structures):
        for node in s.sum_nodes():
            den = sum(r.counts[k].den[node.id] + pseudocount * len(node.children) for r in results)
            node.weights = [sum(r.counts[k].m[node.id][j] + pseudocount for r in results) / den
                            for j in range(len(node.children))]
        for leaf in s.leaves():
            leaf.p = sum(r.structures[k].nodes[leaf.id].p for r in results) / n
            leaf.q = sum(r.structures[k].nodes[leaf.id].q for r in results) / n
    weights = [sum(r.weights[k] for r in results) / n for k in range(forest.K)]
    return Forest(structures, weights)


def set_local_data(engine, train, valid) -> None:
    engine.private["train"] = np.asarray(train)
    engine.private["valid"] = np.asarray(valid)


@local_task("load_forest")
def _load_forest(engine, text):
    forest = parse_forest(text)
    engine.private["forest"] = forest
    return {"hash": forest_hash(forest)}


@local_task("load_data")
def _load_data(engine, dataset, plan):
    if not engine.holds_shares:
        return {}
    ds = load_dataset(dataset, strict=False)
    train, valid = read_plan(plan).split(ds, engine.node_id)
    set_local_data(engine, train, valid)
    return {}


@local_task("train")
def _train(engine, criterion="30", scheme="rank", alpha=SMOOTHING, pseudocount=1):
    if not engine.holds_shares:
        return {}
    forest = engine.private["forest"]
    if len(engine.private.get("train", ())) == 0:
        raise InputError(f"member {engine.node_id} has no training data")
    result = local_training(forest, engine.private["train"], engine.private["valid"],
                            Criterion.parse(criterion), scheme, alpha, pseudocount)
    engine.private["local_result"] = result
    engine.private.update(member_values(forest, result, engine.n, engine.fp.d, pseudocount))
    return {"hash": forest_hash(forest)}


# --- private side -------------------------------------------------------------

@dataclass
class PrivateModel:
    """Manager-side handles to the shared parameters of a forest (the structure is public)."""

    forest: Forest
    structure_weights: list[SharedValue] = field(default_factory=list)
    sum_weights: dict[tuple[int, int], list[SharedValue]] = field(default_factory=dict)
    leaves: dict[tuple[int, int], tuple[SharedValue, SharedValue]] = field(default_factory=dict)

    def all_values(self) -> list[SharedValue]:
        out = list(self.structure_weights)
        for key in sorted(self.sum_weights):
            out += self.sum_weights[key]
        for key in sorted(self.leaves):
            out += list(self.leaves[key])
        return out


def _gather(session: Session, keys: list[str], scale: str) -> list[SharedValue]:
    per_member = [session.share_values(m, keys, scale) for m in session.members]
    return session.sum_many([list(col) for col in zip(*per_member)])


def compute_sum_parameters(session: Session, model: PrivateModel, batched: bool = True) -> None:
    """w_ij = sum_n m_ij^n / sum_n den_i^n, one private division per edge.

    ``batched`` runs every division in lockstep (same rounds, fewer
    exercises); otherwise they run one after another.
    """
    forest = model.forest
    edges = sum_edges(forest)
    num = _gather(session, [f"m:{k}:{i}:{j}" for k, i, j in edges], INTEGER)
    nodes = sum_nodes(forest)
    den_list = _gather(session, [f"den:{k}:{i}" for k, i, _ in nodes], INTEGER)
    den = {(k, i): v for (k, i, _), v in zip(nodes, den_list)}
    pairs = [(a, den[(k, i)]) for a, (k, i, _) in zip(num, edges)]
    if batched:
        weights = session.private_divide_many(pairs)
    else:
        weights = [session.private_divide(a, b) for a, b in pairs]
    for (k, i, _), w in zip(edges, weights):
        model.sum_weights.setdefault((k, i), []).append(w)


def compute_leaf_parameters(session: Session, model: PrivateModel) -> None:
    leaves = leaf_nodes(model.forest)
    p = _gather(session, [f"p:{k}:{i}" for k, i in leaves], FIXED_D)
    q = _gather(session, [f"q:{k}:{i}" for k, i in leaves], FIXED_D)
    for key, pv, qv in zip(leaves, p, q):
        model.leaves[key] = (pv, qv)


def private_training(session: Session, forest: Forest, batched: bool = True) -> PrivateModel:
    """Everything after local training: share weights, then sum and leaf parameters."""
    model = PrivateModel(forest)
    model.structure_weights = share_structure_weights(session, forest.K)
    compute_sum_parameters(session, model, batched)
    compute_leaf_parameters(session, model)
    return model


def reconstruct_model(session: Session, model: PrivateModel) -> Forest:
    """Open every parameter (simulated transport only) and decode it into a plaintext forest."""
    d = session.fp.d
    structures = [s.copy() for s in model.forest.structures]
    opened = iter(session.open(model.all_values()))
    weights = [next(opened) / d for _ in model.structure_weights]
    for k, i in sorted(model.sum_weights):
        structures[k].nodes[i].weights = [next(opened) / d for _ in model.sum_weights[(k, i)]]
    for k, i in sorted(model.leaves):
        leaf = structures[k].nodes[i]
        leaf.p, leaf.q = next(opened) / d, next(opened) / d
    return Forest(structures, weights)


def _heights(s: Structure) -> list[int]:
    h = []
    for n in s.nodes:
        h.append(1 + max(h[c] for c in n.children) if n.children else 0)
    return h


@dataclass
class InferenceResult:
    raw: list[int]
    probabilities: list[float]
    underflow: list[bool]
    resolution: int


def private_inference(session: Session, model: PrivateModel, querier: int, n_rows: int,
                      key: str = "query") -> InferenceResult | list[SharedValue]:
    """Upward pass over shares for ``n_rows`` evidence rows held by ``querier``.

    The querier's rows live in its private store under ``key``; without them
    the store must already hold ``key:r:v`` entries (plain bits or prepared
    ``{party: share}`` dicts). Each binary coordinate is shared, products are
    truncated back to scale d, each sum node truncates once after adding its
    weighted children, and the weighted forest value is revealed to the
    querier alone. Returns the result when the querier's memory is reachable,
    else the revealed handles.
    """
    forest = model.forest
    n_vars = forest.structures[0].num_vars
    d = session.fp.d
    engine = session.backend.engines.get(querier) if hasattr(session.backend, "engines") else None
    if engine is not None and key in engine.private:
        rows = np.asarray(engine.private[key])
        if rows.shape != (n_rows, n_vars):
            raise InputError(f"querier holds {rows.shape} evidence, expected ({n_rows}, {n_vars})")
        for r in range(n_rows):
            for v in range(n_vars):
                engine.private[f"{key}:{r}:{v}"] = int(rows[r, v])
    cells = [(r, v) for r in range(n_rows) for v in range(n_vars)]
    x = dict(zip(cells, session.share_values(querier, [f"{key}:{r}:{v}" for r, v in cells])))

    # indicators are linear in x; x*d and d - x*d serve every indicator leaf
    xd = dict(zip(cells, session.linear_many([("scale", x[c], d, FIXED_D) for c in cells])))
    nxd = dict(zip(cells, session.linear_many([("rsub", xd[c], d, FIXED_D) for c in cells])))

    leaves = leaf_nodes(forest)
    diffs = dict(zip(leaves, session.sub_many([model.leaves[key_] for key_ in leaves])))
    leaf_slots = [(r, k, i) for r in range(n_rows) for k, i in leaves]
    prods = session.mul_many((x[(r, forest.structures[k].nodes[i].var)], diffs[(k, i)])
                             for r, k, i in leaf_slots)
    leaf_vals = session.add_many((p, model.leaves[(k, i)][1]) for p, (r, k, i) in zip(prods, leaf_slots))

    val: dict[tuple[int, int, int], SharedValue] = dict(zip(leaf_slots, leaf_vals))
    for k, s in enumerate(forest.structures):
        for n in s.nodes:
            if n.kind == "ind":
                table = xd if n.p == 1 else nxd
                for r in range(n_rows):
                    val[(r, k, n.id)] = table[(r, n.var)]

    heights = [_heights(s) for s in forest.structures]
    depth = max(max(h) for h in heights)
    truncations = 0
    for level in range(1, depth + 1):
        at_level = [(k, n) for k, s in enumerate(forest.structures) for n in s.nodes
                    if n.children and heights[k][n.id] == level]
        # products: pairwise multiply-and-truncate until one value remains
        partial = {(r, k, n.id): [val[(r, k, c)] for c in n.children]
                   for r in range(n_rows) for k, n in at_level if n.kind == "prod"}
        # sums: weighted children, added, then a single truncation
        sums = [(r, k, n) for r in range(n_rows) for k, n in at_level if n.kind == "sum"]
        sum_terms = [(val[(r, k, c)], w) for r, k, n in sums
                     for c, w in zip(n.children, model.sum_weights[(k, n.id)])]
        first = True
        while first or any(len(v) > 1 for v in partial.values()):
            pairs, slots = [], []
            for slot, vs in partial.items():
                for j in range(0, len(vs) - 1, 2):
                    pairs.append((vs[j], vs[j + 1]))
                    slots.append((slot, j))
            products = session.mul_many(pairs + (sum_terms if first else []))
            to_trunc = products[:len(pairs)]
            if first and sums:
                weighted = iter(products[len(pairs):])
                groups = [[next(weighted) for _ in n.children] for _, _, n in sums]
                to_trunc = to_trunc + session.sum_many(groups)
            if not to_trunc:
                break
            truncated = session.truncate_many(to_trunc)
            for (slot, j), t in zip(slots, truncated):
                partial[slot][j] = t
                partial[slot][j + 1] = None
            partial = {slot: [v for v in vs if v is not None] for slot, vs in partial.items()}
            if first:
                for (r, k, n), t in zip(sums, truncated[len(pairs):]):
                    val[(r, k, n.id)] = t
            first = False
            truncations += 1
        for slot, (v,) in partial.items():
            val[slot] = v

    roots = [(r, k) for r in range(n_rows) for k in range(forest.K)]
    weighted = session.mul_many((val[(r, k, len(forest.structures[k].nodes) - 1)], model.structure_weights[k])
                                for r, k in roots)
    per_row = [weighted[r * forest.K:(r + 1) * forest.K] for r in range(n_rows)]
    out = session.truncate_many(session.sum_many(per_row))
    session.reveal(out, querier)
    if engine is None:
        return out
    raw = [engine.revealed[v.value_id] for v in out]
    resolution = session.n * (truncations + 1)
    return InferenceResult(raw, [r / d for r in raw], [r <= resolution for r in raw], resolution)


def inference_log_likelihood(result: InferenceResult, floor: float = 1e-12) -> float:
    return float(np.mean([math.log(max(p, floor)) for p in result.probabilities]))
