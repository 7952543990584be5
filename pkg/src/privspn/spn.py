"""Plaintext sum-product networks: region graphs, selective RAT-SPNs, EM.

Selectivity comes from gating. Every node carries an assignment to a few
*gate* variables of its scope and is zero unless the evidence matches that
assignment, so under complete evidence each sum node has exactly one child
with positive value. Leaf regions realise the gate with indicator leaves,
internal regions inherit the lowest-index gates of their two children.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError, ParseError

LL_FLOOR = 1e-12
SMOOTHING = 0.01

# "#sum params" of a whole forest -> (K, D, R, S, I) for 8-variable data.
# The count an actual build reaches is reported by Structure.num_sum_params.
PRESETS: dict[int, dict] = {
    24: dict(K=3, D=2, R=1, S=1, I=2),
    40: dict(K=5, D=2, R=1, S=1, I=2),
    60: dict(K=5, D=2, R=1, S=2, I=2),
    100: dict(K=3, D=2, R=1, S=1, I=4),  # reaches 96, the closest gated build
}


# --- region graph -------------------------------------------------------------

@dataclass
class RegionGraph:
    num_vars: int
    depth: int
    repetitions: int
    regions: list[tuple[int, ...]] = field(default_factory=list)
    # (parent, left, right) for every split
    partitions: list[tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]] = field(default_factory=list)

    @property
    def root(self) -> tuple[int, ...]:
        return tuple(range(self.num_vars))

    def splits_of(self, region) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        return [(l, r) for p, l, r in self.partitions if p == region]

    def leaf_regions(self) -> list[tuple[int, ...]]:
        parents = {p for p, _, _ in self.partitions}
        return [r for r in self.regions if r not in parents]

    def region_depth(self, region) -> int:
        depth, frontier = 0, {self.root}
        while region not in frontier:
            frontier = {c for p, l, r in self.partitions if p in frontier for c in (l, r)}
            depth += 1
            if depth > self.depth:
                raise InputError(f"region {region} not in graph")
        return depth


def generate_region_graph(num_vars: int, depth: int, repetitions: int = 1, rng=None) -> RegionGraph:
    """Split the full scope into random halves ``depth`` times, ``repetitions`` times over."""
    if num_vars < 2:
        raise InputError("a region graph needs at least two variables")
    if depth < 1 or repetitions < 1:
        raise InputError("depth and repetitions must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    rg = RegionGraph(num_vars, depth, repetitions)
    rg.regions.append(rg.root)

    def split(region, level):
        if level == depth or len(region) < 2:
            return
        perm = rng.permutation(region)
        half = len(region) // 2
        left, right = tuple(sorted(int(v) for v in perm[:half])), tuple(sorted(int(v) for v in perm[half:]))
        rg.partitions.append((region, left, right))
        for sub in (left, right):
            if sub not in rg.regions:
                rg.regions.append(sub)
            split(sub, level + 1)

    for _ in range(repetitions):
        split(rg.root, 0)
    return rg


# --- structure ----------------------------------------------------------------

@dataclass
class Node:
    id: int
    kind: str  # "sum", "prod", "leaf" (Bernoulli) or "ind" (fixed indicator)
    scope: tuple[int, ...]
    children: tuple[int, ...] = ()
    weights: list[float] = field(default_factory=list)
    var: int = -1
    p: float = 0.5
    q: float = 0.5


@dataclass
class Structure:
    """Nodes in topological order (children first); the last node is the root."""

    num_vars: int
    nodes: list[Node]

    @property
    def root(self) -> Node:
        return self.nodes[-1]

    def sum_nodes(self) -> list[Node]:
        return [n for n in self.nodes if n.kind == "sum"]

    def leaves(self) -> list[Node]:
        return [n for n in self.nodes if n.kind == "leaf"]

    @property
    def num_sum_params(self) -> int:
        return sum(len(n.children) for n in self.sum_nodes())

    @property
    def num_leaves(self) -> int:
        return sum(1 for n in self.nodes if n.kind in ("leaf", "ind"))

    def copy(self) -> "Structure":
        return Structure(self.num_vars, [
            Node(n.id, n.kind, n.scope, n.children, list(n.weights), n.var, n.p, n.q) for n in self.nodes
        ])


def _assignments(gates):
    return [dict(zip(gates, bits)) for bits in itertools.product((0, 1), repeat=len(gates))]


def _log2_exact(x: int, what: str) -> int:
    g = int(math.log2(x)) if x >= 1 else -1
    if x < 1 or 2**g != x:
        raise ConfigError(f"{what} must be a power of two, got {x}")
    return g


def build_ratspn(rg: RegionGraph, S: int = 1, I: int = 2, rng=None) -> Structure:
    """Populate ``rg`` with gated sum, product and leaf nodes; the root has C=1.

    ``I`` inputs per leaf region are gated on log2(I) variables; ``S`` nodes
    per internal region on log2(S) of the children's gate variables. A sum
    node left with a single child collapses to that child. Weights start
    uniform and leaves at 0.5. ``rng`` is unused but kept for call symmetry
    with randomly initialised variants.
    """
    if rg.repetitions != 1:
        raise ConfigError("gated construction is only selective for a single split tree (R=1)")
    gi = _log2_exact(I, "I")
    gs = _log2_exact(S, "S")
    nodes: list[Node] = []

    def add(kind, scope, **kw) -> int:
        nodes.append(Node(len(nodes), kind, tuple(scope), **kw))
        return len(nodes) - 1

    # region -> (gate variables, {assignment tuple: node id})
    built: dict[tuple, tuple[tuple[int, ...], dict]] = {}

    def build(region, is_root=False):
        if region in built:
            return built[region]
        splits = rg.splits_of(region)
        if not splits:
            if gi > len(region):
                raise ConfigError(f"I={I} needs {gi} gate variables, leaf region has {len(region)}")
            gates = region[:gi]
            table = {}
            for a in _assignments(gates):
                parts = [add("ind", (v,), var=v, p=float(a[v]), q=float(1 - a[v])) for v in gates]
                parts += [add("leaf", (v,), var=v) for v in region if v not in a]
                table[tuple(a[v] for v in gates)] = (
                    parts[0] if len(parts) == 1 else add("prod", region, children=tuple(parts))
                )
            built[region] = (gates, table)
            return built[region]
        (left, right), = splits
        g1, t1 = build(left)
        g2, t2 = build(right)
        width = 0 if is_root else gs
        pool = tuple(sorted(g1 + g2))
        if width > len(pool):
            raise ConfigError(f"S={S} needs {width} gate variables, region {region} offers {len(pool)}")
        gates = pool[:width]
        groups: dict[tuple, list[int]] = {}
        for a1, n1 in t1.items():
            for a2, n2 in t2.items():
                full = dict(zip(g1, a1)) | dict(zip(g2, a2))
                prod = add("prod", region, children=(n1, n2))
                groups.setdefault(tuple(full[v] for v in gates), []).append(prod)
        table = {}
        for key in sorted(groups):
            kids = groups[key]
            if len(kids) == 1:
                table[key] = kids[0]
            else:
                table[key] = add("sum", region, children=tuple(kids), weights=[1 / len(kids)] * len(kids))
        built[region] = (gates, table)
        return built[region]

    _, table = build(rg.root, is_root=True)
    (root_id,) = table.values()
    if root_id != len(nodes) - 1:
        raise ConfigError("internal error: root is not the last node")
    return Structure(rg.num_vars, nodes)


def uniform_structure(num_vars: int) -> Structure:
    """Fully factorised model with every leaf at 0.5; handy as a closed-form reference."""
    nodes = [Node(v, "leaf", (v,), var=v) for v in range(num_vars)]
    nodes.append(Node(num_vars, "prod", tuple(range(num_vars)), children=tuple(range(num_vars))))
    return Structure(num_vars, nodes)


def single_leaf(p: float) -> Structure:
    return Structure(1, [Node(0, "leaf", (0,), var=0, p=p, q=1 - p)])


# --- evaluation ---------------------------------------------------------------

def _as_rows(s: Structure, x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.int8)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[1] != s.num_vars:
        raise InputError(f"evidence has {arr.shape[1]} values, structure has {s.num_vars} variables")
    return arr


def log_values(s: Structure, rows) -> list[np.ndarray]:
    """Natural-log value of every node for every row."""
    x = _as_rows(s, rows)
    out: list[np.ndarray] = []
    with np.errstate(divide="ignore", invalid="ignore"):
        for n in s.nodes:
            if n.kind in ("leaf", "ind"):
                out.append(np.where(x[:, n.var] == 1, np.log(n.p), np.log(n.q)))
            elif n.kind == "prod":
                out.append(np.sum([out[c] for c in n.children], axis=0))
            else:
                terms = np.stack([np.log(w) + out[c] for w, c in zip(n.weights, n.children)])
                top = terms.max(axis=0)
                safe = np.where(np.isfinite(top), top, 0.0)
                out.append(safe + np.log(np.exp(terms - safe).sum(axis=0)))
    return out


def evaluate(s: Structure, x) -> np.ndarray | float:
    """P(x) for one row (float) or a batch of rows (array)."""
    single = np.asarray(x).ndim == 1
    vals = np.exp(log_values(s, x)[-1])
    return float(vals[0]) if single else vals


def log_likelihood(s: Structure, data) -> float:
    data = np.asarray(data)
    if data.size == 0:
        raise InputError("log-likelihood of an empty dataset")
    root = log_values(s, data)[-1]
    return float(np.mean(np.maximum(root, math.log(LL_FLOOR))))


def all_rows(num_vars: int) -> np.ndarray:
    return np.array(list(itertools.product((0, 1), repeat=num_vars)), dtype=np.int8)


# --- training -----------------------------------------------------------------

def positive_masks(s: Structure, rows) -> list[np.ndarray]:
    """Which nodes are nonzero per row, from the structure alone (weights assumed > 0)."""
    x = _as_rows(s, rows)
    pos: list[np.ndarray] = []
    for n in s.nodes:
        if n.kind == "ind":
            pos.append(x[:, n.var] == int(n.p))
        elif n.kind == "leaf":
            pos.append(np.ones(len(x), dtype=bool))
        elif n.kind == "prod":
            pos.append(np.logical_and.reduce([pos[c] for c in n.children]))
        else:
            pos.append(np.logical_or.reduce([pos[c] for c in n.children]))
    return pos


def route(s: Structure, rows) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Top-down reach masks: a row reaches a child of a sum node only through its positive child."""
    pos = positive_masks(s, rows)
    reach = [np.zeros_like(pos[0]) for _ in s.nodes]
    reach[-1] = pos[-1].copy()
    for n in reversed(s.nodes):
        if n.kind == "prod":
            for c in n.children:
                reach[c] |= reach[n.id]
        elif n.kind == "sum":
            for c in n.children:
                reach[c] |= reach[n.id] & pos[c]
    return pos, reach


@dataclass
class LocalCounts:
    """Per sum node child counts m_ij and totals den_i, plus Bernoulli leaf estimates."""

    m: dict[int, list[int]]
    den: dict[int, int]
    leaf_p: dict[int, float]
    leaf_q: dict[int, float]


@dataclass
class Criterion:
    """Fixed ``iterations``, or stop once the validation LL stays within ``mu`` of the best for 11 steps."""

    iterations: int | None = 30
    mu: float | None = None
    patience: int = 10
    max_iterations: int = 300

    @classmethod
    def parse(cls, text: str) -> "Criterion":
        text = str(text).strip()
        if text.startswith("mu="):
            return cls(iterations=None, mu=float(text[3:]))
        return cls(iterations=int(text))

    def __str__(self):
        return f"mu={self.mu}" if self.mu is not None else str(self.iterations)


def em_step(s: Structure, train, alpha: float = SMOOTHING, weight_alpha: float = 1.0) -> LocalCounts:
    """One hard-routing EM step in place; returns the counts it used.

    Leaves get ``alpha`` pseudo-observations per outcome, sum edges
    ``weight_alpha`` pseudo-instances each (the public pseudocount used by
    the private aggregation, so a single party reproduces it exactly).
    """
    _, reach = route(s, train)
    train = np.asarray(train)
    m, den, lp, lq = {}, {}, {}, {}
    for n in s.nodes:
        if n.kind == "sum":
            counts = [int(np.count_nonzero(reach[c] & reach[n.id])) for c in n.children]
            m[n.id] = counts
            den[n.id] = int(np.count_nonzero(reach[n.id]))
            total = sum(counts) + weight_alpha * len(counts)
            n.weights = [(k + weight_alpha) / total for k in counts]
        elif n.kind == "leaf":
            hits = reach[n.id]
            reached = int(np.count_nonzero(hits))
            ones = int(np.count_nonzero(train[hits, n.var] == 1)) if reached else 0
            n.p = (ones + alpha) / (reached + 2 * alpha)
            n.q = 1.0 - n.p
            lp[n.id], lq[n.id] = n.p, n.q
    return LocalCounts(m, den, lp, lq)


def local_em(s: Structure, train, valid=None, criterion: Criterion | None = None,
             alpha: float = SMOOTHING, weight_alpha: float = 1.0) -> tuple[Structure, LocalCounts, list[float]]:
    """Train a copy of ``s``; keep the iterate that is best on ``valid`` (or on ``train``).

    Returns the trained copy, its counts and the per-iteration validation LL.
    """
    train = np.asarray(train)
    if len(train) == 0:
        raise InputError("local training split is empty")
    criterion = criterion or Criterion()
    valid = train if valid is None or len(valid) == 0 else np.asarray(valid)
    work = s.copy()
    best, best_ll, best_counts, history = None, -math.inf, None, []
    calm = 0
    limit = criterion.iterations if criterion.mu is None else criterion.max_iterations
    for _ in range(limit):
        counts = em_step(work, train, alpha, weight_alpha)
        ll = log_likelihood(work, valid)
        history.append(ll)
        # distance to the best LL seen before this iteration
        calm = calm + 1 if abs(ll - best_ll) < (criterion.mu or 0) else 0
        if best is None or ll > best_ll:
            best, best_ll, best_counts = work.copy(), ll, counts
        if criterion.mu is not None and calm > criterion.patience:
            break
    return best, best_counts, history


# --- audits -------------------------------------------------------------------

def check_complete(s: Structure) -> bool:
    return all(len({s.nodes[c].scope for c in n.children}) == 1 and s.nodes[n.children[0]].scope == n.scope
               for n in s.sum_nodes())


def check_decomposable(s: Structure) -> bool:
    for n in s.nodes:
        if n.kind != "prod":
            continue
        seen: set[int] = set()
        for c in n.children:
            scope = set(s.nodes[c].scope)
            if seen & scope:
                return False
            seen |= scope
        if tuple(sorted(seen)) != tuple(sorted(n.scope)):
            return False
    return True


def check_selective(s: Structure, rows) -> bool:
    vals = log_values(s, rows)
    for n in s.sum_nodes():
        positive = np.sum([np.isfinite(vals[c]) for c in n.children], axis=0)
        if np.any(positive > 1):
            return False
    return True


def check_weights(s: Structure, tol: float = 1e-9) -> bool:
    ok = all(all(w > 0 for w in n.weights) and abs(sum(n.weights) - 1) <= tol for n in s.sum_nodes())
    return ok and all(abs(n.p + n.q - 1) <= tol for n in s.leaves())


# --- serialization ------------------------------------------------------------

def _ints(xs) -> str:
    return ",".join(str(x) for x in xs) or "-"


def serialize(s: Structure, params: bool = True) -> str:
    lines = ["privspn-structure 1", f"vars {s.num_vars}"]
    for n in s.nodes:
        parts = [f"node {n.id} {n.kind} scope={_ints(n.scope)}"]
        if n.kind in ("sum", "prod"):
            parts.append(f"children={_ints(n.children)}")
        else:
            parts.append(f"var={n.var}")
        if n.kind == "ind":
            parts.append(f"value={int(n.p)}")
        if params and n.kind == "sum":
            parts.append("weights=" + ",".join(repr(float(w)) for w in n.weights))
        if params and n.kind == "leaf":
            parts.append(f"p={float(n.p)!r} q={float(n.q)!r}")
        lines.append(" ".join(parts))
    lines.append(f"root {s.root.id}")
    return "\n".join(lines) + "\n"


def structure_hash(s: Structure, params: bool = False) -> str:
    return hashlib.sha256(serialize(s, params).encode()).hexdigest()


def deserialize(text: str) -> Structure:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "privspn-structure 1":
        raise ParseError("not a structure file", 1, 0)
    num_vars = int(lines[1].split()[1])
    nodes = []
    for row, ln in enumerate(lines[2:-1], start=3):
        head, *fields = ln.split()
        if head != "node":
            raise ParseError(f"unexpected line {ln!r}", row, 0)
        nid, kind = int(fields[0]), fields[1]
        kv = dict(f.split("=", 1) for f in fields[2:])
        ints = lambda key: tuple(int(v) for v in kv[key].split(",")) if kv.get(key, "-") != "-" else ()
        node = Node(nid, kind, ints("scope"), ints("children"))
        if kind in ("leaf", "ind"):
            node.var = int(kv["var"])
        if kind == "ind":
            node.p = float(kv["value"])
            node.q = 1.0 - node.p
        if kind == "leaf" and "p" in kv:
            node.p, node.q = float(kv["p"]), float(kv["q"])
        if kind == "sum":
            node.weights = ([float(w) for w in kv["weights"].split(",")] if "weights" in kv
                            else [1 / len(node.children)] * len(node.children))
        nodes.append(node)
    return Structure(num_vars, nodes)
