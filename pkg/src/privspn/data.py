"""Binary datasets, the synthetic stand-in, and horizontal partitioning across parties."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError

SYNTHETIC_PREFIX = "synthetic:"
DATA_ENV = "PRIVSPN_DATA"
REGIMES = ("iid", "dirichlet", "clustered")


def manifest() -> dict:
    return json.loads(resources.files("privspn").joinpath("datasets.json").read_text())


@dataclass
class BinaryDataset:
    name: str
    train: np.ndarray  # train + validation pool, split per party later
    test: np.ndarray | None = None
    synthetic: bool = False

    @property
    def num_vars(self) -> int:
        return self.train.shape[1]

    @property
    def density(self) -> float:
        rows = self.train if self.test is None else np.vstack([self.train, self.test])
        return float(rows.mean())

    def stats(self) -> dict:
        return {"name": self.name, "vars": self.num_vars, "train_valid": len(self.train),
                "test": 0 if self.test is None else len(self.test), "density": round(self.density, 4),
                "synthetic": self.synthetic}


def parse_rows(path: Path) -> np.ndarray:
    rows, width = [], None
    with open(path, newline="") as fh:
        for r, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if width is None:
                width = len(rec)
            elif len(rec) != width:
                raise ParseError(f"{path}: expected {width} values, found {len(rec)}", r, len(rec))
            row = []
            for c, cell in enumerate(rec, start=1):
                cell = cell.strip()
                if cell not in ("0", "1"):
                    raise ParseError(f"{path}: non-binary cell {cell!r}", r, c)
                row.append(cell == "1")
            rows.append(row)
    if not rows:
        raise ParseError(f"{path}: no data rows", 0, 0)
    return np.array(rows, dtype=np.int8)


def _triple(base: Path) -> tuple[Path, Path, Path] | None:
    parts = tuple(base.with_name(base.name + ext) for ext in (".ts.data", ".valid.data", ".test.data"))
    return parts if all(p.exists() for p in parts) else None


def check_manifest(ds: BinaryDataset, tol: float = 0.001) -> list[str]:
    """Differences between ``ds`` and the published statistics for its name (empty if unknown)."""
    ref = manifest().get(ds.name)
    if ref is None:
        return []
    problems = []
    if ds.num_vars != ref["vars"]:
        problems.append(f"{ds.num_vars} variables, expected {ref['vars']}")
    if len(ds.train) != ref["train_valid"]:
        problems.append(f"{len(ds.train)} train+validation rows, expected {ref['train_valid']}")
    if ds.test is not None and len(ds.test) != ref["test"]:
        problems.append(f"{len(ds.test)} test rows, expected {ref['test']}")
    if abs(ds.density - ref["density"]) > tol:
        problems.append(f"density {ds.density:.4f}, expected {ref['density']}")
    return problems


def load_dataset(path: str | os.PathLike, strict: bool = True) -> BinaryDataset:
    """Load a dataset from a ``.ts/.valid/.test.data`` triple, a directory holding one, or a single CSV.

    ``synthetic:nltcs`` names the built-in stand-in. Bare names are looked up
    under ``$PRIVSPN_DATA``.
    """
    spec = str(path)
    if spec.startswith(SYNTHETIC_PREFIX):
        return synthetic_dataset(spec[len(SYNTHETIC_PREFIX):] or "nltcs")
    p = Path(spec)
    if not p.exists() and not _triple(p) and os.environ.get(DATA_ENV):
        p = Path(os.environ[DATA_ENV]) / spec
    if p.is_dir():
        p = p / p.name
    triple = _triple(p)
    if triple:
        ts, valid, test = (parse_rows(f) for f in triple)
        if not (ts.shape[1] == valid.shape[1] == test.shape[1]):
            raise ParseError(f"{p}: splits disagree on the number of variables", 0, 0)
        ds = BinaryDataset(p.name, np.vstack([ts, valid]), test)
    elif p.is_file():
        ds = BinaryDataset(p.name.split(".")[0], parse_rows(p))
    else:
        raise InputError(f"no dataset at {spec}")
    if strict and (problems := check_manifest(ds)):
        raise InputError(f"{ds.name} does not match the manifest: " + "; ".join(problems))
    return ds


def find_dataset(name: str) -> BinaryDataset | None:
    """The real dataset if it can be found, else None."""
    roots = [os.environ.get(DATA_ENV), "data", str(Path(__file__).resolve().parents[2] / "data")]
    for root in filter(None, roots):
        base = Path(root) / name
        if _triple(base) or _triple(base / name):
            return load_dataset(base)
    return None


# --- synthetic stand-in -------------------------------------------------------

def synthetic_dataset(name: str = "nltcs", seed: int = 2093) -> BinaryDataset:
    """Draw a dataset with the published shape and density of ``name`` from a latent-class model.

    Rows come from a mixture of product-Bernoulli components whose logits are
    shifted so that the expected density matches the manifest. It is a
    stand-in for CI only; its log-likelihoods are not comparable to real data.
    """
    ref = manifest().get(name)
    if ref is None:
        raise InputError(f"no published statistics for {name!r}")
    n_vars, total = ref["vars"], ref["train_valid"] + ref["test"]
    # redraw until the sample itself (not just its expectation) matches the manifest
    for attempt in range(1000):
        rows = _latent_class_rows(np.random.default_rng([seed, attempt]), n_vars, total, ref["density"])
        if abs(rows.mean() - ref["density"]) <= 0.0005:
            break
    return BinaryDataset(name, rows[: ref["train_valid"]], rows[ref["train_valid"]:], synthetic=True)


def _latent_class_rows(rng, n_vars: int, total: int, target: float, n_comp: int = 6) -> np.ndarray:
    mix = rng.dirichlet(np.full(n_comp, 2.0))
    logits = rng.normal(0.0, 3.0, size=(n_comp, n_vars))

    def density(shift):
        return float(mix @ (1 / (1 + np.exp(-(logits + shift)))).mean(axis=1))

    lo, hi = -20.0, 20.0
    for _ in range(80):
        mid = (lo + hi) / 2
        lo, hi = (mid, hi) if density(mid) < target else (lo, mid)
    probs = 1 / (1 + np.exp(-(logits + (lo + hi) / 2)))
    z = rng.choice(n_comp, size=total, p=mix)
    return (rng.random((total, n_vars)) < probs[z]).astype(np.int8)


# --- partitioning -------------------------------------------------------------

@dataclass
class PartitionPlan:
    regime: str
    n_parties: int
    seed: int
    beta: float | None = None
    valid_fraction: float = 0.1
    dataset: str = ""
    assignment: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))  # row -> party 1..N
    train_idx: dict[int, np.ndarray] = field(default_factory=dict)
    valid_idx: dict[int, np.ndarray] = field(default_factory=dict)

    def rows_of(self, party: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == party)

    def sizes(self) -> dict[int, int]:
        return {n: int(np.count_nonzero(self.assignment == n)) for n in range(1, self.n_parties + 1)}

    def split(self, ds: BinaryDataset, party: int) -> tuple[np.ndarray, np.ndarray]:
        return ds.train[self.train_idx[party]], ds.train[self.valid_idx[party]]


def kmeans_labels(rows: np.ndarray, k: int, seed: int) -> np.ndarray:
    from sklearn.cluster import KMeans

    km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=100, random_state=seed)
    return km.fit_predict(rows.astype(float))


def partition(ds: BinaryDataset, regime: str, n_parties: int, seed: int = 0,
              beta: float | None = None, valid_fraction: float = 0.1) -> PartitionPlan:
    if regime not in REGIMES:
        raise InputError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    if n_parties < 1:
        raise InputError("need at least one party")
    n_rows = len(ds.train)
    if n_parties > n_rows:
        raise InputError(f"{n_parties} parties but only {n_rows} rows")
    rng = np.random.default_rng(seed)
    if regime == "iid":
        assignment = rng.integers(1, n_parties + 1, size=n_rows)
    else:
        labels = kmeans_labels(ds.train, n_parties, seed)
        if regime == "clustered":
            assignment = labels + 1
        else:
            if beta is None or beta <= 0:
                raise InputError("dirichlet partitioning needs beta > 0")
            assignment = np.zeros(n_rows, dtype=int)
            for k in range(n_parties):
                members = np.flatnonzero(labels == k)
                share = rng.dirichlet(np.full(n_parties, float(beta)))
                assignment[members] = rng.choice(n_parties, size=len(members), p=share) + 1
    plan = PartitionPlan(regime, n_parties, seed, beta if regime == "dirichlet" else None,
                         valid_fraction, ds.name, np.asarray(assignment, dtype=int))
    for party in range(1, n_parties + 1):
        rows = rng.permutation(plan.rows_of(party))
        n_valid = int(round(valid_fraction * len(rows)))
        if len(rows) > 1:
            n_valid = min(n_valid, len(rows) - 1)
        plan.valid_idx[party] = np.sort(rows[:n_valid])
        plan.train_idx[party] = np.sort(rows[n_valid:])
    return plan


# --- plan file ----------------------------------------------------------------

def _fmt(idx) -> str:
    return " ".join(str(int(i)) for i in idx)


def format_plan(plan: PartitionPlan) -> str:
    lines = [
        "privspn-plan 1",
        f"dataset {plan.dataset}",
        f"regime {plan.regime}" + (f" {plan.beta!r}" if plan.beta is not None else ""),
        f"parties {plan.n_parties}",
        f"seed {plan.seed}",
        f"valid_fraction {plan.valid_fraction!r}",
        f"rows {len(plan.assignment)}",
    ]
    for party in range(1, plan.n_parties + 1):
        lines.append(f"train {party} {_fmt(plan.train_idx[party])}".rstrip())
        lines.append(f"valid {party} {_fmt(plan.valid_idx[party])}".rstrip())
    return "\n".join(lines) + "\n"


def write_plan(plan: PartitionPlan, path: str | os.PathLike) -> None:
    Path(path).write_text(format_plan(plan))


def read_plan(path: str | os.PathLike) -> PartitionPlan:
    return parse_plan(Path(path).read_text(), str(path))


def parse_plan(text: str, path: str = "<plan>") -> PartitionPlan:
    text = text.splitlines()
    if not text or text[0] != "privspn-plan 1":
        raise ParseError(f"{path}: not a partition plan", 1, 0)
    head: dict[str, list[str]] = {}
    train, valid = {}, {}
    for r, line in enumerate(text[1:], start=2):
        key, *vals = line.split()
        if key in ("train", "valid"):
            target = train if key == "train" else valid
            try:
                target[int(vals[0])] = np.array([int(v) for v in vals[1:]], dtype=int)
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}: bad index list ({exc})", r, 0) from exc
        else:
            head[key] = vals
    n_parties = int(head["parties"][0])
    regime = head["regime"]
    plan = PartitionPlan(regime[0], n_parties, int(head["seed"][0]),
                         float(regime[1]) if len(regime) > 1 else None,
                         float(head["valid_fraction"][0]), head.get("dataset", [""])[0])
    assignment = np.zeros(int(head["rows"][0]), dtype=int)
    for party in range(1, n_parties + 1):
        plan.train_idx[party] = train.get(party, np.zeros(0, dtype=int))
        plan.valid_idx[party] = valid.get(party, np.zeros(0, dtype=int))
        assignment[plan.train_idx[party]] = party
        assignment[plan.valid_idx[party]] = party
    plan.assignment = assignment
    return plan
