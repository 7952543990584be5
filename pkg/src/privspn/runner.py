"""Run configuration, the end-to-end private run, the two baselines and the inference bench."""

from __future__ import annotations

import dataclasses
import json
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cluster import tcp_session
from .data import REGIMES, BinaryDataset, load_dataset, partition, write_plan
from .errors import ConfigError, PrivacyError, PrivSpnError
from .field import MERSENNE_89, FieldParams
from .forest import (SCHEMES, Forest, forest_hash, forest_log_likelihood, forest_log_values,
                     generate_forest, serialize_forest)
from .learn import (InferenceResult, PrivateModel, aggregate_plain, local_training, private_inference,
                    private_training, reconstruct_model, set_local_data)
from .mpc import simulated_session
from .spn import PRESETS, SMOOTHING, Criterion

CONFIG_HEADER = "# privspn run configuration: key = value, '#' starts a comment"


@dataclass
class RunConfig:
    """Every knob of a run. Field order is the order of the config file."""

    dataset: str = "synthetic:nltcs"
    regime: str = "iid"
    beta: float | None = None
    parties: int = 3
    preset: int = 24
    K: int | None = None
    D: int | None = None
    R: int | None = None
    S: int | None = None
    I: int | None = None
    scheme: str = "rank"
    criterion: str = "30"
    alpha: float = SMOOTHING
    pseudocount: int = 1
    p: int = MERSENNE_89
    d: int = 10**7
    precision_t: int = 24
    truncate_n: int = -1
    threshold: int | None = None
    divisions: str = "batched"
    transport: str = "sim"
    spawn: str = "thread"
    latency_ms: float = 10.0
    host: str = "127.0.0.1"
    seed: int = 0
    forest_seed: int | None = None
    valid_fraction: float = 0.1
    evaluate: str = "auto"
    eval_rows: int = 0
    infer_rows: int = 10
    debug: bool = False
    output: str | None = None

    # structure sizing, with preset values filled in
    def sizing(self) -> dict:
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset}; choose from {sorted(PRESETS)}")
        out = dict(PRESETS[self.preset])
        for key in ("K", "D", "R", "S", "I"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        return out

    def field_params(self) -> FieldParams:
        return FieldParams(self.p, self.d, self.precision_t, self.truncate_n)

    def validate(self) -> "RunConfig":
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}")
        if self.regime == "dirichlet" and (self.beta is None or self.beta <= 0):
            raise ConfigError("the dirichlet regime needs beta > 0")
        if self.parties < 1:
            raise ConfigError("parties must be >= 1")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        if self.transport not in ("sim", "tcp"):
            raise ConfigError("transport must be sim or tcp")
        if self.spawn not in ("thread", "process"):
            raise ConfigError("spawn must be thread or process")
        if self.divisions not in ("batched", "sequential"):
            raise ConfigError("divisions must be batched or sequential")
        if self.evaluate not in ("auto", "reconstruct", "private", "none"):
            raise ConfigError("evaluate must be auto, reconstruct, private or none")
        if self.debug and self.transport == "tcp":
            raise PrivacyError("parameter dumps are refused on the TCP transport")
        if self.latency_ms < 0 or not 0 <= self.valid_fraction < 1:
            raise ConfigError("latency_ms must be >= 0 and valid_fraction in [0, 1)")
        try:
            Criterion.parse(self.criterion)
        except ValueError:
            raise ConfigError(f"criterion must be an iteration count or mu=<float>, got {self.criterion!r}")
        self.sizing()
        self.field_params().validate(self.parties)
        return self

    def eval_mode(self) -> str:
        if self.evaluate != "auto":
            return self.evaluate
        return "reconstruct" if self.transport == "sim" else "private"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        lines = [CONFIG_HEADER]
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name} = {'' if value is None else value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        cfg = cls()
        for key, raw in values.items():
            set_field(cfg, key, raw)
        return cfg

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
        return cls.from_dict(values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.parse(Path(path).read_text())


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def set_field(cfg: RunConfig, key: str, raw) -> None:
    key = key.replace("-", "_")
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = str(_FIELD_TYPES[key])
    if raw is None or (isinstance(raw, str) and raw.strip() in ("", "none", "None")):
        if "None" not in kind:
            raise ConfigError(f"{key} needs a value")
        setattr(cfg, key, None)
        return
    try:
        if kind.startswith("int"):
            value = int(raw)
        elif kind.startswith("float"):
            value = float(raw)
        elif kind.startswith("bool"):
            value = raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes", "on")
        else:
            value = str(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    setattr(cfg, key, value)


# --- reports ------------------------------------------------------------------

@dataclass
class RunReport:
    kind: str
    config: dict
    status: str = "ok"
    stage: str = ""
    error: str | None = None
    test_ll: float | None = None
    valid_lls: dict | None = None
    forest: dict = field(default_factory=dict)
    partition: dict = field(default_factory=dict)
    wall_seconds: float = 0.0
    elapsed_seconds: float = 0.0
    traffic: dict = field(default_factory=dict)
    tasks: dict = field(default_factory=dict)
    exercises: dict = field(default_factory=dict)
    inference: dict | None = None
    params: str | None = None  # debug dump, simulated transport only

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def rows(self) -> list[dict]:
        """One flat record per node, easy to aggregate into tables."""
        base = {"kind": self.kind, "status": self.status, "dataset": self.config.get("dataset"),
                "parties": self.config.get("parties"), "seed": self.config.get("seed"),
                "test_ll": self.test_ll, "wall_seconds": self.wall_seconds}
        if not self.traffic:
            return [base]
        return [base | {"node": int(n), **counts} for n, counts in sorted(self.traffic.items(), key=lambda x: int(x[0]))]

    def table(self) -> str:
        lines = [f"{self.kind} run: {self.status}" + (f" (failed at {self.stage}: {self.error})" if self.error else "")]
        if self.test_ll is not None:
            lines.append(f"mean test log-likelihood: {self.test_ll:.4f}")
        if self.forest:
            lines.append("forest: " + ", ".join(f"{k}={v}" for k, v in self.forest.items() if k != "hash"))
        lines.append(f"time: {self.wall_seconds:.3f} s (cpu + network), elapsed {self.elapsed_seconds:.3f} s")
        if self.tasks:
            lines.append(f"{'task':<26}{'count':>8}{'seconds':>12}")
            for name, t in self.tasks.items():
                lines.append(f"{name:<26}{t['count']:>8}{t['seconds']:>12.3f}")
        if self.traffic:
            lines.append(f"{'node':<6}{'bytes in':>14}{'bytes out':>14}{'messages':>10}")
            for n, c in sorted(self.traffic.items(), key=lambda x: int(x[0])):
                lines.append(f"{n!s:<6}{c['bytes_in']:>14}{c['bytes_out']:>14}{c['messages_out']:>10}")
        if self.inference:
            lines.append("inference: " + ", ".join(f"{k}={v}" for k, v in self.inference.items()
                                                    if not isinstance(v, list)))
        return "\n".join(lines)

    def write(self, directory) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        with open(out / "rows.jsonl", "w") as fh:
            for row in self.rows():
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        (out / "report.txt").write_text(self.table() + "\n")
        return out


# --- shared plumbing ----------------------------------------------------------

@dataclass
class Prepared:
    cfg: RunConfig
    ds: BinaryDataset
    plan: object
    forest: Forest


def prepare(cfg: RunConfig, ds: BinaryDataset | None = None) -> Prepared:
    cfg.validate()
    ds = ds if ds is not None else load_dataset(cfg.dataset, strict=False)
    if ds.test is None:
        raise ConfigError(f"dataset {ds.name} has no test split")
    plan = partition(ds, cfg.regime, cfg.parties, cfg.seed, cfg.beta, cfg.valid_fraction)
    for party, size in plan.sizes().items():
        if size < 2:
            raise ConfigError(f"party {party} received {size} rows; choose another seed or regime")
    size = cfg.sizing()
    fseed = cfg.seed if cfg.forest_seed is None else cfg.forest_seed
    forest = generate_forest(ds.num_vars, size["K"], size["D"], size["R"], size["S"], size["I"], seed=fseed)
    return Prepared(cfg, ds, plan, forest)


def _forest_info(forest: Forest) -> dict:
    return {"K": forest.K, "sum_params": forest.num_sum_params, "leaves": forest.num_leaves,
            "nodes": sum(len(s.nodes) for s in forest.structures), "hash": forest_hash(forest)}


def _test_rows(prep: Prepared) -> np.ndarray:
    rows = prep.ds.test
    return rows[: prep.cfg.eval_rows] if prep.cfg.eval_rows else rows


def open_session(cfg: RunConfig, n_clients: int = 1):
    """(session, closer) for the configured transport."""
    fp = cfg.field_params()
    if cfg.transport == "sim":
        s = simulated_session(cfg.parties, fp, cfg.threshold, cfg.latency_ms, cfg.seed, n_clients)
        return s, s.close
    cluster = tcp_session(cfg.parties, fp, cfg.threshold, cfg.latency_ms, cfg.seed, n_clients,
                          spawn=cfg.spawn, host=cfg.host)
    return cluster.session, cluster.close


def _fill_meter(report: RunReport, session) -> None:
    meter = session.meter_report()
    report.traffic = {str(k): v for k, v in meter["traffic"].items()}
    report.tasks = meter["tasks"]
    report.exercises = meter["exercises"]
    report.wall_seconds = meter["wall_seconds"]


def infer_private(session, model: PrivateModel, rows, querier: int | None = None) -> InferenceResult:
    """Evidence ``rows`` held by ``querier`` (default: the first external client) queried privately."""
    querier = querier if querier is not None else session.clients[0]
    engines = session.backend.engines
    engines[querier].private["query"] = np.asarray(rows)
    return private_inference(session, model, querier, len(rows))


# --- runs ---------------------------------------------------------------------

class PrivateRun:
    """A trained private forest that stays queryable; ``close`` tears the network down."""

    def __init__(self, report: RunReport, session=None, closer=None, model=None, prep=None):
        self.report = report
        self.session = session
        self.closer = closer
        self.model = model
        self.prep = prep
        self.lock = threading.Lock()  # one exercise stream per session

    def close(self):
        if self.closer:
            self.closer()
            self.closer = None


def run_private(cfg: RunConfig, ds: BinaryDataset | None = None, keep: bool = False) -> RunReport | PrivateRun:
    """Network setup, forest, local EM, weights, sum and leaf parameters, evaluation, inference.

    Failures in any stage yield a report with ``status="failed"`` and the stage name.
    With ``keep`` the network stays up and a :class:`PrivateRun` is returned.
    """
    start = time.perf_counter()
    report = RunReport("private", cfg.to_dict())
    session = closer = model = prep = None
    try:
        report.stage = "config"
        prep = prepare(cfg, ds)
        report.forest = _forest_info(prep.forest)
        report.partition = {str(k): v for k, v in prep.plan.sizes().items()}
        report.stage = "setup_network"
        session, closer = open_session(cfg)
        report.stage = "generate_forest"
        hashes = {r["hash"] for n, r in session.local("load_forest", text=serialize_forest(prep.forest)).items()}
        if hashes != {report.forest["hash"]}:
            raise PrivSpnError("members rebuilt different forests")
        report.stage = "load_data"
        if cfg.transport == "sim":
            for m in session.members:
                set_local_data(session.backend.engines[m], *prep.plan.split(prep.ds, m))
        else:
            out = Path(cfg.output or ".")
            out.mkdir(parents=True, exist_ok=True)
            write_plan(prep.plan, out / "plan.txt")
            session.local("load_data", dataset=cfg.dataset, plan=str((out / "plan.txt").resolve()))
        report.stage = "local_training"
        session.local("train", criterion=cfg.criterion, scheme=cfg.scheme, alpha=cfg.alpha,
                      pseudocount=cfg.pseudocount)
        report.stage = "private_parameters"
        model = private_training(session, prep.forest, batched=cfg.divisions == "batched")
        report.stage = "evaluate"
        mode = cfg.eval_mode()
        if mode == "reconstruct":
            plain = reconstruct_model(session, model)
            report.test_ll = forest_log_likelihood(plain, _test_rows(prep))
            if cfg.debug:
                report.params = serialize_forest(plain, params=True) + "weights " + " ".join(
                    repr(w) for w in plain.weights) + "\n"
        elif mode == "private":
            result = infer_private(session, model, _test_rows(prep))
            report.test_ll = float(np.mean([math.log(max(p, 1e-12)) for p in result.probabilities]))
        if cfg.infer_rows:
            report.stage = "inference"
            rows = prep.ds.test[: cfg.infer_rows]
            before = session.backend.meter_snapshot() if cfg.transport == "sim" else None
            t0 = time.perf_counter()
            result = infer_private(session, model, rows)
            report.inference = {"rows": len(rows), "seconds": time.perf_counter() - t0,
                                "probabilities": result.probabilities, "underflow": result.underflow,
                                "resolution": result.resolution}
            if before is not None:
                after = session.backend.meter_snapshot()
                report.inference["manager_bytes"] = (after[0]["bytes_in"] + after[0]["bytes_out"]
                                                     - before[0]["bytes_in"] - before[0]["bytes_out"])
        report.stage = "done"
        _fill_meter(report, session)
    except PrivSpnError as exc:
        report.status = "failed"
        report.error = f"{type(exc).__name__}: {exc}"
        if session is not None:
            try:
                _fill_meter(report, session)
            except PrivSpnError:
                pass
    report.elapsed_seconds = time.perf_counter() - start
    if cfg.output:
        report.write(cfg.output)
    if keep and report.status == "ok":
        return PrivateRun(report, session, closer, model, prep)
    if closer:
        closer()
    return report


def local_results(prep: Prepared):
    cfg = prep.cfg
    crit = Criterion.parse(cfg.criterion)
    return [local_training(prep.forest, *prep.plan.split(prep.ds, n), crit, cfg.scheme, cfg.alpha,
                           cfg.pseudocount)
            for n in range(1, cfg.parties + 1)]


def run_baseline(cfg: RunConfig, kind: str = "distributed_nonprivate",
                 ds: BinaryDataset | None = None) -> RunReport:
    """``pooled``: one party trains on everyone's data; ``distributed_nonprivate``: counts aggregated in the clear."""
    if kind not in ("pooled", "distributed_nonprivate"):
        raise ConfigError("baseline kind must be pooled or distributed_nonprivate")
    start = time.perf_counter()
    report = RunReport(kind, cfg.to_dict())
    prep = prepare(cfg, ds)
    report.forest = _forest_info(prep.forest)
    report.partition = {str(k): v for k, v in prep.plan.sizes().items()}
    crit = Criterion.parse(cfg.criterion)
    if kind == "pooled":
        train = np.vstack([prep.plan.split(prep.ds, n)[0] for n in range(1, cfg.parties + 1)])
        valid = np.vstack([prep.plan.split(prep.ds, n)[1] for n in range(1, cfg.parties + 1)])
        res = local_training(prep.forest, train, valid, crit, cfg.scheme, cfg.alpha, cfg.pseudocount)
        model = Forest(res.structures, res.weights)
        report.valid_lls = {"pooled": res.valid_lls}
    else:
        results = local_results(prep)
        model = aggregate_plain(prep.forest, results, cfg.pseudocount)
        report.valid_lls = {str(n): r.valid_lls for n, r in enumerate(results, start=1)}
    report.test_ll = forest_log_likelihood(model, _test_rows(prep))
    if cfg.debug:
        report.params = serialize_forest(model, params=True)
    report.stage = "done"
    report.elapsed_seconds = report.wall_seconds = time.perf_counter() - start
    if cfg.output:
        report.write(cfg.output)
    return report


BENCH_COLUMNS = ("parties", "manager_mb", "member_mb", "seconds", "rows")


def run_inference_bench(cfg: RunConfig, parties: list[int], rows: int = 10,
                        ds: BinaryDataset | None = None) -> list[dict]:
    """Train once per party count, then time and meter ``rows`` private queries.

    Traffic is reported in MB (10^6 bytes) for the manager and for member 1;
    time is CPU plus virtual network time on the simulated transport, wall
    time on TCP.
    """
    table = []
    for n in parties:
        c = dataclasses.replace(cfg, parties=n, infer_rows=0, evaluate="none", output=None)
        run = run_private(c, ds, keep=True)
        if isinstance(run, RunReport):
            raise PrivSpnError(f"training for N={n} failed at {run.stage}: {run.error}")
        try:
            s = run.session
            before = s.backend.meter_snapshot()
            clock = s.backend.network_seconds
            t0 = time.perf_counter()
            infer_private(s, run.model, run.prep.ds.test[:rows])
            seconds = time.perf_counter() - t0 + (s.backend.network_seconds - clock)
            after = s.backend.meter_snapshot()
        finally:
            run.close()

        def moved(node):
            return (after[node]["bytes_in"] + after[node]["bytes_out"]
                    - before[node]["bytes_in"] - before[node]["bytes_out"])

        table.append({"parties": n, "manager_mb": moved(0) / 1e6, "member_mb": moved(1) / 1e6,
                      "seconds": seconds, "rows": rows})
    return table


def bench_table(rows: list[dict]) -> str:
    lines = [f"{'parties':>8}{'manager I+O (MB)':>18}{'member I+O (MB)':>18}{'time (s)':>10}"]
    for r in rows:
        lines.append(f"{r['parties']:>8}{r['manager_mb']:>18.3f}{r['member_mb']:>18.3f}{r['seconds']:>10.3f}")
    return "\n".join(lines)
