"""HTTP front end over the runner: partition, train, baseline, infer, bench.

Runs are synchronous; a trained private run stays live (its member network
up) until it is deleted, so later inference calls reuse the shared model.
"""

from __future__ import annotations

import threading
import time
import uuid
from contextlib import asynccontextmanager
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..data import format_plan, load_dataset, partition, write_plan
from ..errors import (ConfigError, DomainError, InputError, ParseError, PrivacyError, PrivSpnError,
                      ProtocolAbort, SetupError, ThresholdError)
from ..learn import private_inference
from ..runner import PrivateRun, RunReport, bench_table, run_baseline, run_inference_bench, run_private
from .schemas import (BaselineRequest, BenchRequest, BenchResponse, ErrorResponse, InferRequest,
                      InferResponse, PartitionRequest, PartitionResponse, RunResponse, TrainRequest)

STATUS = {
    ConfigError: 422, InputError: 422, ParseError: 422, DomainError: 422, ThresholdError: 422,
    PrivacyError: 403, SetupError: 502, ProtocolAbort: 502,
}


class Registry:
    """Finished reports and live private runs, keyed by run id."""

    def __init__(self):
        self.lock = threading.Lock()
        self.runs: dict[str, PrivateRun | RunReport] = {}

    def add(self, run) -> str:
        run_id = uuid.uuid4().hex[:12]
        with self.lock:
            self.runs[run_id] = run
        return run_id

    def get(self, run_id: str):
        with self.lock:
            run = self.runs.get(run_id)
        if run is None:
            raise HTTPException(404, f"no run {run_id}")
        return run

    def drop(self, run_id: str):
        with self.lock:
            run = self.runs.pop(run_id, None)
        if run is None:
            raise HTTPException(404, f"no run {run_id}")
        if isinstance(run, PrivateRun):
            run.close()

    def close_all(self):
        with self.lock:
            runs, self.runs = list(self.runs.values()), {}
        for run in runs:
            if isinstance(run, PrivateRun):
                run.close()


def _response(report: RunReport, run_id=None, live=False) -> RunResponse:
    return RunResponse(run_id=run_id, live=live, report=report.to_dict(), rows=report.rows(),
                       table=report.table())


def create_app() -> FastAPI:
    registry = Registry()

    @asynccontextmanager
    async def lifespan(_app):
        yield
        registry.close_all()

    app = FastAPI(title="privspn", version=__version__, lifespan=lifespan)
    app.state.registry = registry

    @app.exception_handler(PrivSpnError)
    async def _domain_error(request: Request, exc: PrivSpnError):
        code = next((c for cls, c in STATUS.items() if isinstance(exc, cls)), 500)
        body = ErrorResponse(error=type(exc).__name__, detail=str(exc))
        return JSONResponse(body.model_dump(), status_code=code)

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__, "runs": len(registry.runs)}

    @app.post("/partition", response_model=PartitionResponse)
    def do_partition(req: PartitionRequest):
        ds = load_dataset(req.dataset, strict=False)
        plan = partition(ds, req.regime, req.parties, req.seed, req.beta, req.valid_fraction)
        path = None
        if req.output:
            path = Path(req.output)
            if path.suffix == "":
                path.mkdir(parents=True, exist_ok=True)
                path = path / "plan.txt"
            write_plan(plan, path)
        return PartitionResponse(dataset=ds.stats(), sizes=plan.sizes(), plan=format_plan(plan),
                                 path=str(path) if path else None)

    @app.post("/train", response_model=RunResponse)
    def do_train(req: TrainRequest):
        run = run_private(req.config, keep=req.keep)
        if isinstance(run, PrivateRun):
            return _response(run.report, registry.add(run), live=True)
        return _response(run, registry.add(run))

    @app.post("/baseline", response_model=RunResponse)
    def do_baseline(req: BaselineRequest):
        report = run_baseline(req.config, req.kind)
        return _response(report, registry.add(report))

    @app.get("/runs/{run_id}", response_model=RunResponse)
    def get_run(run_id: str):
        run = registry.get(run_id)
        if isinstance(run, PrivateRun):
            return _response(run.report, run_id, live=True)
        return _response(run, run_id)

    @app.delete("/runs/{run_id}")
    def delete_run(run_id: str):
        registry.drop(run_id)
        return {"deleted": run_id}

    @app.post("/runs/{run_id}/infer", response_model=InferResponse)
    def do_infer(run_id: str, req: InferRequest):
        run = registry.get(run_id)
        if not isinstance(run, PrivateRun):
            raise HTTPException(409, f"run {run_id} is not a live private run")
        if (req.evidence is None) == (req.shares is None):
            raise InputError("give exactly one of evidence or shares")
        with run.lock:
            return _infer(run, req)

    @app.post("/bench", response_model=BenchResponse)
    def do_bench(req: BenchRequest):
        rows = run_inference_bench(req.config, req.parties, req.rows)
        return BenchResponse(rows=rows, table=bench_table(rows))

    return app


def _infer(run: PrivateRun, req: InferRequest) -> InferResponse:
    session = run.session
    querier = session.clients[0]
    engine = session.backend.engines[querier]
    n_vars = run.model.forest.structures[0].num_vars
    engine.private.pop("query", None)
    if req.evidence is not None:
        rows = np.asarray(req.evidence)
        if rows.ndim != 2 or rows.shape[1] != n_vars or not np.isin(rows, (0, 1)).all():
            raise InputError(f"evidence must be rows of {n_vars} binary values")
        engine.private["query"] = rows
        n_rows = len(rows)
    else:
        n_rows = len(req.shares)
        for r, row in enumerate(req.shares):
            if len(row) != n_vars:
                raise InputError(f"share row {r} has {len(row)} entries, expected {n_vars}")
            for v, cell in enumerate(row):
                if set(cell) != set(session.members):
                    raise InputError(f"share ({r}, {v}) must hold one value per member")
                engine.private[f"query:{r}:{v}"] = {int(j): int(s) for j, s in cell.items()}
    t0 = time.perf_counter()
    result = private_inference(session, run.model, querier, n_rows)
    return InferResponse(probabilities=result.probabilities, raw=[str(x) for x in result.raw],
                         underflow=result.underflow, resolution=result.resolution,
                         d=session.fp.d, seconds=time.perf_counter() - t0)


app = create_app()
