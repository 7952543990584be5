"""Command line client.

Every experiment subcommand talks to the HTTP service: a running server when
``--url`` is given, otherwise an in-process instance. ``serve`` starts the
server and ``member`` runs one member node of a TCP deployment.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .cluster import parse_nodes, run_member
from .data import parse_rows
from .errors import PrivSpnError
from .field import FieldParams
from .runner import RunConfig, set_field

HELP = {
    "dataset": "dataset path, $PRIVSPN_DATA name, or synthetic:<name>",
    "regime": "iid, dirichlet or clustered",
    "beta": "Dirichlet concentration for the dirichlet regime",
    "parties": "number of data-holding members N",
    "preset": "sum-parameter preset (24, 40, 60, 100)",
    "scheme": "structure weighting: uniform, rank, loglik, loglik_squared",
    "criterion": "local EM stop rule: an iteration count or mu=<relative gain>",
    "p": "field prime",
    "d": "fixed-point scale",
    "precision_t": "Newton precision bits t",
    "truncate_n": "truncation level count (-1: ceil(log2 d))",
    "threshold": "sharing polynomial degree (default ceil(N/2)-1)",
    "transport": "sim or tcp",
    "spawn": "tcp members as threads or processes",
    "evaluate": "test LL: auto, reconstruct (sim only), private, none",
    "debug": "dump reconstructed parameters (sim only)",
    "output": "directory for report.json, rows.jsonl and report.txt",
}


class Client:
    """JSON over HTTP, to a remote server or an in-process app."""

    def __init__(self, url: str | None = None, timeout: float = 3600.0):
        if url:
            import httpx
            self.http = httpx.Client(base_url=url, timeout=timeout)
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DeprecationWarning)
                from fastapi.testclient import TestClient

            from .service.app import create_app
            self.http = TestClient(create_app(), raise_server_exceptions=False)

    def call(self, method: str, path: str, body=None) -> dict:
        resp = self.http.request(method, path, json=body)
        data = resp.json()
        if resp.status_code >= 400:
            detail = data.get("detail", data) if isinstance(data, dict) else data
            name = data.get("error", "error") if isinstance(data, dict) else "error"
            raise SystemExit(f"{name} ({resp.status_code}): {detail}")
        return data

    def close(self):
        self.http.close()


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value run configuration file")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool",):
            parser.add_argument(flag, dest=f.name, action="store_true", default=None, help=HELP.get(f.name))
        else:
            parser.add_argument(flag, dest=f.name, default=None, help=HELP.get(f.name))


def config_from(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for f in dataclasses.fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            set_field(cfg, f.name, value)
    return cfg


def wire_config(cfg: RunConfig) -> dict:
    # validate here too, so bad flags fail before any request
    cfg.validate()
    return cfg.to_dict()


def emit(args, table: str, rows) -> None:
    if args.json:
        for row in rows:
            print(json.dumps(row, sort_keys=True))
    else:
        print(table)


def read_evidence(path: str) -> list[list[int]]:
    return parse_rows(Path(path)).astype(int).tolist()


# --- subcommands --------------------------------------------------------------

def cmd_partition(args, client: Client):
    body = {"dataset": args.dataset, "regime": args.regime, "beta": args.beta, "parties": args.parties,
            "seed": args.seed, "valid_fraction": args.valid_fraction}
    out = client.call("POST", "/partition", body)
    if args.output:
        path = Path(args.output)
        if path.suffix == "":
            path.mkdir(parents=True, exist_ok=True)
            path = path / "plan.txt"
        path.write_text(out["plan"])
    rows = [{"party": int(k), "rows": v} for k, v in out["sizes"].items()]
    table = "\n".join([f"dataset: {out['dataset']}"] + [f"party {r['party']}: {r['rows']} rows" for r in rows])
    emit(args, table, rows)


def cmd_train(args, client: Client):
    cfg = config_from(args)
    out = client.call("POST", "/train", {"config": wire_config(cfg), "keep": bool(args.keep)})
    emit(args, out["table"] + (f"\nrun id: {out['run_id']}" if out["live"] else ""), out["rows"])
    return 0 if out["report"]["status"] == "ok" else 1


def cmd_baseline(args, client: Client):
    cfg = config_from(args)
    out = client.call("POST", "/baseline", {"config": wire_config(cfg), "kind": args.kind})
    emit(args, out["table"], out["rows"])


def cmd_infer(args, client: Client):
    if args.run_id:
        run_id = args.run_id
    else:
        cfg = dataclasses.replace(config_from(args), infer_rows=0)
        trained = client.call("POST", "/train", {"config": wire_config(cfg), "keep": True})
        if not trained["live"]:
            raise SystemExit(trained["table"])
        run_id = trained["run_id"]
    if args.shares:
        body = {"shares": json.loads(Path(args.shares).read_text())}
    elif args.evidence:
        body = {"evidence": read_evidence(args.evidence)}
    else:
        raise SystemExit("infer needs --evidence or --shares")
    out = client.call("POST", f"/runs/{run_id}/infer", body)
    rows = [{"row": i, "probability": p, "raw": r, "underflow": u}
            for i, (p, r, u) in enumerate(zip(out["probabilities"], out["raw"], out["underflow"]))]
    table = "\n".join([f"{'row':>5}{'probability':>16}{'raw':>14}  underflow"]
                      + [f"{r['row']:>5}{r['probability']:>16.8g}{r['raw']:>14}  {r['underflow']}" for r in rows]
                      + [f"resolution {out['resolution']} at d={out['d']}, {out['seconds']:.3f} s"])
    emit(args, table, rows)
    if not args.run_id:
        client.call("DELETE", f"/runs/{run_id}")


def cmd_bench(args, client: Client):
    cfg = config_from(args)
    parties = [int(x) for x in args.party_counts.split(",")]
    out = client.call("POST", "/bench", {"config": wire_config(cfg), "parties": parties, "rows": args.rows})
    emit(args, out["table"], out["rows"])
    if cfg.output:
        Path(cfg.output).mkdir(parents=True, exist_ok=True)
        with open(Path(cfg.output) / "bench.jsonl", "w") as fh:
            for row in out["rows"]:
                fh.write(json.dumps(row | {"config": cfg.to_dict()}, sort_keys=True) + "\n")


def cmd_serve(args):
    import uvicorn

    uvicorn.run("privspn.service.app:app", host=args.host, port=args.port, log_level=args.log_level)


def cmd_member(args):
    fp = FieldParams(int(args.p), int(args.d), args.precision_t, args.truncate_n)
    run_member(args.id, parse_nodes(args.nodes), args.parties, fp, args.threshold, args.latency_ms,
               args.seed, args.timeout)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="privspn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def client_flags(p):
        p.add_argument("--url", help="service base URL (default: run in-process)")
        p.add_argument("--json", action="store_true", help="print machine-readable rows instead of the table")

    p = sub.add_parser("partition", help="split a dataset across parties and write the plan file")
    client_flags(p)
    p.add_argument("--dataset", default="synthetic:nltcs")
    p.add_argument("--regime", default="iid", choices=["iid", "dirichlet", "clustered"])
    p.add_argument("--beta", type=float)
    p.add_argument("--parties", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--valid-fraction", type=float, default=0.1)
    p.add_argument("--output", help="plan file, or a directory to hold plan.txt")
    p.set_defaults(run=cmd_partition)

    p = sub.add_parser("train", help="private forest training end to end")
    client_flags(p)
    add_config_flags(p)
    p.add_argument("--keep", action="store_true", help="keep the trained run live on the server")
    p.set_defaults(run=cmd_train)

    p = sub.add_parser("baseline", help="pooled or distributed non-private training")
    client_flags(p)
    add_config_flags(p)
    p.add_argument("--kind", default="distributed_nonprivate", choices=["pooled", "distributed_nonprivate"])
    p.set_defaults(run=cmd_baseline)

    p = sub.add_parser("infer", help="private inference on evidence rows")
    client_flags(p)
    add_config_flags(p)
    p.add_argument("--run-id", help="query a live run on the server instead of training one")
    p.add_argument("--evidence", help="CSV of binary evidence rows")
    p.add_argument("--shares", help="JSON [row][var] -> {member: share} prepared by the querier")
    p.set_defaults(run=cmd_infer)

    p = sub.add_parser("bench", help="inference timing and traffic per party count")
    client_flags(p)
    add_config_flags(p)
    p.add_argument("--party-counts", default="3", help="comma-separated N values")
    p.add_argument("--rows", type=int, default=10)
    p.set_defaults(run=cmd_bench)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--log-level", default="info")
    p.set_defaults(run=None, local=cmd_serve)

    p = sub.add_parser("member", help="run one member node of a TCP deployment")
    p.add_argument("--id", type=int, required=True)
    p.add_argument("--nodes", required=True, help="0=host:port,1=host:port,...")
    p.add_argument("--parties", type=int, required=True)
    p.add_argument("--p", default=str(FieldParams().p))
    p.add_argument("--d", default=str(FieldParams().d))
    p.add_argument("--precision-t", type=int, default=24)
    p.add_argument("--truncate-n", type=int, default=-1)
    p.add_argument("--threshold", type=int)
    p.add_argument("--latency-ms", type=float, default=0.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--timeout", type=float, default=30.0)
    p.set_defaults(run=None, local=cmd_member)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.run is None:
            args.local(args)
            return 0
        client = Client(args.url)
        try:
            return args.run(args, client) or 0
        finally:
            client.close()
    except PrivSpnError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
