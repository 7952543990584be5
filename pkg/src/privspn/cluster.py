"""Real TCP deployments: member threads or processes plus a manager-side :class:`Session`."""

from __future__ import annotations

import random
import socket
import subprocess
import sys
import threading
from dataclasses import dataclass, field

from .errors import SetupError
from .field import FieldParams
from .mpc import MemberEngine, Session, TcpBackend, serve_member
from .shamir import SharingParams
from .transport import MANAGER_ID, NodeIdentity, TcpNode


def free_ports(count: int, host: str = "127.0.0.1") -> list[int]:
    socks = []
    try:
        for _ in range(count):
            s = socket.socket()
            s.bind((host, 0))
            socks.append(s)
        return [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()


def format_nodes(identities: list[NodeIdentity]) -> str:
    return ",".join(f"{i.node_id}={i.host}:{i.port}" for i in identities)


def parse_nodes(text: str) -> list[NodeIdentity]:
    out = []
    for item in text.split(","):
        nid, addr = item.split("=")
        host, port = addr.rsplit(":", 1)
        out.append(NodeIdentity(int(nid), host, int(port)))
    return out


def _member_rng(seed, node):
    return random.SystemRandom() if seed is None else random.Random(f"{seed}:{node}")


def run_member(node_id: int, identities: list[NodeIdentity], n_parties: int, fp: FieldParams,
               threshold_degree=None, latency_ms: float = 0.0, seed=None, timeout: float = 30.0) -> None:
    """Body of one member process: join the mesh, then serve exercises until shutdown."""
    node = TcpNode(node_id, identities, latency_ms)
    node.listen()
    node.connect(timeout)
    engine = MemberEngine(node_id, n_parties, fp, SharingParams(n_parties, threshold_degree),
                          _member_rng(seed, node_id))
    try:
        serve_member(node, engine)
    finally:
        node.close()


@dataclass
class Cluster:
    session: Session
    threads: list[threading.Thread] = field(default_factory=list)
    processes: list[subprocess.Popen] = field(default_factory=list)

    def close(self):
        self.session.close()
        for t in self.threads:
            t.join(timeout=10)
        for p in self.processes:
            try:
                p.wait(timeout=10)
            except subprocess.TimeoutExpired:
                p.kill()


def tcp_session(n_parties: int, fp: FieldParams | None = None, threshold_degree=None,
                latency_ms: float = 0.0, seed: int | None = 0, n_clients: int = 0,
                spawn: str = "thread", host: str = "127.0.0.1", ports: list[int] | None = None,
                timeout: float = 30.0) -> Cluster:
    """Start a manager here and N members as threads or ``privspn member`` processes.

    Clients (ids N+1..) are share-less nodes hosted in this process, so their
    revealed results are readable here.
    """
    fp = (fp or FieldParams()).validate(n_parties)
    sharing = SharingParams(n_parties, threshold_degree)
    total = n_parties + n_clients + 1
    ports = ports or free_ports(total, host)
    if len(ports) != total:
        raise SetupError(f"need {total} ports, got {len(ports)}")
    identities = [NodeIdentity(i, host, port) for i, port in enumerate(ports)]
    cluster = Cluster(session=None)
    members = list(range(1, n_parties + 1))
    if spawn == "thread":
        for m in members:
            t = threading.Thread(target=run_member, daemon=True,
                                 args=(m, identities, n_parties, fp, threshold_degree, latency_ms, seed, timeout))
            t.start()
            cluster.threads.append(t)
    elif spawn == "process":
        for m in members:
            cmd = [sys.executable, "-m", "privspn.cli", "member", "--id", str(m),
                   "--nodes", format_nodes(identities), "--parties", str(n_parties),
                   "--p", str(fp.p), "--d", str(fp.d), "--precision-t", str(fp.precision_t),
                   "--truncate-n", str(fp.truncate_n), "--latency-ms", str(latency_ms)]
            if threshold_degree is not None:
                cmd += ["--threshold", str(threshold_degree)]
            if seed is not None:
                cmd += ["--seed", str(seed)]
            cluster.processes.append(subprocess.Popen(cmd))
    else:
        raise SetupError(f"unknown spawn mode {spawn!r}")

    engines = {}
    for c in range(n_parties + 1, total):
        engines[c] = MemberEngine(c, n_parties, fp, sharing, _member_rng(seed, c))
        node = TcpNode(c, identities, latency_ms)
        node.listen()
        t = threading.Thread(target=_client_loop, args=(node, engines[c], timeout), daemon=True)
        t.start()
        cluster.threads.append(t)

    manager = TcpNode(MANAGER_ID, identities, latency_ms)
    manager.listen()
    try:
        manager.connect(timeout)
    except SetupError:
        for p in cluster.processes:
            p.kill()
        raise
    backend = TcpBackend(manager, list(range(1, total)))
    backend.engines = engines
    session = Session(backend, n_parties, fp, sharing, clients=tuple(range(n_parties + 1, total)))
    session.run("init_network")
    cluster.session = session
    return cluster


def _client_loop(node: TcpNode, engine: MemberEngine, timeout: float):
    node.connect(timeout)
    try:
        serve_member(node, engine)
    finally:
        node.close()
