"""Secure arithmetic over Shamir shares, split into member and manager halves.

Each member runs a :class:`MemberEngine`. Every protocol is a generator that
yields :class:`Round` objects (messages to send, senders to wait for) and is
resumed with the payloads it waited for, so one implementation runs over the
simulated network or TCP unchanged.

The manager drives a :class:`Session`: it allocates value ids, schedules
exercises and receives acknowledgements, but never holds a share.
"""

from __future__ import annotations

import inspect
import math
import random
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable

from . import shamir
from .errors import ConfigError, PrivacyError, ProtocolAbort, ScaleError
from .field import FieldParams
from .shamir import Share, SharingParams
from .transport import MANAGER_ID, ExerciseMessage, SimulatedNetwork, TcpNode

INTEGER, FIXED_D, FIXED_D2 = "integer", "fixed_d", "fixed_d2"

# exercise kind -> reporting category
CATEGORIES = {
    "truncation": "truncation",
    "approx_modulo": "truncation",
    "multiplication": "multiplication",
    "share_values": "share_values",
    "addition": "addition",
    "subtraction": "subtraction",
    "local:train": "local_structure_training",
    "init_network": "init_network",
}
REPORT_CATEGORIES = ["truncation", "multiplication", "share_values", "addition",
                     "subtraction", "local_structure_training", "init_network", "other"]

# name -> fn(engine, **args) -> public metadata dict
LOCAL_TASKS: dict[str, Callable] = {}


def local_task(name: str):
    def register(fn):
        LOCAL_TASKS[name] = fn
        return fn
    return register


@dataclass
class Round:
    step: str
    sends: dict[int, list[int]] = field(default_factory=dict)
    expect: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class SharedValue:
    """Manager-side handle: the id members file their shares under, plus its scale."""

    value_id: int
    scale: str = INTEGER


@dataclass(frozen=True)
class DivisionConfig:
    d: int
    precision_t: int
    warmup: int
    bound_M: int
    error_k: int

    @classmethod
    def default(cls, fp: FieldParams, n_parties: int) -> "DivisionConfig":
        t = fp.precision_t
        bound = max(fp.d**2, fp.d * 2 ** (2 * t + 2))
        return cls(fp.d, t, fp.truncate_n, bound, n_parties + 1)

    @property
    def iterations(self) -> int:
        return self.warmup + math.ceil(math.log2(self.precision_t))

    @property
    def relative_error_bound(self) -> float:
        return 16 * (self.error_k + 1) / 2**self.precision_t

    def validate(self, p: int, n_parties: int) -> "DivisionConfig":
        if self.precision_t <= math.log2(5 + math.log(self.error_k + 1)):
            raise ConfigError(f"precision_t={self.precision_t} too small for k={self.error_k}")
        if self.bound_M >= p:
            raise ConfigError("bound_M must be below p")
        if (p - self.bound_M) // n_parties < max(self.d, 2**self.precision_t):
            raise ConfigError("no masking room: (p - bound_M) / N is below the divisor")
        return self


def _mul_scale(a: str, b: str) -> str:
    if a == INTEGER:
        return b
    if b == INTEGER:
        return a
    if a == b == FIXED_D:
        return FIXED_D2
    raise ScaleError(f"cannot multiply scales {a} and {b}; truncate first")


def _drop_scale(scale: str) -> str:
    return {FIXED_D2: FIXED_D, FIXED_D: INTEGER}.get(scale, scale)


class MemberEngine:
    """Protocol state of one node: its shares and its private plaintext."""

    def __init__(self, node_id: int, n_parties: int, fp: FieldParams,
                 sharing: SharingParams, rng: random.Random):
        self.node_id = node_id
        self.n = n_parties
        self.fp = fp
        self.p = fp.p
        self.sharing = sharing
        self.rng = rng
        self.shares: dict[int, int] = {}
        self.private: dict = {}
        self.revealed: dict[int, int] = {}

    @property
    def holds_shares(self) -> bool:
        return 1 <= self.node_id <= self.n

    @property
    def members(self) -> range:
        return range(1, self.n + 1)

    def others(self) -> list[int]:
        return [j for j in self.members if j != self.node_id]

    def _share_vector(self, secret: int) -> list[Share]:
        return shamir.make_shares(secret % self.p, self.sharing, self.rng, self.p)

    def execute(self, kind: str, args: dict):
        if kind.startswith("local:"):
            return LOCAL_TASKS[kind[6:]](self, **args) or {}
        proto = getattr(self, "_do_" + kind)
        result = proto(**args)
        if inspect.isgenerator(result):
            result = yield from result
        return result or {}

    # -- zero-round protocols -------------------------------------------------

    def _do_init_network(self, **_):
        return {"node": self.node_id}

    def _do_addition(self, items):
        if self.holds_shares:
            for a, b, out in items:
                self.shares[out] = (self.shares[a] + self.shares[b]) % self.p

    def _do_subtraction(self, items):
        if self.holds_shares:
            for a, b, out in items:
                self.shares[out] = (self.shares[a] - self.shares[b]) % self.p

    def _do_linear(self, items):
        """Public-coefficient ops: ``scale`` c*a, ``add`` a+c, ``rsub`` c-a, ``const`` c."""
        if not self.holds_shares:
            return
        s, p = self.shares, self.p
        for op, a, c, out in items:
            c = int(c)
            if op == "scale":
                s[out] = s[a] * c % p
            elif op == "add":
                s[out] = (s[a] + c) % p
            elif op == "rsub":
                s[out] = (c - s[a]) % p
            elif op == "const":
                s[out] = c % p
            else:
                raise ValueError(f"unknown linear op {op!r}")

    def _do_drop(self, ids):
        for i in ids:
            self.shares.pop(i, None)

    # -- communicating protocols ---------------------------------------------

    def _do_share_values(self, owner, keys, out):
        """``owner`` shares its private values ``keys``; members file them as ``out``."""
        me = self.node_id
        if me == owner:
            per_party = defaultdict(list)
            for key, vid in zip(keys, out):
                secret = self.private[key]
                # a dict {party: share} holds shares the owner prepared itself
                vector = ([Share(j, int(secret[j]) % self.p) for j in self.members]
                          if isinstance(secret, dict) else self._share_vector(int(secret)))
                for sh in vector:
                    if sh.party == me:
                        self.shares[vid] = sh.value
                    else:
                        per_party[sh.party].append(sh.value)
            yield Round("shares", dict(per_party), [])
        elif self.holds_shares:
            inbox = yield Round("shares", {}, [owner])
            for vid, value in zip(out, inbox[owner]):
                self.shares[vid] = value
        else:
            yield Round("shares")

    def _do_multiplication(self, items):
        """Local product, re-share with a fresh degree-t polynomial, recombine."""
        if not self.holds_shares:
            yield Round("reshare")
            return
        me, p = self.node_id, self.p
        k = 2 * self.sharing.t + 1
        lam = shamir.recombination_vector(k, p)
        own = []
        sends = defaultdict(list)
        if me <= k:
            for a, b, _ in items:
                for sh in self._share_vector(self.shares[a] * self.shares[b] % p):
                    if sh.party == me:
                        own.append(sh.value)
                    else:
                        sends[sh.party].append(sh.value)
        inbox = yield Round("reshare", dict(sends), [n for n in range(1, k + 1) if n != me])
        if me <= k:
            inbox[me] = own
        for idx, (_, _, out) in enumerate(items):
            self.shares[out] = sum(lam[n - 1] * inbox[n][idx] for n in range(1, k + 1)) % p

    def _do_truncation(self, items, divisor, bound, designated, approx=False):
        """Approximate modulo / truncation by a public ``divisor``.

        Each member masks with r_i < (p - bound)/N and m_i = r_i mod divisor.
        S = b + sum r_i is opened to ``designated``, which re-shares
        S mod divisor. Then y = S' - sum m_i is congruent to b and lies in
        (-N*divisor, divisor), so (b - y)/divisor is an exact integer in
        [floor(b/divisor), floor(b/divisor) + N].
        """
        if not self.holds_shares:
            for step in ("masks", "open", "reshare"):
                yield Round(step)
            return
        me, p, n = self.node_id, self.p, self.n
        rmax = (p - bound) // n
        own_r, own_m = [], []
        sends = defaultdict(list)
        for _ in items:
            r = self.rng.randrange(rmax)
            for sh_r, sh_m in zip(self._share_vector(r), self._share_vector(r % divisor)):
                if sh_r.party == me:
                    own_r.append(sh_r.value)
                    own_m.append(sh_m.value)
                else:
                    sends[sh_r.party] += [sh_r.value, sh_m.value]
        inbox = yield Round("masks", dict(sends), self.others())
        sum_r, sum_m = list(own_r), list(own_m)
        for j in self.others():
            vals = inbox[j]
            for idx in range(len(items)):
                sum_r[idx] += vals[2 * idx]
                sum_m[idx] += vals[2 * idx + 1]
        masked = [(self.shares[b] + r) % p for (b, _), r in zip(items, sum_r)]

        if me == designated:
            inbox = yield Round("open", {}, self.others())
            inbox[me] = masked
            reduced = []
            for idx in range(len(items)):
                pts = [Share(j, inbox[j][idx]) for j in self.members]
                reduced.append(shamir.reconstruct(pts, p) % divisor)
            own_s, sends = [], defaultdict(list)
            for value in reduced:
                for sh in self._share_vector(value):
                    if sh.party == me:
                        own_s.append(sh.value)
                    else:
                        sends[sh.party].append(sh.value)
            yield Round("reshare", dict(sends), [])
        else:
            yield Round("open", {designated: masked}, [])
            inbox = yield Round("reshare", {}, [designated])
            own_s = inbox[designated]

        inv_div = pow(divisor, -1, p)
        for idx, (b, out) in enumerate(items):
            y = (own_s[idx] - sum_m[idx]) % p
            if approx:
                self.shares[out] = (y + n * divisor) % p
            else:
                self.shares[out] = (self.shares[b] - y) * inv_div % p

    def _do_approx_modulo(self, items, divisor, bound, designated):
        return self._do_truncation(items, divisor, bound, designated, approx=True)

    def _do_reveal(self, ids, target):
        me = self.node_id
        if me == target:
            inbox = yield Round("open", {}, self.others())
            if self.holds_shares:
                inbox[me] = [self.shares[i] for i in ids]
            for idx, vid in enumerate(ids):
                pts = [Share(j, inbox[j][idx]) for j in sorted(inbox)]
                self.revealed[vid] = shamir.reconstruct(pts, self.p, self.sharing.t)
        elif self.holds_shares:
            yield Round("open", {target: [self.shares[i] for i in ids]}, [])
        else:
            yield Round("open")


# --- backends ---------------------------------------------------------------

def _descriptor(eid, node, kind, args):
    return ExerciseMessage(eid, "descriptor", MANAGER_ID, node, [], {"kind": kind, "args": args})


def _ack(eid, node, meta):
    return ExerciseMessage(eid, "ack", node, MANAGER_ID, [], meta)


class SimBackend:
    """Runs every node's generator in lockstep over a :class:`SimulatedNetwork`."""

    kind = "sim"

    def __init__(self, engines: dict[int, MemberEngine], network: SimulatedNetwork):
        self.engines = engines
        self.net = network

    def run(self, eid: int, kind: str, args: dict) -> dict[int, dict]:
        net, nodes = self.net, sorted(self.engines)
        for node in nodes:
            net.send(_descriptor(eid, node, kind, args))
        net.end_tick()
        gens, rounds, results = {}, {}, {}

        def advance(node, value):
            try:
                rounds[node] = gens[node].send(value)
            except StopIteration as stop:
                results[node] = stop.value or {}
                rounds.pop(node, None)
            except Exception as exc:
                raise ProtocolAbort(f"exercise {eid} ({kind}) failed at node {node}: {exc}") from exc

        for node in nodes:
            meta = net.recv(MANAGER_ID, node, eid, "descriptor").meta
            gens[node] = self.engines[node].execute(meta["kind"], meta["args"])
            advance(node, None)
        while rounds:
            for node, rnd in rounds.items():
                for rcpt, payload in rnd.sends.items():
                    net.send(ExerciseMessage(eid, f"{kind}/{rnd.step}", node, rcpt,
                                             [str(v) for v in payload]))
            net.end_tick()
            for node, rnd in list(rounds.items()):
                inbox = {
                    s: [int(v) for v in net.recv(s, node, eid, f"{kind}/{rnd.step}").payload]
                    for s in rnd.expect
                }
                advance(node, inbox)
        for node in nodes:
            net.send(_ack(eid, node, {"status": "ok", "result": results[node]}))
        net.end_tick()
        return {node: net.recv(node, MANAGER_ID, eid, "ack").meta["result"] for node in nodes}

    def meter_snapshot(self):
        return self.net.meter.snapshot()

    @property
    def network_seconds(self) -> float:
        return self.net.clock


def drive_generator(node: TcpNode, eid: int, kind: str, gen) -> dict:
    """Execute one member-side exercise over TCP."""
    if not inspect.isgenerator(gen):
        return gen
    try:
        rnd = next(gen)
        while True:
            step = f"{kind}/{rnd.step}"
            for rcpt, payload in rnd.sends.items():
                node.send(ExerciseMessage(eid, step, node.node_id, rcpt, [str(v) for v in payload]))
            inbox = {s: [int(v) for v in node.recv(s, eid, step).payload] for s in rnd.expect}
            rnd = gen.send(inbox)
    except StopIteration as stop:
        return stop.value or {}


def serve_member(node: TcpNode, engine: MemberEngine):
    """Member main loop: execute descriptors from the manager until ``shutdown``."""
    while True:
        desc = node.next_descriptor()
        kind, args, eid = desc.meta["kind"], desc.meta["args"], desc.exercise_id
        if kind == "shutdown":
            node.send(_ack(eid, node.node_id, {"status": "ok", "result": {}}))
            return
        try:
            if kind == "report_meter":
                result = {"meter": node.meter.snapshot()[node.node_id]}
            else:
                result = drive_generator(node, eid, kind, engine.execute(kind, args))
            meta = {"status": "ok", "result": result}
        except Exception as exc:  # reported to the manager, which aborts the exercise
            meta = {"status": "error", "error": f"{type(exc).__name__}: {exc}"}
        node.send(_ack(eid, node.node_id, meta))


class TcpBackend:
    kind = "tcp"

    def __init__(self, node: TcpNode, nodes: list[int]):
        self.node = node
        self.nodes = nodes
        self.engines: dict[int, MemberEngine] = {}  # share-less clients hosted by the manager

    def run(self, eid: int, kind: str, args: dict) -> dict[int, dict]:
        for n in self.nodes:
            self.node.send(_descriptor(eid, n, kind, args))
        out, errors = {}, []
        for n in self.nodes:
            meta = self.node.recv(n, eid, "ack", timeout=None).meta
            if meta["status"] != "ok":
                errors.append(f"node {n}: {meta['error']}")
            else:
                out[n] = meta["result"]
        if errors:
            raise ProtocolAbort(f"exercise {eid} ({kind}) failed: " + "; ".join(errors))
        return out

    def meter_snapshot(self):
        snap = dict(self.node.meter.snapshot())
        eid = -2
        for n in self.nodes:
            self.node.send(_descriptor(eid, n, "report_meter", {}))
        for n in self.nodes:
            snap[n] = self.node.recv(n, eid, "ack", timeout=None).meta["result"]["meter"]
        return snap

    network_seconds = 0.0

    def shutdown(self):
        for n in self.nodes:
            self.node.send(_descriptor(-3, n, "shutdown", {}))
        for n in self.nodes:
            self.node.recv(n, -3, "ack", timeout=10)


# --- manager ----------------------------------------------------------------

@dataclass
class TaskTimer:
    count: int = 0
    cpu_seconds: float = 0.0
    network_seconds: float = 0.0

    @property
    def seconds(self) -> float:
        return self.cpu_seconds + self.network_seconds


class Session:
    """Manager-side handle on a running network of N members (and optional clients).

    Build one with :func:`simulated_session` or :func:`tcp_session`.
    """

    def __init__(self, backend, n_parties: int, fp: FieldParams, sharing: SharingParams,
                 division: DivisionConfig | None = None, clients: tuple[int, ...] = ()):
        self.backend = backend
        self.n = n_parties
        self.fp = fp
        self.sharing = sharing
        self.division = division or DivisionConfig.default(fp, n_parties)
        self.clients = tuple(clients)
        self.timers: dict[str, TaskTimer] = defaultdict(TaskTimer)
        self.exercise_counts: dict[str, int] = defaultdict(int)
        self._next_eid = 0
        self._next_vid = 0
        self._truncations = 0

    # bookkeeping

    def _ids(self, count: int) -> list[int]:
        start = self._next_vid
        self._next_vid += count
        return list(range(start, start + count))

    def run(self, kind: str, **args) -> dict[int, dict]:
        eid = self._next_eid
        self._next_eid += 1
        clock = self.backend.network_seconds
        start = time.perf_counter()
        result = self.backend.run(eid, kind, args)
        timer = self.timers[CATEGORIES.get(kind, "other")]
        timer.count += 1
        timer.cpu_seconds += time.perf_counter() - start
        timer.network_seconds += self.backend.network_seconds - clock
        self.exercise_counts[kind] += 1
        return result

    @property
    def members(self) -> list[int]:
        return list(range(1, self.n + 1))

    def local(self, name: str, **args) -> dict[int, dict]:
        return self.run("local:" + name, **args)

    # sharing and linear ops

    def share_values(self, owner: int, keys: list[str], scale: str = INTEGER) -> list[SharedValue]:
        out = self._ids(len(keys))
        self.run("share_values", owner=owner, keys=list(keys), out=out)
        return [SharedValue(v, scale) for v in out]

    def _binary(self, kind, pairs):
        pairs = list(pairs)
        for a, b in pairs:
            if a.scale != b.scale:
                raise ScaleError(f"{kind} of scales {a.scale} and {b.scale}")
        out = self._ids(len(pairs))
        self.run(kind, items=[[a.value_id, b.value_id, o] for (a, b), o in zip(pairs, out)])
        return [SharedValue(o, a.scale) for (a, _), o in zip(pairs, out)]

    def add_many(self, pairs) -> list[SharedValue]:
        return self._binary("addition", pairs)

    def sub_many(self, pairs) -> list[SharedValue]:
        return self._binary("subtraction", pairs)

    def sum_many(self, groups: list[list[SharedValue]]) -> list[SharedValue]:
        """Sum each group, one batched addition exercise per tree level."""
        groups = [list(g) for g in groups]
        while any(len(g) > 1 for g in groups):
            pairs, slots = [], []
            for gi, g in enumerate(groups):
                for k in range(0, len(g) - 1, 2):
                    pairs.append((g[k], g[k + 1]))
                    slots.append((gi, k))
            sums = self.add_many(pairs)
            new = [list(g) for g in groups]
            for (gi, k), s in zip(slots, sums):
                new[gi][k] = s
                new[gi][k + 1] = None
            groups = [[v for v in g if v is not None] for g in new]
        return [g[0] for g in groups]

    def linear_many(self, ops: list[tuple[str, SharedValue | None, int, str]]) -> list[SharedValue]:
        out = self._ids(len(ops))
        items = [[op, None if a is None else a.value_id, str(c), o] for (op, a, c, _), o in zip(ops, out)]
        self.run("linear", items=items)
        return [SharedValue(o, scale) for (_, _, _, scale), o in zip(ops, out)]

    def constant_many(self, values: list[int], scale: str = INTEGER) -> list[SharedValue]:
        return self.linear_many([("const", None, v, scale) for v in values])

    # multiplication and truncation

    def mul_many(self, pairs) -> list[SharedValue]:
        pairs = list(pairs)
        scales = [_mul_scale(a.scale, b.scale) for a, b in pairs]
        out = self._ids(len(pairs))
        self.run("multiplication", items=[[a.value_id, b.value_id, o] for (a, b), o in zip(pairs, out)])
        return [SharedValue(o, s) for o, s in zip(out, scales)]

    def _designated(self) -> int:
        party = self._truncations % self.n + 1
        self._truncations += 1
        return party

    def truncate_many(self, values, divisor: int | None = None, out_scale: str | None = None,
                      bound: int | None = None) -> list[SharedValue]:
        values = list(values)
        divisor = self.fp.d if divisor is None else divisor
        bound = self.division.bound_M if bound is None else bound
        if bound >= self.fp.p or (self.fp.p - bound) // self.n < divisor:
            raise ConfigError("masked sum could exceed p: bound_M too large for this divisor")
        out = self._ids(len(values))
        self.run("truncation", items=[[v.value_id, o] for v, o in zip(values, out)],
                 divisor=divisor, bound=bound, designated=self._designated())
        return [SharedValue(o, out_scale or (_drop_scale(v.scale) if divisor == self.fp.d else v.scale))
                for v, o in zip(values, out)]

    def approx_modulo_many(self, values, divisor: int | None = None,
                           bound: int | None = None) -> list[SharedValue]:
        values = list(values)
        divisor = self.fp.d if divisor is None else divisor
        bound = self.division.bound_M if bound is None else bound
        if bound >= self.fp.p or (self.fp.p - bound) // self.n < divisor:
            raise ConfigError("masked sum could exceed p: bound_M too large for this divisor")
        out = self._ids(len(values))
        self.run("approx_modulo", items=[[v.value_id, o] for v, o in zip(values, out)],
                 divisor=divisor, bound=bound, designated=self._designated())
        return [SharedValue(o, INTEGER) for o in out]

    # division

    def scaled_inverse_many(self, bs: list[SharedValue]) -> list[SharedValue]:
        """Shares approximating d * 2**precision_t / b for each integer b >= 1.

        Newton's iteration u <- u (2 - u b / (d 2^t)) from the public start
        u = 2^t (the value 1 at the inverse's scale), run for
        ``ceil(log2 d)`` warm-up plus ``ceil(log2 t)`` steps.
        """
        cfg = self.division.validate(self.fp.p, self.n)
        one = 2**cfg.precision_t
        u = self.constant_many([one] * len(bs))
        for _ in range(cfg.iterations):
            e = self.truncate_many(self.mul_many(zip(u, bs)), cfg.d, INTEGER)
            g = self.linear_many([("rsub", x, 2 * one, INTEGER) for x in e])
            u = self.truncate_many(self.mul_many(zip(u, g)), one, INTEGER)
        return [SharedValue(v.value_id, "inverse") for v in u]

    def private_divide_many(self, pairs) -> list[SharedValue]:
        """a/b at scale d for integer-scale shares with 0 <= a <= b, b >= 1."""
        pairs = list(pairs)
        for a, b in pairs:
            if a.scale != INTEGER or b.scale != INTEGER:
                raise ScaleError("private division expects integer-scale operands")
        inv = self.scaled_inverse_many([b for _, b in pairs])
        prod = self.mul_many((a, SharedValue(v.value_id, INTEGER)) for (a, _), v in zip(pairs, inv))
        return self.truncate_many(prod, 2**self.division.precision_t, FIXED_D)

    # revelation

    def reveal(self, values, target: int) -> None:
        """Open ``values`` to ``target`` only; read them from that node."""
        self.run("reveal", ids=[v.value_id for v in values], target=target)

    def open(self, values) -> list[int]:
        """Debug reconstruction straight from member memory (simulated transport only)."""
        if self.backend.kind != "sim":
            raise PrivacyError("debug reconstruction is refused on a real network")
        out = []
        for v in values:
            pts = [Share(m, self.backend.engines[m].shares[v.value_id]) for m in self.members]
            out.append(shamir.reconstruct(pts, self.fp.p, self.sharing.t))
        return out

    # single-value conveniences

    def add(self, a, b):
        return self.add_many([(a, b)])[0]

    def sub(self, a, b):
        return self.sub_many([(a, b)])[0]

    def mul(self, a, b):
        return self.mul_many([(a, b)])[0]

    def scale_by_public(self, a, c):
        return self.linear_many([("scale", a, c, a.scale)])[0]

    def add_public(self, a, c):
        return self.linear_many([("add", a, c, a.scale)])[0]

    def truncate(self, b, divisor=None, out_scale=None):
        return self.truncate_many([b], divisor, out_scale)[0]

    def approx_modulo(self, b, divisor=None):
        return self.approx_modulo_many([b], divisor)[0]

    def scaled_inverse(self, b):
        return self.scaled_inverse_many([b])[0]

    def private_divide(self, a, b):
        return self.private_divide_many([(a, b)])[0]

    # reporting

    def meter_report(self) -> dict:
        traffic = self.backend.meter_snapshot()
        for counts in traffic.values():
            counts["bytes_total"] = counts["bytes_in"] + counts["bytes_out"]
        tasks = {
            cat: {"count": self.timers[cat].count,
                  "seconds": self.timers[cat].seconds,
                  "network_seconds": self.timers[cat].network_seconds}
            for cat in REPORT_CATEGORIES
        }
        return {
            "traffic": traffic,
            "tasks": tasks,
            "wall_seconds": sum(t["seconds"] for t in tasks.values()),
            "exercises": dict(self.exercise_counts),
        }

    def close(self):
        if hasattr(self.backend, "shutdown"):
            self.backend.shutdown()
            self.backend.node.close()


def simulated_session(n_parties: int, fp: FieldParams | None = None, threshold_degree=None,
                      latency_ms: float = 0.0, seed: int | None = 0, n_clients: int = 0,
                      record: bool = False, division: DivisionConfig | None = None) -> Session:
    """All members (and ``n_clients`` share-less clients) in this process."""
    fp = (fp or FieldParams()).validate(n_parties)
    sharing = SharingParams(n_parties, threshold_degree)
    node_ids = list(range(0, n_parties + n_clients + 1))
    net = SimulatedNetwork(node_ids, latency_ms, record=record)
    engines = {}
    for node in node_ids[1:]:
        rng = random.SystemRandom() if seed is None else random.Random(f"{seed}:{node}")
        engines[node] = MemberEngine(node, n_parties, fp, sharing, rng)
    session = Session(SimBackend(engines, net), n_parties, fp, sharing, division,
                      clients=tuple(node_ids[n_parties + 1:]))
    session.run("init_network")
    return session
