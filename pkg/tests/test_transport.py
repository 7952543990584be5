import json
import struct
import threading
import time

import pytest

from privspn.cluster import free_ports
from privspn.errors import ProtocolAbort, SetupError
from privspn.mpc import REPORT_CATEGORIES, simulated_session
from privspn.transport import (ExerciseMessage, NodeIdentity, SimulatedNetwork, TcpNode, TrafficMeter,
                               channel_count, decode_frame, encode_frame)


def test_frame_layout():
    msg = ExerciseMessage(7, "shares", 1, 2, ["123", "456"], {"kind": "mul"})
    frame = encode_frame(msg)
    (length,) = struct.unpack(">I", frame[:4])
    assert length == len(frame) - 4
    assert json.loads(frame[4:].decode()) == {"exercise_id": 7, "step": "shares", "sender": 1, "recipient": 2,
                                              "payload": ["123", "456"], "meta": {"kind": "mul"}}
    assert decode_frame(frame) == msg
    with pytest.raises(ValueError):
        decode_frame(frame[:-1])


def test_idle_meter_is_zero():
    snap = TrafficMeter([0, 1, 2]).snapshot()
    assert all(v == 0 for counts in snap.values() for v in counts.values())


def test_report_categories():
    assert list(REPORT_CATEGORIES) == ["truncation", "multiplication", "share_values", "addition", "subtraction",
                                       "local_structure_training", "init_network", "other"]
    tasks = simulated_session(3).meter_report()["tasks"]
    assert list(tasks) == list(REPORT_CATEGORIES)


def test_sim_metering_symmetric_and_fifo():
    net = SimulatedNetwork([0, 1, 2])
    a = ExerciseMessage(1, "x", 1, 2, ["1"])
    b = ExerciseMessage(2, "y", 1, 2, ["22"])
    net.send(a)
    net.send(b)
    net.end_tick()
    assert net.recv(1, 2, 1, "x") == a
    assert net.recv(1, 2, 2, "y") == b
    snap = net.meter.snapshot()
    assert snap[1]["bytes_out"] == snap[2]["bytes_in"] == len(encode_frame(a)) + len(encode_frame(b))
    with pytest.raises(ProtocolAbort):
        net.recv(1, 2, 3, "z")


def all_to_all_sim(latency):
    net = SimulatedNetwork([1, 2, 3], latency)
    for i in (1, 2, 3):
        for j in (1, 2, 3):
            if i != j:
                net.send(ExerciseMessage(0, "x", i, j, ["5"]))
    return net.end_tick()


def test_sim_latency():
    assert all_to_all_sim(0) == 0
    assert all_to_all_sim(10) >= 0.010


def test_channel_count():
    assert channel_count(5) == 15
    assert channel_count(3) == 6


def mesh(n_nodes, latency_ms=0.0):
    ids = [NodeIdentity(i, "127.0.0.1", p) for i, p in enumerate(free_ports(n_nodes))]
    nodes = [TcpNode(i, ids, latency_ms) for i in range(n_nodes)]
    for node in nodes:
        node.listen()
    threads = [threading.Thread(target=node.connect, args=(10.0,)) for node in nodes]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return nodes


def close_all(nodes):
    for node in nodes:
        node.close()


def test_tcp_mesh_channels():
    nodes = mesh(6)  # manager + 5 members
    try:
        assert sum(len(n._socks) for n in nodes) // 2 == channel_count(5)
    finally:
        close_all(nodes)


def test_tcp_echo_and_metering():
    nodes = mesh(2)
    try:
        msg = ExerciseMessage(3, "ping", 0, 1, ["42"])
        t0 = time.perf_counter()
        nodes[0].send(msg)
        got = nodes[1].recv(0, 3, "ping", timeout=5)
        nodes[1].send(ExerciseMessage(3, "pong", 1, 0, got.payload))
        back = nodes[0].recv(1, 3, "pong", timeout=5)
        assert back.payload == ["42"] and time.perf_counter() - t0 < 1.0
        out0 = nodes[0].meter.snapshot()[0]
        in1 = nodes[1].meter.snapshot()[1]
        assert out0["bytes_out"] == in1["bytes_in"] == len(encode_frame(msg))
    finally:
        close_all(nodes)


def test_tcp_latency_all_to_all():
    nodes = mesh(3, latency_ms=10)
    try:
        t0 = time.perf_counter()

        def exchange(node):
            for peer in node.peers:
                node.send(ExerciseMessage(1, "x", node.node_id, peer, ["1"]))
            for peer in node.peers:
                node.recv(peer, 1, "x", timeout=5)

        threads = [threading.Thread(target=exchange, args=(n,)) for n in nodes]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert time.perf_counter() - t0 >= 0.010
    finally:
        close_all(nodes)


def test_tcp_unreachable_node_named():
    ports = free_ports(2)
    ids = [NodeIdentity(0, "127.0.0.1", ports[0]), NodeIdentity(1, "127.0.0.1", ports[1])]
    node = TcpNode(1, ids)
    node.listen()
    try:
        with pytest.raises(SetupError, match="node 0"):
            node.connect(timeout=0.3)
    finally:
        node.close()


def test_tcp_peer_loss_aborts():
    nodes = mesh(2)
    nodes[1].close()
    try:
        with pytest.raises(ProtocolAbort):
            nodes[0].recv(1, 9, "never", timeout=5)
    finally:
        nodes[0].close()
