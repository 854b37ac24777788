"""Wire-protocol tests with a scripted websockets client (no UI)."""

import asyncio
import json

import numpy as np
import pytest
import websockets

from spiralarm.server import TeleopServer

from teleop_fixtures import build_teleop_kit, full_curl_sphere, make_session
from test_teleop import kit  # session-scoped fixture reuse


async def recv_json(ws, timeout=120.0):
    raw = await asyncio.wait_for(ws.recv(), timeout)
    return json.loads(raw)


async def recv_until(ws, mtype, timeout=120.0, collect=None):
    while True:
        doc = await recv_json(ws, timeout)
        if collect is not None:
            collect.append(doc)
        if doc["type"] == mtype:
            return doc


async def recv_state(ws, phase, timeout=120.0, collect=None):
    while True:
        doc = await recv_json(ws, timeout)
        if collect is not None:
            collect.append(doc)
        if doc["type"] == "state" and doc["phase"] == phase:
            return doc


def run(coro):
    return asyncio.run(coro)


@pytest.fixture()
def server_session(desk_model, simcfg, kit):
    return make_session(desk_model, simcfg, kit, physical=desk_model)


def set_ray_msg(hand, endpoint, height=0.3):
    origin = [endpoint[0], endpoint[1], endpoint[2] + height]
    return {"type": "set_ray", "hand": hand, "origin": origin,
            "direction": [0.0, 0.0, -1.0], "length": height}


class TestProtocol:
    def test_handshake_snapshot_and_reach_maps(self, server_session):
        async def scenario():
            server = TeleopServer(server_session, port=0)
            await server.start()
            try:
                async with websockets.connect(
                        f"ws://127.0.0.1:{server.actual_port}") as ws:
                    first = await recv_json(ws)
                    assert first["type"] == "state"
                    assert first["phase"] == "idle"
                    assert len(first["rigid_joints"]) == 7
                    assert len(first["soft_segments"]) == 8
                    assert len(first["soft_segments"][0]["p"]) == 3
                    assert len(first["soft_segments"][0]["q"]) == 4
                    maps = await recv_json(ws)
                    assert maps["type"] == "reach_map"
                    assert "occupancy_b64" in maps
            finally:
                await server.stop()
        run(scenario())

    def test_full_phase_walk_with_grasp(self, server_session, kit, desk_model,
                                        simcfg):
        mount = kit["mount_target"]
        center, radius, tip_world = full_curl_sphere(desk_model, simcfg, mount)

        async def scenario():
            server = TeleopServer(server_session, port=0, time_scale=0.0)
            await server.start()
            phases = []
            try:
                async with websockets.connect(
                        f"ws://127.0.0.1:{server.actual_port}",
                        max_size=2**24) as ws:
                    await recv_state(ws, "idle")
                    await ws.send(json.dumps({
                        "type": "add_object", "shape": "sphere",
                        "center": list(center), "radius": radius}))
                    await ws.send(json.dumps(set_ray_msg("left", mount)))
                    await ws.send(json.dumps(set_ray_msg("right", tip_world,
                                                         height=0.2)))
                    await recv_state(ws, "target_set")
                    await ws.send(json.dumps({"type": "preview"}))
                    msgs = []
                    verdict = await recv_until(ws, "verdict", collect=msgs)
                    assert verdict["grasped"] is True
                    assert verdict["wrap_deg"] > 180.0
                    assert len(verdict["preview_frames"]) > 10
                    assert any(m["type"] == "state" and m["phase"] == "previewing"
                               for m in msgs)
                    await recv_state(ws, "preview_ready")
                    await ws.send(json.dumps({"type": "confirm"}))
                    msgs = []
                    final = await recv_until(ws, "verdict", collect=msgs)
                    exec_states = [m for m in msgs if m["type"] == "state"
                                   and m["phase"] == "executing"]
                    assert len(exec_states) > 10
                    times = [m["sim_time"] for m in exec_states]
                    assert all(b >= a for a, b in zip(times, times[1:]))
                    assert any(m["type"] == "state" and m["phase"] == "done"
                               for m in msgs)
                    assert final["e_internal_preview_exec_m"] == 0.0
                    await recv_state(ws, "idle")
            finally:
                await server.stop()
        run(scenario())

    def test_unreachable_soft_error(self, server_session, kit):
        mount = kit["mount_target"]

        async def scenario():
            server = TeleopServer(server_session, port=0)
            await server.start()
            try:
                async with websockets.connect(
                        f"ws://127.0.0.1:{server.actual_port}") as ws:
                    await recv_state(ws, "idle")
                    await ws.send(json.dumps(set_ray_msg("left", mount)))
                    await ws.send(json.dumps(set_ray_msg(
                        "right", np.array([5.0, 5.0, 5.0]))))
                    await recv_state(ws, "target_set")
                    await ws.send(json.dumps({"type": "preview"}))
                    err = await recv_until(ws, "error")
                    assert err["code"] == "unreachable_soft"
            finally:
                await server.stop()
        run(scenario())

    def test_bad_message_type_rejected(self, server_session):
        async def scenario():
            server = TeleopServer(server_session, port=0)
            await server.start()
            try:
                async with websockets.connect(
                        f"ws://127.0.0.1:{server.actual_port}") as ws:
                    await recv_state(ws, "idle")
                    await ws.send(json.dumps({"type": "warp_drive"}))
                    err = await recv_until(ws, "error")
                    assert err["code"] == "bad_message"
                    await ws.send("this is not json")
                    err = await recv_until(ws, "error")
                    assert err["code"] == "bad_message"
                    # unknown fields in a known type are ignored
                    msg = set_ray_msg("left", np.array([0.4, 0.0, 0.5]))
                    msg["favorite_color"] = "teal"
                    await ws.send(json.dumps(msg))
                    state = await recv_until(ws, "state")
                    assert state["phase"] in ("idle", "target_set")
            finally:
                await server.stop()
        run(scenario())

    def test_confirm_out_of_phase(self, server_session):
        async def scenario():
            server = TeleopServer(server_session, port=0)
            await server.start()
            try:
                async with websockets.connect(
                        f"ws://127.0.0.1:{server.actual_port}") as ws:
                    await recv_state(ws, "idle")
                    await ws.send(json.dumps({"type": "confirm"}))
                    err = await recv_until(ws, "error")
                    assert err["code"] == "bad_phase"
            finally:
                await server.stop()
        run(scenario())

    def test_reset_returns_idle(self, server_session, kit):
        mount = kit["mount_target"]

        async def scenario():
            server = TeleopServer(server_session, port=0)
            await server.start()
            try:
                async with websockets.connect(
                        f"ws://127.0.0.1:{server.actual_port}") as ws:
                    await recv_state(ws, "idle")
                    await ws.send(json.dumps(set_ray_msg("left", mount)))
                    await ws.send(json.dumps({"type": "reset"}))
                    state = await recv_state(ws, "idle")
                    assert state["phase"] == "idle"
            finally:
                await server.stop()
        run(scenario())
