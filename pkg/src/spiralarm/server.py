"""WebSocket server exposing a TeleopSession over the JSON wire protocol.

One session, one command queue: client messages are processed strictly in
arrival order.  Simulation work runs on a worker thread (the kernel
releases the GIL); execution state streams to every subscriber at the
configured rate.  Unknown message fields are ignored, unknown types are
rejected with error code ``bad_message``.
"""

from __future__ import annotations

import asyncio
import base64
import json
import math

import numpy as np
import websockets

from spiralarm.dynamics import Simulation, TendonCommand, fast_settle_model
from spiralarm.kernels import SimKernel
from spiralarm.teleop import TeleopError, TeleopSession, _world_frames


def _jlist(a):
    return [float(v) for v in np.asarray(a).ravel()]


class TeleopServer:
    def __init__(self, session: TeleopSession, host="127.0.0.1", port=8765,
                 time_scale=0.0):
        """``time_scale`` paces execution streaming (1.0 = real time,
        0 = as fast as possible, for tests and batch use)."""
        self.session = session
        self.host = host
        self.port = port
        self.time_scale = time_scale
        self.clients = set()
        self._rest_cache = {}
        self._server = None

    # -- snapshots -----------------------------------------------------------

    def _rest_pose_local(self):
        key = round(0.0, 6)
        if key not in self._rest_cache:
            sim = Simulation(fast_settle_model(self.session.model),
                             self.session.simcfg)
            state, _ = sim.settle(TendonCommand(), record=False)
            kern = SimKernel(self.session.model)
            pos, quat = kern.fk_pose(state.theta)
            lengths = kern.tendon_lengths(state.theta)
            self._rest_cache[key] = (pos, quat, lengths)
        return self._rest_cache[key]

    def state_message(self, phase=None, sim_time=0.0, rigid_q=None,
                      soft_pos=None, soft_quat=None, lengths=None):
        s = self.session
        if rigid_q is None:
            rigid_q = s.rigid_q
        if soft_pos is None:
            pos_l, quat_l, lengths_l = self._rest_pose_local()
            mount_pos, mount_rot = s.rigid_arm.fk(rigid_q)
            soft_pos = pos_l @ mount_rot.T + mount_pos
            soft_quat = quat_l
            lengths = lengths_l
        segs = [{"p": _jlist(p), "q": _jlist(q)}
                for p, q in zip(soft_pos, soft_quat)]
        return {
            "type": "state",
            "phase": phase or s.phase,
            "sim_time": float(sim_time),
            "rigid_joints": _jlist(rigid_q),
            "soft_segments": segs,
            "tendon_lengths": _jlist(lengths) if lengths is not None else [],
        }

    def reach_map_messages(self):
        out = []
        for m in self.session.soft_maps:
            packed = np.packbits(m.occupancy.astype(np.uint8).ravel())
            out.append({
                "type": "reach_map",
                "which": "soft",
                "gravity_angle_deg": m.gravity_angle_deg,
                "voxel_size": m.voxel_size,
                "origin": _jlist(m.origin),
                "dims": list(m.occupancy.shape),
                "occupancy_b64": base64.b64encode(packed.tobytes()).decode(),
            })
        return out

    # -- fanout --------------------------------------------------------------

    async def _send(self, ws, doc):
        try:
            await ws.send(json.dumps(doc))
        except websockets.ConnectionClosed:
            pass

    async def _broadcast(self, doc):
        msg = json.dumps(doc)
        for ws in list(self.clients):
            try:
                await ws.send(msg)
            except websockets.ConnectionClosed:
                self.clients.discard(ws)

    # -- message handling ----------------------------------------------------

    async def _handle_message(self, ws, raw):
        try:
            doc = json.loads(raw)
            mtype = doc.get("type")
        except (json.JSONDecodeError, AttributeError):
            await self._send(ws, {"type": "error", "code": "bad_message",
                                  "message": "malformed JSON"})
            return
        s = self.session
        try:
            if mtype == "set_ray":
                s.set_ray(doc["hand"], doc["origin"], doc["direction"],
                          float(doc["length"]))
                await self._broadcast(self.state_message())
            elif mtype == "add_object":
                s.add_object(doc.get("shape", "sphere"), doc["center"],
                             float(doc.get("radius", 0.05)))
                await self._broadcast(self.state_message())
            elif mtype == "preview":
                await self._broadcast(self.state_message(phase="previewing"))
                preview = await asyncio.to_thread(s.start_preview)
                plan = s.plan
                world = _world_frames(preview.soft_local, plan.mount_pos,
                                      plan.mount_rot)
                stride = max(1, int(round(s.simcfg.rate_hz /
                                          s.config.stream_hz)))
                frames = [{
                    "t": float(preview.soft_local.t[f]),
                    "segments": [{"p": _jlist(world[f, k]),
                                  "q": _jlist(preview.soft_local.quat[f, k])}
                                 for k in range(world.shape[1])],
                } for f in range(0, preview.soft_local.n_frames, stride)]
                await self._broadcast({
                    "type": "verdict",
                    "grasped": preview.verdict.grasped,
                    "reason": preview.verdict.reason,
                    "wrap_deg": preview.verdict.wrap_deg,
                    "rigid_path": [_jlist(q) for q in preview.rigid_path],
                    "preview_frames": frames,
                })
                await self._broadcast(self.state_message())
            elif mtype == "confirm":
                report = await self._run_execution()
                await self._broadcast(self.state_message())   # phase done
                await self._broadcast({
                    "type": "verdict",
                    "grasped": bool(report["grasped_preview"]),
                    "e_internal_preview_exec_m":
                        float(report["e_internal_preview_exec_m"]),
                })
                self.session.finish()
                await self._broadcast(self.state_message())   # back to idle
            elif mtype == "abort":
                s.abort()
                await self._broadcast(self.state_message())
            elif mtype == "reset":
                s.reset()
                await self._broadcast(self.state_message())
            else:
                await self._send(ws, {"type": "error", "code": "bad_message",
                                      "message": f"unknown type {mtype!r}"})
        except TeleopError as err:
            await self._send(ws, {"type": "error", "code": err.code,
                                  "message": str(err)})
        except KeyError as err:
            await self._send(ws, {"type": "error", "code": "bad_message",
                                  "message": f"missing field {err}"})

    async def _run_execution(self):
        s = self.session
        loop = asyncio.get_running_loop()
        queue: asyncio.Queue = asyncio.Queue()

        def on_frame(phase, t, rigid_q, soft_pos, soft_quat, lengths):
            doc = self.state_message(phase=phase, sim_time=t, rigid_q=rigid_q,
                                     soft_pos=soft_pos, soft_quat=soft_quat,
                                     lengths=lengths)
            loop.call_soon_threadsafe(queue.put_nowait, doc)

        async def pump():
            if self.time_scale > 0:
                await asyncio.sleep(s.config.delay_s * self.time_scale)
            dt = (1.0 / s.config.stream_hz) * self.time_scale
            while True:
                doc = await queue.get()
                if doc is None:
                    break
                await self._broadcast(doc)
                if dt > 0:
                    await asyncio.sleep(dt)

        pump_task = asyncio.create_task(pump())
        try:
            report = await asyncio.to_thread(s.confirm_execute, on_frame)
        finally:
            queue.put_nowait(None)
            await pump_task
        return report

    # -- lifecycle -----------------------------------------------------------

    async def _client(self, ws):
        self.clients.add(ws)
        try:
            await self._send(ws, self.state_message())
            for doc in self.reach_map_messages():
                await self._send(ws, doc)
            async for raw in ws:
                await self._handle_message(ws, raw)
        finally:
            self.clients.discard(ws)

    async def start(self):
        self._server = await websockets.serve(self._client, self.host,
                                              self.port)
        return self

    @property
    def actual_port(self):
        if self._server is None:
            return self.port
        return self._server.sockets[0].getsockname()[1]

    async def stop(self):
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def serve_forever(self):
        await self.start()
        try:
            await asyncio.Future()
        finally:
            await self.stop()
