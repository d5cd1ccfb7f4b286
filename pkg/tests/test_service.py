"""Service layer: wire protocol, simulation loop, HTTP/WebSocket surface."""

from __future__ import annotations

import asyncio
import json
import time
from collections import deque

import numpy as np
import pytest
from fastapi.testclient import TestClient

from contactplan.harness import run
from contactplan.scenario import Scenario
from contactplan.service import PROTOCOL_VERSION, SimLoop, create_app
from contactplan.service.loop import TUNABLE_KEYS, ClientQueue
from contactplan.service.schemas import (
    ApplyPush,
    Pause,
    Reset,
    Resume,
    SetConfig,
    parse_command,
)

from conftest import FIXTURES


def service_scenario(duration: float = 3.0, **extra) -> Scenario:
    """Shipped push scenario with its scripted contact stripped out."""
    data = Scenario.load(FIXTURES / "push_lateral.json").to_dict()
    data["duration"] = duration
    data["contacts"] = []
    data.update(extra)
    return Scenario.from_dict(data)


async def wait_for(predicate, timeout: float = 30.0):
    deadline = time.monotonic() + timeout
    while not predicate():
        if time.monotonic() > deadline:
            raise AssertionError("condition not reached in time")
        await asyncio.sleep(0.001)


def drive(main):
    """Run one async test body to completion."""
    asyncio.run(main())


class TestClientQueue:
    def test_drops_oldest_when_full(self):
        queue = ClientQueue(maxlen=8)
        for i in range(12):
            queue.put(str(i))
        assert list(queue.frames) == [str(i) for i in range(4, 12)]

    def test_drain_empties_and_blocks_until_next_put(self):
        async def main():
            queue = ClientQueue()
            queue.put("a")
            queue.put("b")
            assert await queue.drain() == ["a", "b"]
            assert not queue.frames
            waiter = asyncio.create_task(queue.drain())
            await asyncio.sleep(0.01)
            assert not waiter.done()
            queue.put("c")
            assert await asyncio.wait_for(waiter, 1.0) == ["c"]

        drive(main)


class TestParseCommand:
    def test_apply_push_defaults(self):
        command = parse_command(json.dumps({
            "kind": "apply_push", "link": 6, "s": 0.8,
            "force": [-20, 0, 0], "duration": 0.5}))
        assert isinstance(command, ApplyPush)
        assert command.profile == "constant"
        assert command.id is None
        assert command.protocol_version == PROTOCOL_VERSION
        assert command.force == (-20.0, 0.0, 0.0)

    @pytest.mark.parametrize("patch", [
        {"link": 0}, {"s": 1.5}, {"s": -0.1}, {"duration": 0.0},
        {"force": [1, 2]}, {"profile": "square"}, {"bogus": 1},
    ])
    def test_bad_push_fields_rejected(self, patch):
        payload = {"kind": "apply_push", "link": 6, "s": 0.8,
                   "force": [-20, 0, 0], "duration": 0.5}
        payload.update(patch)
        with pytest.raises(ValueError):
            parse_command(json.dumps(payload))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="kind"):
            parse_command(json.dumps({"kind": "teleport"}))

    def test_not_json_rejected(self):
        with pytest.raises(ValueError, match="Invalid JSON"):
            parse_command("garbage")

    def test_version_mismatch_rejected(self):
        with pytest.raises(ValueError, match="protocol_version 9"):
            parse_command(json.dumps({"kind": "pause",
                                      "protocol_version": 9}))

    def test_simple_commands_parse(self):
        for kind, cls in [("pause", Pause), ("resume", Resume),
                          ("reset", Reset)]:
            assert isinstance(parse_command(json.dumps({"kind": kind})), cls)
        command = parse_command(json.dumps(
            {"kind": "set_config", "values": {"planner.gain": 0.01}}))
        assert isinstance(command, SetConfig)
        assert command.values == {"planner.gain": 0.01}


class TestSimLoop:
    def test_pace_must_be_nonnegative(self):
        with pytest.raises(ValueError, match="pace"):
            SimLoop(service_scenario(), pace=-1.0)

    def test_hello_then_path_on_attach(self):
        scenario = service_scenario()
        loop = SimLoop(scenario, pace=0.0)
        client = loop.attach()
        hello, path = (json.loads(f) for f in client.frames)
        assert hello["kind"] == "hello"
        assert hello["protocol_version"] == PROTOCOL_VERSION
        assert hello["scenario"] == scenario.name
        assert hello["joints"] == 7
        assert hello["sample_rate"] == scenario.sample_rate
        assert hello["tick"] == 0 and not hello["paused"]
        assert path["kind"] == "path_update"
        assert len(path["path"]) == 201 and path["bumps"] == []

    def test_free_run_stream_shape(self):
        """Free-run to the end: ordered frames, decimated ticks, metrics."""
        async def main():
            loop = SimLoop(service_scenario(duration=1.0), pace=0.0)
            client = loop.attach()
            task = asyncio.create_task(loop.run())
            try:
                await wait_for(lambda: loop.finished)
            finally:
                loop.stop()
                await asyncio.wait_for(task, 5.0)
            frames = [json.loads(f) for f in client.frames]
            seqs = [f["seq"] for f in frames]
            assert all(b > a for a, b in zip(seqs, seqs[1:]))
            kinds = [f["kind"] for f in frames]
            assert kinds[:2] == ["hello", "path_update"]
            assert kinds[-1] == "metrics"
            ticks = [f for f in frames if f["kind"] == "tick"]
            # 1000 ticks decimated to ~60 Hz
            assert len(ticks) == len(range(0, 1000, 17))
            assert frames[-1]["data"]["ticks"] == 1000
            assert loop.status()["finished"]

        drive(main)

    def test_broadcasts_identical_across_clients(self):
        """Both clients receive byte-identical copies of every broadcast."""
        async def main():
            loop = SimLoop(service_scenario(duration=1.0), pace=0.0)
            first = loop.attach()
            second = loop.attach()
            loop.submit(Pause(kind="pause"))
            task = asyncio.create_task(loop.run())
            try:
                await wait_for(lambda: loop.paused)
                loop.submit(ApplyPush(kind="apply_push", link=6, s=0.8,
                                      force=(-20.0, 0.0, 0.0), duration=0.3))
                loop.submit(Resume(kind="resume"))
                await wait_for(lambda: loop.finished)
            finally:
                loop.stop()
                await asyncio.wait_for(task, 5.0)
            # first two frames per client are targeted at that client
            assert list(first.frames)[2:] == list(second.frames)[2:]
            kinds = {json.loads(f)["kind"] for f in list(first.frames)[2:]}
            assert {"tick", "detection", "estimate", "bump", "path_update",
                    "metrics"} <= kinds

        drive(main)

    def test_ack_goes_only_to_sender(self):
        async def main():
            loop = SimLoop(service_scenario(duration=1.0), pace=0.0)
            sender = loop.attach()
            bystander = loop.attach()
            loop.submit(Pause(kind="pause"))
            task = asyncio.create_task(loop.run())
            try:
                await wait_for(lambda: loop.paused)
                loop.submit(ApplyPush(kind="apply_push", id="push-1", link=6,
                                      s=0.8, force=(-20.0, 0.0, 0.0),
                                      duration=0.3), sender)
                await wait_for(lambda: any(
                    json.loads(f)["kind"] == "ack" for f in sender.frames))
            finally:
                loop.stop()
                await asyncio.wait_for(task, 5.0)
            acks = [json.loads(f) for f in sender.frames
                    if json.loads(f)["kind"] == "ack"]
            assert len(acks) == 1
            assert acks[0]["ok"] and acks[0]["id"] == "push-1"
            assert not any(json.loads(f)["kind"] == "ack"
                           for f in bystander.frames)
            assert loop.pushes[0]["start_tick"] == 1

        drive(main)

    def test_push_rejected_after_finish(self):
        async def main():
            loop = SimLoop(service_scenario(duration=0.2), pace=0.0)
            client = loop.attach()
            task = asyncio.create_task(loop.run())
            try:
                await wait_for(lambda: loop.finished)
                loop.submit(ApplyPush(kind="apply_push", link=6, s=0.8,
                                      force=(-20.0, 0.0, 0.0),
                                      duration=0.3), client)
                await wait_for(lambda: any(
                    json.loads(f)["kind"] == "ack" for f in client.frames))
            finally:
                loop.stop()
                await asyncio.wait_for(task, 5.0)
            ack = next(json.loads(f) for f in client.frames
                       if json.loads(f)["kind"] == "ack")
            assert not ack["ok"]
            assert "finished" in ack["error"]
            assert loop.pushes == []

        drive(main)

    def test_reset_starts_over(self):
        async def main():
            loop = SimLoop(service_scenario(duration=0.5), pace=0.0)
            client = loop.attach()
            task = asyncio.create_task(loop.run())
            try:
                await wait_for(lambda: loop.finished)
                ticks_before = len(loop.outputs)
                loop.submit(Reset(kind="reset"), client)
                # in free-run the whole re-run can land between two polls,
                # so wait on the durable evidence: a second finish broadcast
                await wait_for(lambda: loop.finished and sum(
                    '"kind":"metrics"' in f for f in client.frames) >= 2)
                assert len(loop.outputs) == ticks_before
            finally:
                loop.stop()
                await asyncio.wait_for(task, 5.0)
            frames = [json.loads(f) for f in client.frames]
            # fresh path snapshot right after the reset is applied
            resets = [f for f in frames
                      if f["kind"] == "path_update" and f["tick"] == 0]
            assert len(resets) >= 2  # one on attach, one on reset
            assert sum(f["kind"] == "metrics" for f in frames) == 2
            first = run(loop.scenario)
            assert np.array_equal(loop.result().q, first.q)

        drive(main)

    def test_set_config_whitelist(self):
        async def main():
            loop = SimLoop(service_scenario(duration=2.0), pace=0.0)
            client = loop.attach()
            loop.submit(Pause(kind="pause"))
            task = asyncio.create_task(loop.run())
            try:
                await wait_for(lambda: loop.paused)
                loop.submit(SetConfig(kind="set_config",
                                      values={"detection.alpha": 0.5}),
                            client)
                await wait_for(lambda: any(
                    json.loads(f)["kind"] == "ack" for f in client.frames))
                assert loop.replayable
                loop.submit(SetConfig(kind="set_config",
                                      values={"planner.gain": 0.02}), client)
                await wait_for(lambda: not loop.replayable)
            finally:
                loop.stop()
                await asyncio.wait_for(task, 5.0)
            acks = [json.loads(f) for f in client.frames
                    if json.loads(f)["kind"] == "ack"]
            assert [a["ok"] for a in acks] == [False, True]
            assert "not tunable" in acks[0]["error"]
            assert loop.engine.planner.config.gain == 0.02
            assert not loop.record()["replayable"]

        drive(main)

    def test_tunable_keys_exist_on_planner_config(self):
        config = service_scenario().planner
        for key in TUNABLE_KEYS:
            section, name = key.split(".", 1)
            assert section == "planner"
            assert hasattr(config, name)

    def test_record_replays_tick_for_tick(self):
        """A live session with interactive pushes, rerun offline from its
        record, reproduces every output array and event exactly."""
        async def main():
            loop = SimLoop(service_scenario(duration=3.0), pace=0.0)
            loop.submit(Pause(kind="pause"))
            task = asyncio.create_task(loop.run())
            try:
                await wait_for(lambda: loop.paused)
                loop.submit(ApplyPush(kind="apply_push", link=6, s=0.8,
                                      force=(-20.0, 0.0, 0.0), duration=0.4))
                loop.submit(Resume(kind="resume"))
                await wait_for(lambda: loop.engine.tick >= 1200)
                loop.submit(ApplyPush(kind="apply_push", link=4, s=0.7,
                                      force=(0.0, 0.0, -15.0), duration=0.3,
                                      profile="half_sine"))
                await wait_for(lambda: loop.finished)
            finally:
                loop.stop()
                await asyncio.wait_for(task, 5.0)
            record = loop.record()
            assert record["replayable"]
            assert record["ticks"] == 3000
            assert record["pushes"][0]["start_tick"] == 1
            live = loop.result()
            replay = run(Scenario.from_dict(record["scenario"]))
            for name in ("t", "q", "qd", "tau_meas", "tau_model", "tau_hat",
                         "tau_ext", "eta_bar", "contact", "link", "s",
                         "target", "tip"):
                assert np.array_equal(getattr(live, name),
                                      getattr(replay, name)), name
            assert live.events == replay.events
            assert any(e["kind"] == "estimate" for e in live.events)

        drive(main)

    def test_pause_resume_does_not_simulate_paused_time(self):
        """Wall time spent paused is skipped, not replayed as a burst."""
        async def main():
            loop = SimLoop(service_scenario(duration=30.0), pace=1.0)
            task = asyncio.create_task(loop.run())
            try:
                await wait_for(lambda: loop.engine.tick >= 50)
                loop.submit(Pause(kind="pause"))
                await wait_for(lambda: loop.paused)
                await asyncio.sleep(0.05)
                frozen = loop.engine.tick
                await asyncio.sleep(0.3)
                assert loop.engine.tick == frozen
                loop.submit(Resume(kind="resume"))
                await asyncio.sleep(0.15)
                advanced = loop.engine.tick - frozen
                # ~150 ticks of real time; a catch-up burst would be ~450
                assert 50 <= advanced <= 300
            finally:
                loop.stop()
                await asyncio.wait_for(task, 5.0)

        drive(main)

    def test_slow_client_loses_oldest_frames_only(self):
        async def main():
            loop = SimLoop(service_scenario(duration=2.0), pace=0.0)
            client = loop.attach()
            client.frames = deque(maxlen=40)  # simulate a tiny buffer
            task = asyncio.create_task(loop.run())
            try:
                await wait_for(lambda: loop.finished)
            finally:
                loop.stop()
                await asyncio.wait_for(task, 5.0)
            frames = [json.loads(f) for f in client.frames]
            assert len(frames) == 40
            # old frames gone, newest retained in order
            assert frames[0]["seq"] > 2
            assert frames[-1]["kind"] == "metrics"
            seqs = [f["seq"] for f in frames]
            assert all(b > a for a, b in zip(seqs, seqs[1:]))

        drive(main)


class TestServiceApp:
    @pytest.fixture()
    def client(self):
        app = create_app(service_scenario(duration=30.0), pace=1.0)
        with TestClient(app) as client:
            yield client

    def test_rest_surface(self, client):
        health = client.get("/health").json()
        assert health["status"] == "ok"
        assert health["protocol_version"] == PROTOCOL_VERSION
        assert not health["aborted"]
        scenario = client.get("/scenario").json()
        assert scenario["name"] == "push_lateral"
        assert scenario["contacts"] == []
        path = client.get("/path").json()
        assert len(path["path"]) == 201 and path["bumps"] == []
        record = client.get("/record").json()
        assert record["replayable"]
        assert record["scenario"]["duration"] == 30.0
        metrics = client.get("/metrics").json()
        assert metrics["aborted"] is False
        assert metrics["contacts_total"] == 0

    def test_websocket_roundtrip(self, client):
        with client.websocket_connect("/ws") as ws:
            hello = json.loads(ws.receive_text())
            assert hello["kind"] == "hello"
            assert hello["joints"] == 7
            assert json.loads(ws.receive_text())["kind"] == "path_update"
            ws.send_text(json.dumps({
                "kind": "apply_push", "id": "big", "link": 6, "s": 0.8,
                "force": [-120, 0, 0], "duration": 0.5}))
            ack = self._next_of_kind(ws, "ack")
            assert not ack["ok"]
            assert "exceeds" in ack["error"]
            ws.send_text(json.dumps({
                "kind": "apply_push", "id": "ok", "link": 6, "s": 0.8,
                "force": [-20, 0, 0], "duration": 0.5}))
            ack = self._next_of_kind(ws, "ack")
            assert ack["ok"] and ack["id"] == "ok"
            detection = self._next_of_kind(ws, "detection")
            assert detection["contact"] == 1 and detection["link"] == 6

    def test_malformed_frames_get_error_replies(self, client):
        with client.websocket_connect("/ws") as ws:
            ws.receive_text()
            ws.receive_text()
            ws.send_text("garbage")
            error = self._next_of_kind(ws, "error")
            assert "Invalid JSON" in error["error"]
            ws.send_text(json.dumps({"kind": "pause",
                                     "protocol_version": 9}))
            error = self._next_of_kind(ws, "error")
            assert "not supported" in error["error"]

    def test_two_sockets_see_same_broadcasts(self, client):
        with client.websocket_connect("/ws") as one, \
                client.websocket_connect("/ws") as two:
            by_seq: dict[int, list] = {}
            for ws in (one, two):
                ws.receive_text()  # hello
                ws.receive_text()  # path snapshot
                for _ in range(30):
                    frame = ws.receive_text()
                    by_seq.setdefault(json.loads(frame)["seq"],
                                      []).append(frame)
            shared = [frames for frames in by_seq.values()
                      if len(frames) == 2]
            assert len(shared) >= 10
            assert all(a == b for a, b in shared)

    @staticmethod
    def _next_of_kind(ws, kind: str, limit: int = 500) -> dict:
        for _ in range(limit):
            frame = json.loads(ws.receive_text())
            if frame["kind"] == kind:
                return frame
        raise AssertionError(f"no {kind} frame within {limit} frames")
