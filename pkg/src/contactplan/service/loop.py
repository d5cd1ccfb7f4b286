"""Wall-clock paced simulation loop with telemetry fan-out.

One asyncio task owns the engine.  Commands from any number of clients
are queued and applied between ticks, so every mutation lands on a tick
boundary and the run stays reproducible.  Telemetry is serialized once
per message and pushed to every client's bounded queue; a slow consumer
loses oldest frames instead of stalling the loop or its peers.
"""

from __future__ import annotations

import asyncio
import dataclasses
import time
from collections import deque

from ..harness import (
    SimEngine,
    TickOutput,
    collect_result,
    compute_metrics,
    deformed_path_payload,
)
from ..scenario import Scenario
from . import schemas
from .schemas import (
    Ack,
    ApplyPush,
    BumpTelemetry,
    Command,
    DetectionTelemetry,
    ErrorMessage,
    EstimateTelemetry,
    Hello,
    MetricsTelemetry,
    PathUpdate,
    Reset,
    SetConfig,
    TickTelemetry,
)

TELEMETRY_HZ = 60.0
CHUNK_TICKS = 256          # cap per wake so the event loop stays responsive
IDLE_SLEEP = 0.004

# live-tunable without breaking detector state or replay structure
TUNABLE_KEYS = ("planner.gain", "planner.force_saturation",
                "planner.horizon_per_newton", "planner.deadband")


class ClientQueue:
    """Per-connection outbound frame buffer, oldest dropped when full."""

    def __init__(self, maxlen: int = 1024):
        self.frames: deque[str] = deque(maxlen=maxlen)
        self.wakeup = asyncio.Event()

    def put(self, text: str):
        self.frames.append(text)
        self.wakeup.set()

    async def drain(self) -> list[str]:
        await self.wakeup.wait()
        self.wakeup.clear()
        out = []
        while self.frames:
            out.append(self.frames.popleft())
        return out


class SimLoop:
    """Engine plus pacing, command handling, and broadcast bookkeeping."""

    def __init__(self, scenario: Scenario, pace: float = 1.0):
        if pace < 0:
            raise ValueError("pace must be >= 0")
        self.scenario = scenario
        self.pace = pace            # 1 = real time, 0 = free-run
        self.engine = SimEngine(scenario)
        self.paused = False
        self.finished = False
        self.outputs: list[TickOutput] = []
        self.pushes: list[dict] = []
        self.replayable = True
        self.clients: list[ClientQueue] = []
        self._seq = 0
        self._commands: deque[tuple[Command, ClientQueue | None]] = deque()
        self._decimate = max(1, round(scenario.sample_rate / TELEMETRY_HZ))
        self._stop = False

    # ------------------------------------------------------------------
    # client lifecycle

    def attach(self) -> ClientQueue:
        client = ClientQueue()
        self.clients.append(client)
        client.put(Hello(
            seq=self._next_seq(), scenario=self.scenario.name,
            joints=self.engine.model.n,
            sample_rate=self.scenario.sample_rate,
            duration=self.scenario.duration, tick=self.engine.tick,
            paused=self.paused,
            detection_threshold=self.scenario.detection.threshold,
        ).model_dump_json())
        client.put(self._path_update().model_dump_json())
        return client

    def detach(self, client: ClientQueue):
        if client in self.clients:
            self.clients.remove(client)

    def submit(self, command: Command, client: ClientQueue | None = None):
        self._commands.append((command, client))

    def stop(self):
        self._stop = True

    # ------------------------------------------------------------------
    # snapshots for the REST surface

    def result(self):
        return collect_result(self.engine, self.outputs)

    def metrics(self) -> dict:
        return compute_metrics(self.result())

    def path_dict(self) -> dict:
        return deformed_path_payload(self.engine.planner.path)

    def status(self) -> dict:
        return {"tick": self.engine.tick,
                "t": self.engine.tick * self.scenario.dt,
                "paused": self.paused,
                "finished": self.finished,
                "aborted": self.engine.aborted,
                "clients": len(self.clients)}

    def record(self) -> dict:
        """Everything needed to re-run this session as a batch job.

        The returned scenario has the interactive pushes merged into its
        contact list on the exact ticks they landed, so loading it and
        running offline reproduces this session tick for tick (unless
        a live config change cleared the replayable flag).
        """
        data = self.scenario.to_dict()
        rate = self.scenario.sample_rate
        data["contacts"] = list(data["contacts"]) + [
            {"link": p["link"], "s": p["s"], "force": p["force"],
             "t_start": p["start_tick"] / rate,
             "t_end": p["end_tick"] / rate,
             "profile": p["profile"]}
            for p in self.pushes]
        return {"scenario": data,
                "pushes": list(self.pushes),
                "ticks": len(self.outputs),
                "replayable": self.replayable}

    # ------------------------------------------------------------------
    # the loop

    async def run(self):
        anchor_time = time.perf_counter()
        anchor_tick = self.engine.tick
        while not self._stop:
            handled = False
            while self._commands:
                command, client = self._commands.popleft()
                self._handle(command, client)
                handled = True
            if handled:
                # commands land on tick boundaries; re-anchoring here also
                # means wall time spent paused is never simulated, so a
                # resume continues the stream without a sim-time gap
                anchor_time = time.perf_counter()
                anchor_tick = self.engine.tick
            if self.paused or self.finished:
                await asyncio.sleep(IDLE_SLEEP)
                anchor_time = time.perf_counter()
                anchor_tick = self.engine.tick
                continue
            if self.pace > 0:
                elapsed = time.perf_counter() - anchor_time
                due = anchor_tick + int(
                    elapsed * self.scenario.sample_rate / self.pace) \
                    - self.engine.tick
            else:
                due = CHUNK_TICKS
            for _ in range(min(due, CHUNK_TICKS)):
                self._step_once()
                if self.finished:
                    break
            await asyncio.sleep(0 if due >= CHUNK_TICKS else IDLE_SLEEP)

    def _step_once(self):
        out = self.engine.step()
        self.outputs.append(out)
        for event in out.events:
            self._broadcast_event(out, event)
        if out.tick % self._decimate == 0:
            self._broadcast(TickTelemetry(
                seq=self._next_seq(), tick=out.tick, t=out.t,
                s=out.s, eta_bar=out.eta_bar, contact=out.contact,
                link=out.link, tip=tuple(float(v) for v in out.tip),
                target=tuple(float(v) for v in out.target),
                deviation=float(sum((a - b) ** 2 for a, b in
                                    zip(out.tip, out.target)) ** 0.5)))
        if self.engine.aborted or self.engine.tick >= self.scenario.ticks:
            self.finished = True
            self._broadcast(MetricsTelemetry(
                seq=self._next_seq(), tick=out.tick, data=self.metrics()))

    def _broadcast_event(self, out: TickOutput, event: dict):
        payload = {k: v for k, v in event.items() if k != "kind"}
        if event["kind"] == "detection":
            self._broadcast(DetectionTelemetry(seq=self._next_seq(),
                                               **payload))
        elif event["kind"] == "estimate":
            self._broadcast(EstimateTelemetry(seq=self._next_seq(),
                                              **payload))
        elif event["kind"] == "bump":
            self._broadcast(BumpTelemetry(seq=self._next_seq(), **payload))
            self._broadcast(self._path_update())
        elif event["kind"] == "abort":
            self._broadcast(ErrorMessage(seq=self._next_seq(),
                                         error=event["reason"]))

    # ------------------------------------------------------------------
    # commands

    def _handle(self, command: Command, client: ClientQueue | None):
        try:
            if isinstance(command, ApplyPush):
                self._apply_push(command)
            elif isinstance(command, Reset):
                self._reset()
            elif isinstance(command, SetConfig):
                self._set_config(command)
            elif command.kind == "pause":
                self.paused = True
            elif command.kind == "resume":
                self.paused = False
        except ValueError as exc:
            self._ack(client, command, ok=False, error=str(exc))
            return
        self._ack(client, command, ok=True)

    def _apply_push(self, command: ApplyPush):
        if self.finished:
            raise ValueError("run already finished; reset to push again")
        contact = self.engine.apply_push(command.link, command.s,
                                         command.force, command.duration,
                                         command.profile)
        self.pushes.append({
            "link": command.link, "s": command.s,
            "force": list(command.force), "duration": command.duration,
            "profile": command.profile,
            "start_tick": contact.start_tick,
            "end_tick": contact.end_tick})

    def _reset(self):
        self.engine = SimEngine(self.scenario)
        self.outputs.clear()
        self.pushes.clear()
        self.replayable = True
        self.paused = False
        self.finished = False
        self._broadcast(self._path_update())

    def _set_config(self, command: SetConfig):
        unknown = [k for k in command.values if k not in TUNABLE_KEYS]
        if unknown:
            raise ValueError(
                f"'{unknown[0]}' is not tunable; allowed: "
                + ", ".join(TUNABLE_KEYS))
        planner = self.engine.planner
        fields = {k.split(".", 1)[1]: v for k, v in command.values.items()}
        planner.config = dataclasses.replace(planner.config, **fields)
        self.replayable = False

    def _ack(self, client: ClientQueue | None, command: Command, ok: bool,
             error: str | None = None):
        if client is None:
            return
        client.put(Ack(seq=self._next_seq(), id=command.id, ok=ok,
                       tick=self.engine.tick,
                       error=error).model_dump_json())

    # ------------------------------------------------------------------

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _path_update(self) -> PathUpdate:
        snapshot = self.path_dict()
        return PathUpdate(seq=self._next_seq(), tick=self.engine.tick,
                          path=snapshot["path"], bumps=snapshot["bumps"])

    def _broadcast(self, message: schemas.ServerMessage):
        text = message.model_dump_json()
        for client in self.clients:
            client.put(text)
