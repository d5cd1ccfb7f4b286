"""HTTP and WebSocket surface over one running simulation loop."""

from __future__ import annotations

import asyncio
import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from ..scenario import Scenario
from .loop import SimLoop
from .schemas import PROTOCOL_VERSION, ErrorMessage, parse_command

log = logging.getLogger("contactplan.service")


def create_app(scenario: Scenario, pace: float = 1.0) -> FastAPI:
    loop = SimLoop(scenario, pace=pace)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        task = asyncio.create_task(loop.run())
        try:
            yield
        finally:
            loop.stop()
            task.cancel()
            try:
                await task
            except asyncio.CancelledError:
                pass

    app = FastAPI(title="contactplan service", lifespan=lifespan)
    app.state.loop = loop

    @app.get("/health")
    def health():
        return {"status": "ok", "protocol_version": PROTOCOL_VERSION,
                **loop.status()}

    @app.get("/scenario")
    def scenario_echo():
        return loop.scenario.to_dict()

    @app.get("/metrics")
    def metrics():
        return loop.metrics()

    @app.get("/path")
    def path():
        return loop.path_dict()

    @app.get("/record")
    def record():
        return loop.record()

    @app.websocket("/ws")
    async def ws(socket: WebSocket):
        await socket.accept()
        client = loop.attach()

        async def pump_outbound():
            while True:
                for frame in await client.drain():
                    await socket.send_text(frame)

        sender = asyncio.create_task(pump_outbound())
        try:
            while True:
                text = await socket.receive_text()
                try:
                    command = parse_command(text)
                except ValueError as exc:
                    client.put(ErrorMessage(
                        seq=loop._next_seq(),
                        error=str(exc)).model_dump_json())
                    continue
                loop.submit(command, client)
        except WebSocketDisconnect:
            pass
        finally:
            sender.cancel()
            try:
                await sender
            except (asyncio.CancelledError, Exception):
                pass
            loop.detach(client)

    return app
