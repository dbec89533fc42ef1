"""Console HTTP API and vehicle TCP listener around one ControlCenter.

The HTTP side is the console's only surface: registry snapshots, the request
queue, claim/command/release, and a full-duplex stream carrying the same
NDJSON message framing as the vehicle wire. The TCP side accepts vehicle
connections speaking that framing directly.
"""

from __future__ import annotations

import asyncio
import json
import queue
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse
from pydantic import BaseModel
from starlette.concurrency import run_in_threadpool

from . import fsm
from .center import CenterError, ControlCenter, UnknownVehicle
from .eventlog import EventLog
from .fsm import DEFAULT_LINK_THRESHOLD, Event, EventKind, ManeuverMode, Role, TransitionError
from .protocol import (
    BODY_TYPES,
    CommandAck,
    DecodeError,
    DuplicateMsgId,
    Message,
    SeqRegression,
    SessionValidator,
    decode,
    encode,
)

HTTP_ERROR_CODES = {
    "unknown_vehicle": 404,
    "unknown_request": 404,
    "no_session": 404,
    "duplicate_vehicle": 409,
    "vehicle_busy": 409,
    "operator_busy": 409,
    "release_refused_mid_maneuver": 409,
    "command_timeout": 504,
}


@dataclass(frozen=True)
class ServiceConfig:
    profile: str = "generic"
    http_host: str = "127.0.0.1"
    http_port: int = 8420
    vehicle_host: str = "127.0.0.1"
    vehicle_port: int = 8421
    telemetry_gap_s: float = 3.0
    link_threshold: float = DEFAULT_LINK_THRESHOLD
    ack_timeout_s: float = 5.0
    fm_intervention: bool = False
    auto_registration: bool = False
    log_path: Optional[str] = None
    console_dir: Optional[str] = None

    @classmethod
    def from_file(cls, path: str | Path) -> "ServiceConfig":
        raw = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def overridden(self, **kw) -> "ServiceConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def build_center(config: ServiceConfig, transport=None) -> ControlCenter:
    return ControlCenter(
        fsm.get_profile(config.profile),
        log=EventLog(config.log_path),
        transport=transport,
        auto_registration=config.auto_registration,
        fm_intervention=config.fm_intervention,
        link_threshold=config.link_threshold,
        telemetry_gap_s=config.telemetry_gap_s,
        ack_timeout_s=config.ack_timeout_s,
    )


class ClaimBody(BaseModel):
    operator_id: str
    as_role: str = "remote_operator"


class CommandBody(BaseModel):
    kind: str
    mode: Optional[str] = None


class ForwardBody(BaseModel):
    body: dict


def parse_wire_body(raw: dict):
    body_cls = BODY_TYPES.get(raw.get("type", ""))
    if body_cls is None:
        raise ValueError(f"unknown body type {raw.get('type')!r}")
    try:
        return body_cls.from_fields(raw)
    except (KeyError, TypeError) as e:
        raise ValueError(f"malformed {raw['type']} body: {e}") from None


def ack_view(ack: CommandAck) -> dict:
    return ack.to_fields()


def build_app(center: ControlCenter, clock=time.time, console_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="av-control-center")
    app.state.center = center

    @app.exception_handler(CenterError)
    async def center_error(_: Request, exc: CenterError):
        status = HTTP_ERROR_CODES.get(exc.code, 400)
        return JSONResponse(status_code=status, content={"error": exc.code, "detail": str(exc)})

    @app.exception_handler(TransitionError)
    async def transition_error(_: Request, exc: TransitionError):
        # central static refusals (actor, profile); guard refusals come back as acks
        return JSONResponse(status_code=403, content={"error": exc.code, "detail": str(exc)})

    @app.exception_handler(ValueError)
    async def bad_value(_: Request, exc: ValueError):
        return JSONResponse(status_code=400, content={"error": "bad_request", "detail": str(exc)})

    @app.get("/fleet")
    def fleet():
        return {"profile": center.profile.name, "vehicles": center.fleet_view(clock())}

    @app.get("/requests")
    def requests():
        return {"requests": center.requests_view()}

    @app.post("/requests/{request_id}/claim")
    def claim(request_id: str, body: ClaimBody):
        role = Role.FLEET_MANAGER if body.as_role == "fleet_manager" else Role.REMOTE_OPERATOR
        session = center.claim(body.operator_id, clock(), request_id=request_id, as_role=role)
        return session.to_view()

    @app.post("/vehicles/{vehicle_id}/claim")
    def claim_vehicle(vehicle_id: str, body: ClaimBody):
        role = Role.FLEET_MANAGER if body.as_role == "fleet_manager" else Role.REMOTE_OPERATOR
        session = center.claim(body.operator_id, clock(), vehicle_id=vehicle_id, as_role=role)
        return session.to_view()

    @app.post("/sessions/{session_id}/command")
    def command(session_id: str, body: CommandBody):
        kind = EventKind(body.kind)
        mode = ManeuverMode.from_wire(body.mode) if body.mode else None
        ack = center.issue_command(session_id, kind, clock(), mode=mode)
        return ack_view(ack)

    @app.post("/sessions/{session_id}/forward")
    def forward(session_id: str, body: ForwardBody):
        wire_body = parse_wire_body(body.body)
        ack = center.forward_to_vehicle(session_id, wire_body, clock())
        return {"ack": ack_view(ack) if ack else None}

    @app.post("/sessions/{session_id}/release")
    def release(session_id: str):
        session = center.release(session_id, clock())
        return session.to_view()

    @app.get("/vehicles/{vehicle_id}/affordances")
    def affordances(vehicle_id: str):
        return center.affordances(vehicle_id, clock())

    @app.websocket("/stream")
    async def stream(ws: WebSocket):
        await ws.accept()
        outbound: queue.Queue = queue.Queue()
        center.add_listener(outbound.put)

        async def pump():
            while True:
                msg = await run_in_threadpool(outbound.get)
                if msg is None:  # shutdown sentinel; also frees the worker thread
                    return
                await ws.send_text(encode(msg).decode("utf-8").rstrip("\n"))

        async def receive():
            while True:
                line = await ws.receive_text()
                try:
                    msg = decode(line)
                except DecodeError as e:
                    await ws.send_text(json.dumps({"error": "decode_error", "detail": str(e)}))
                    continue
                session = center.session_for_vehicle(msg.vehicle_id)
                if session is None:
                    await ws.send_text(json.dumps({"error": "no_session", "detail": msg.vehicle_id}))
                    continue
                try:
                    await run_in_threadpool(center.forward_to_vehicle, session.session_id, msg.body, clock())
                except (CenterError, TransitionError) as e:
                    await ws.send_text(json.dumps({"error": getattr(e, "code", "error"), "detail": str(e)}))

        tasks = [asyncio.ensure_future(pump()), asyncio.ensure_future(receive())]
        done, pending = await asyncio.wait(tasks, return_when=asyncio.FIRST_COMPLETED)
        center.remove_listener(outbound.put)
        outbound.put(None)
        for task in pending:
            task.cancel()
        for task in done:
            exc = task.exception()
            if exc is not None and not isinstance(exc, WebSocketDisconnect):
                raise exc

    if console_dir and Path(console_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        # mounted last so API routes keep precedence
        app.mount("/", StaticFiles(directory=console_dir, html=True), name="console")

    return app


class VehicleListener:
    """TCP acceptor for vehicle connections speaking NDJSON messages.

    Inbound lines are decoded, per-connection ordering enforced, and handed
    to the center. Outbound commands are written back over the connection
    that said hello for that vehicle; the center's ack waiter completes when
    the reply arrives, so this transport always returns None.
    """

    def __init__(self, center: ControlCenter, host: str = "127.0.0.1", port: int = 0, clock=time.time):
        self.center = center
        self.host = host
        self.port = port
        self.clock = clock
        self._server: Optional[asyncio.AbstractServer] = None
        self._loop: Optional[asyncio.AbstractEventLoop] = None
        self._writers: dict[str, asyncio.StreamWriter] = {}

    def transport(self, vehicle_id: str, message: Message) -> None:
        writer = self._writers.get(vehicle_id)
        if writer is None:
            raise UnknownVehicle(f"{vehicle_id} not connected")
        # commands are issued from worker threads; hand the write to the loop
        self._loop.call_soon_threadsafe(self._write, writer, encode(message))
        return None

    @staticmethod
    def _write(writer: asyncio.StreamWriter, data: bytes) -> None:
        if not writer.is_closing():
            writer.write(data)

    async def start(self) -> None:
        self._loop = asyncio.get_running_loop()
        self._server = await asyncio.start_server(self._serve_connection, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def _serve_connection(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        validator = SessionValidator()
        vehicle_id = None
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                try:
                    msg = validator.admit(decode(line))
                except (DecodeError, SeqRegression, DuplicateMsgId) as e:
                    writer.write(json.dumps({"error": type(e).__name__, "detail": str(e)}).encode() + b"\n")
                    break  # a misordered connection cannot be trusted further
                if vehicle_id is None and msg.vehicle_id:
                    vehicle_id = msg.vehicle_id
                    self._writers[vehicle_id] = writer
                await run_in_threadpool(self.center.ingest, [msg], self.clock())
        finally:
            if vehicle_id is not None and self._writers.get(vehicle_id) is writer:
                del self._writers[vehicle_id]
            writer.close()


async def serve(config: ServiceConfig) -> None:
    """Run both listeners until cancelled."""
    import uvicorn

    center = build_center(config)
    listener = VehicleListener(center, config.vehicle_host, config.vehicle_port)
    await listener.start()
    center.transport = listener.transport
    center.async_kicks = True
    app = build_app(center, console_dir=config.console_dir)
    server = uvicorn.Server(
        uvicorn.Config(app, host=config.http_host, port=config.http_port, log_level="warning")
    )
    try:
        await server.serve()
    finally:
        await listener.stop()
