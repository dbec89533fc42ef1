"""Socket runner: one scripted vehicle talking NDJSON to a live center."""

from __future__ import annotations

import socket
import time
from typing import Callable, Optional

from .agent import VehicleAgent
from .protocol import Message, decode, encode


def _send_all(sock: socket.socket, messages: list[Message]) -> None:
    for message in messages:
        sock.sendall(encode(message))


def run_agent(
    agent: VehicleAgent,
    host: str,
    port: int,
    *,
    tick_s: float = 0.1,
    duration_s: Optional[float] = None,
    clock: Callable[[], float] = time.monotonic,
) -> None:
    """Drive the agent on wall-clock ticks until the center hangs up.

    Scenario times count from connect, so a script written for the headless
    runner plays back identically against a networked center.
    """
    started = clock()
    sock = socket.create_connection((host, port))
    # recv doubles as the tick timer; a quiet link still steps on time
    sock.settimeout(tick_s)
    buffer = b""
    try:
        _send_all(sock, agent.start(0.0))
        while duration_s is None or clock() - started < duration_s:
            try:
                data = sock.recv(65536)
                if not data:
                    return
                buffer += data
            except socket.timeout:
                pass
            now = clock() - started
            while b"\n" in buffer:
                line, buffer = buffer.split(b"\n", 1)
                if line.strip():
                    _send_all(sock, agent.handle_message(decode(line), now))
            _send_all(sock, agent.step(now))
    finally:
        sock.close()
