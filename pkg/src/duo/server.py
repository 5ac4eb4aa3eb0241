"""Newline-delimited JSON session server.

Client -> server:
    {"type": "hello", "payload": {"prompt": str | null, "hold": bool}}
    {"type": "input", "payload": {"text": str, "cycle": int | null}}
    {"type": "event", "payload": {"kind": "start"}}      releases a held session
    {"type": "bye"}

Server -> client:
    hello (with the session id), token {channel_tag, text, token, cycle},
    event {kind: fork|transition|drop|suspend|done, ...}, error {message}, bye.

Input without an explicit cycle arrives at the next cycle boundary. A held
session does not decode until released, so a client can pre-schedule inputs
at exact cycles and replay a trace deterministically.
"""
from __future__ import annotations

import asyncio
import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Optional

from .scheduler import SchedulerConfig, Session
from .vocab import display, tokenize

log = logging.getLogger(__name__)

MESSAGE_TYPES = ("input", "token", "event", "error", "hello", "bye")
EVENT_KINDS = ("fork", "transition", "drop", "suspend", "done")


@dataclass
class WireMessage:
    type: str
    session: Optional[str] = None
    payload: dict = field(default_factory=dict)

    def to_line(self) -> bytes:
        obj = {"type": self.type, "session": self.session, "payload": self.payload}
        return (json.dumps(obj, sort_keys=True) + "\n").encode("utf-8")

    @classmethod
    def from_line(cls, line: bytes | str) -> "WireMessage":
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        obj = json.loads(line)
        if not isinstance(obj, dict):
            raise ValueError("message must be a JSON object")
        kind = obj.get("type")
        if kind not in MESSAGE_TYPES:
            raise ValueError(f"unknown message type {kind!r}")
        payload = obj.get("payload") or {}
        if not isinstance(payload, dict):
            raise ValueError("payload must be an object")
        return cls(kind, obj.get("session"), payload)


class _Connection:
    def __init__(self, server: "DuoServer", sid: str, writer: asyncio.StreamWriter):
        self.server = server
        self.sid = sid
        self.writer = writer
        self.session: Optional[Session] = None
        self.runner: Optional[asyncio.Task] = None
        self.wake = asyncio.Event()
        self.closed = False

    def send(self, type_: str, **payload) -> None:
        if self.closed:
            return
        self.writer.write(WireMessage(type_, self.sid, payload).to_line())

    def _on_token(self, entry) -> None:
        self.send("token", channel_tag=entry.tag.value, text=display([entry.token]),
                  token=entry.token, cycle=entry.cycle)

    def _on_event(self, ev) -> None:
        self.send("event", **ev)

    def open_session(self, prompt: Optional[str], hold: bool) -> None:
        if self.session is not None:
            raise ValueError("session already open")
        self.session = Session(
            self.server.model, self.server.config,
            on_event=self._on_event, on_token=self._on_token,
        )
        self.session.start(tokenize(prompt) if prompt else None)
        if not hold:
            self.release()

    def release(self) -> None:
        if self.session is None:
            raise ValueError("no session; send hello first")
        if self.runner is None:
            self.runner = asyncio.ensure_future(self._run())

    def add_input(self, text: str, cycle: Optional[int]) -> None:
        s = self.session
        if s is None:
            raise ValueError("no session; send hello first")
        if not isinstance(text, str) or not text:
            raise ValueError("input text must be a nonempty string")
        toks = tokenize(text)
        if cycle is None:
            s.enqueue(toks)  # next cycle boundary
        else:
            if not isinstance(cycle, int) or isinstance(cycle, bool):
                raise ValueError("cycle must be an integer")
            floor = s.cycle + 1 if self.runner is not None else s.cycle
            s.schedule.setdefault(max(cycle, floor), []).append(toks)
        self.wake.set()

    async def _run(self) -> None:
        s = self.session
        idle_reported = False
        try:
            while not self.closed:
                if s.finished():
                    if not idle_reported:
                        self.send("event", kind="done", scope="session", cycle=s.cycle)
                        idle_reported = True
                    await self.writer.drain()
                    self.wake.clear()
                    await self.wake.wait()
                    continue
                idle_reported = False
                s.run_cycle()
                await self.writer.drain()
                await asyncio.sleep(self.server.cycle_delay)
        except (ConnectionError, asyncio.CancelledError):
            pass

    async def close(self) -> None:
        self.closed = True
        if self.runner is not None:
            self.runner.cancel()
            try:
                await self.runner
            except asyncio.CancelledError:
                pass


class DuoServer:
    def __init__(self, model, config: Optional[SchedulerConfig] = None, cycle_delay: float = 0.0):
        self.model = model
        self.config = config or SchedulerConfig()
        self.cycle_delay = cycle_delay
        self._ids = itertools.count(1)
        self.active = 0
        self._server: Optional[asyncio.base_events.Server] = None

    async def handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        conn = _Connection(self, f"s{next(self._ids)}", writer)
        self.active += 1
        conn.send("hello")
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                if not line.strip():
                    continue
                try:
                    msg = WireMessage.from_line(line)
                    if msg.type == "bye":
                        conn.send("bye")
                        break
                    self._dispatch(conn, msg)
                except (ValueError, UnicodeDecodeError) as exc:
                    conn.send("error", message=str(exc))
                await writer.drain()
        except ConnectionError:
            pass
        finally:
            await conn.close()
            self.active -= 1
            try:
                await writer.drain()
                writer.close()
                await writer.wait_closed()
            except (ConnectionError, RuntimeError):
                pass

    def _dispatch(self, conn: _Connection, msg: WireMessage) -> None:
        p = msg.payload
        if msg.type == "hello":
            conn.open_session(p.get("prompt"), bool(p.get("hold", False)))
        elif msg.type == "input":
            conn.add_input(p.get("text"), p.get("cycle"))
        elif msg.type == "event" and p.get("kind") == "start":
            conn.release()
        else:
            raise ValueError(f"unexpected {msg.type!r} message from client")

    async def start(self, host: str = "127.0.0.1", port: int = 0):
        self._server = await asyncio.start_server(self.handle, host, port)
        return self._server.sockets[0].getsockname()[:2]

    async def serve_forever(self, host: str, port: int) -> None:
        addr = await self.start(host, port)
        log.info("listening on %s:%s", *addr)
        async with self._server:
            await self._server.serve_forever()


def parse_listen(addr: str):
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)
