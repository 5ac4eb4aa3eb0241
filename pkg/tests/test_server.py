import asyncio
import io
import threading
import time

import pytest
from hypothesis import given, strategies as st

from duo.interactive import run_interactive
from duo.server import DuoServer, WireMessage, parse_listen
from duo.trace import Scenario, Trace, TraceEvent
from duo.verify import replay

from wire_client import normalize, replay_over_socket, send


@given(
    st.sampled_from(["input", "token", "event", "error", "hello", "bye"]),
    st.none() | st.text(max_size=8),
    st.dictionaries(st.text(max_size=5), st.integers() | st.text(max_size=5), max_size=3),
)
def test_wire_round_trip(type_, session, payload):
    msg = WireMessage(type_, session, payload)
    assert WireMessage.from_line(msg.to_line()) == msg


@pytest.mark.parametrize("line", [b"[]", b'{"type": "shout"}', b'{"type": "input", "payload": 3}', b"{"])
def test_wire_rejects(line):
    with pytest.raises(ValueError):
        WireMessage.from_line(line)


def test_parse_listen():
    assert parse_listen("0.0.0.0:9000") == ("0.0.0.0", 9000)
    assert parse_listen(":9000") == ("127.0.0.1", 9000)


def serve(model, coro_fn):
    async def main():
        server = DuoServer(model, cycle_delay=0)
        host, port = await server.start()
        try:
            return await coro_fn(host, port, server)
        finally:
            server._server.close()
            await server._server.wait_closed()

    return asyncio.run(main())


def test_socket_replay_matches_in_process(mock_model):
    tr = Trace([TraceEvent(1, "what about tea?")], Scenario.INTERRUPTION, "<1>", "hi")
    expected = replay(mock_model, tr)
    events, tokens = serve(mock_model, lambda h, p, s: replay_over_socket(h, p, tr))
    assert events == normalize(expected.events)
    assert [t for t, _ in tokens] == expected.tokens()
    kinds = [e["kind"] for e in events]
    assert kinds.index("fork") < kinds.index("transition")


def test_live_input_forks_then_drops(mock_model):
    async def client(host, port, server):
        reader, writer = await asyncio.open_connection(host, port)
        await reader.readline()
        await send(writer, "hello", prompt="hi")
        kinds = []
        sent = False
        while "drop" not in kinds:
            msg = WireMessage.from_line(await asyncio.wait_for(reader.readline(), 10))
            if msg.type == "token" and not sent:
                await send(writer, "input", text="nice weather.")
                sent = True
            if msg.type == "event":
                kinds.append(msg.payload["kind"])
        writer.close()
        return kinds

    kinds = serve(mock_model, client)
    assert kinds.index("fork") < kinds.index("drop")


def test_malformed_message_keeps_connection(mock_model):
    async def client(host, port, server):
        reader, writer = await asyncio.open_connection(host, port)
        await reader.readline()
        writer.write(b"{not json\n")
        await writer.drain()
        err = WireMessage.from_line(await reader.readline())
        await send(writer, "input", text="x")  # no session yet
        err2 = WireMessage.from_line(await reader.readline())
        await send(writer, "hello", prompt="hi", hold=True)
        await send(writer, "bye")
        while True:
            msg = WireMessage.from_line(await reader.readline())
            if msg.type == "bye":
                break
        writer.close()
        return err, err2

    err, err2 = serve(mock_model, client)
    assert err.type == "error" and err2.type == "error"


def test_disconnect_mid_generation(tiny_model):
    async def client(host, port, server):
        reader, writer = await asyncio.open_connection(host, port)
        await reader.readline()
        await send(writer, "hello", prompt="hi")
        for _ in range(5):
            await reader.readline()
        writer.close()
        for _ in range(100):
            if server.active == 0:
                break
            await asyncio.sleep(0.01)
        # the server still accepts new sessions afterwards
        events, _ = await replay_over_socket(host, port, Trace(prompt="x"))
        return server.active, events

    active, events = serve(tiny_model, client)
    assert active <= 1 and events[-1]["kind"] == "done"


def test_concurrent_sessions_do_not_leak(mock_model):
    traces = [Trace([TraceEvent(i % 3 + 1, f"q{i}?" if i % 2 else f"d{i}.")], prompt=f"p{i}")
              for i in range(6)]

    async def clients(host, port, server):
        return await asyncio.gather(*(replay_over_socket(host, port, t) for t in traces))

    results = serve(mock_model, clients)
    for tr, (events, tokens) in zip(traces, results):
        expected = replay(mock_model, tr)
        assert events == normalize(expected.events)
        assert [t for t, _ in tokens] == expected.tokens()


class SlowLines(io.TextIOBase):
    """stdin stand-in that releases lines after delays."""

    def __init__(self, lines):
        self.lines = list(lines)

    def readline(self):
        if not self.lines:
            return ""
        delay, line = self.lines.pop(0)
        time.sleep(delay)
        return line

    def __iter__(self):
        while True:
            line = self.readline()
            if not line:
                return
            yield line


def test_interactive_distractor_is_ignored(mock_model):
    out = io.StringIO()
    run_interactive(mock_model, None, SlowLines([(0.02, "nice day.\n")]), out, prompt="hi", cycle_delay=0.02)
    text = out.getvalue()
    assert "[ignored]" in text and "[interrupted]" not in text
    assert "abcdefghij" in text.replace("[listening]", "").replace("[ignored]", "").replace(" ", "")


def test_interactive_interruption(mock_model):
    out = io.StringIO()
    run_interactive(mock_model, None, SlowLines([(0.02, "why?\n")]), out, prompt="hi", cycle_delay=0.02)
    text = out.getvalue()
    assert "[interrupted]" in text and "0123456789" in text


def test_interactive_plain(mock_model):
    out = io.StringIO()
    run_interactive(mock_model, None, io.StringIO(""), out, prompt="hi", cycle_delay=0)
    assert "abcdefghij" in out.getvalue() and "[" not in out.getvalue()


def test_interactive_reader_thread_is_daemon(mock_model):
    before = threading.active_count()
    run_interactive(mock_model, None, io.StringIO("hi\n"), io.StringIO(), cycle_delay=0)
    time.sleep(0.05)
    assert threading.active_count() <= before + 1
