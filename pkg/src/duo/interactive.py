"""Text stand-in for the voice demo: type while the assistant is still talking."""
from __future__ import annotations

import threading
import time
from typing import Optional, TextIO

from .scheduler import SchedulerConfig, Session, Tag
from .vocab import display, tokenize

MARKERS = {
    "fork": " [listening]",
    "suspend": " [interrupted]\n",
    "transition": "\n> ",
    "drop": " [ignored]",
    "done": "\n",
}


def run_interactive(
    model,
    config: Optional[SchedulerConfig],
    stdin: TextIO,
    stdout: TextIO,
    prompt: Optional[str] = None,
    cycle_delay: float = 0.05,
) -> int:
    """Stream the reply while a reader thread enqueues typed lines.

    Without ``prompt`` the first typed line opens the conversation. Returns
    once input hits EOF and the session has nothing left to do.
    """

    def on_token(entry):
        if entry.tag is Tag.ASSISTANT and entry.step is not None:
            stdout.write(display([entry.token]))
            stdout.flush()

    def on_event(ev):
        stdout.write(MARKERS.get(ev["kind"], ""))
        stdout.flush()

    session = Session(model, config, on_token=on_token, on_event=on_event)
    eof = threading.Event()

    if prompt is None:
        first = stdin.readline()
        if not first:
            return 0
        prompt = first.rstrip("\n")
    stdout.write("> ")
    session.start(tokenize(prompt))

    def reader():
        for line in stdin:
            line = line.rstrip("\n")
            if line:
                session.enqueue(tokenize(line))
        eof.set()

    t = threading.Thread(target=reader, daemon=True)
    t.start()
    while True:
        if session.has_work():
            session.run_cycle()
            if cycle_delay:
                time.sleep(cycle_delay)
        elif eof.is_set():
            break
        else:
            time.sleep(max(cycle_delay, 0.01))
    stdout.write("\n")
    stdout.flush()
    return 0
