"""Duplex decoding loop.

Each forward step carries at most one OUTPUT-channel token (the last sampled
response token) and one INPUT-channel token (a pending user token, or the
last speculative token once the user's text is fully prefilled). A cycle
drains the pending user tokens and then speculates up to ``alpha`` tokens;
the first state token among them decides whether the input channel takes
over (``<1>``), is dropped (``<2>``), or simply waits for more input.
Speculative cache entries never outlive their cycle.
"""
from __future__ import annotations

import enum
import json
import logging
import queue
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, List, Optional, Sequence

from .batch import pack
from .errors import ConfigurationError, StateError
from .mask import PREFIX
from .model import sample_greedy
from .vocab import ASSIST, BOS, EOS, STATE_NONQUERY, STATE_QUERY, display, is_state_token, tokenize

log = logging.getLogger(__name__)


class Phase(enum.Enum):
    IDLE = "idle"  # no response being generated (an unresolved input may be live)
    GENERATING = "generating"
    DUAL = "dual"


class Action(enum.Enum):
    NONE = "none"
    TRANSITION = "transition"
    DROP_INPUT = "drop_input"
    OUTPUT_DONE = "output_done"


class Tag(enum.Enum):
    USER = "user"
    ASSISTANT = "assistant"
    ASSISTANT_INTERRUPTED = "assistant_interrupted"
    IGNORED_INPUT = "ignored_input"
    STATE = "state"


@dataclass
class SchedulerConfig:
    alpha: int = 4
    max_output_tokens: int = 256
    transition_delimiter: int = ASSIST
    max_cycles: int = 4096

    def __post_init__(self):
        if self.alpha < 1:
            raise ConfigurationError("alpha must be >= 1")
        if self.max_output_tokens < 1:
            raise ConfigurationError("max_output_tokens must be >= 1")


@dataclass
class TranscriptEntry:
    token: int
    tag: Tag
    cycle: int
    step: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "token": self.token,
            "text": display([self.token]),
            "channel_tag": self.tag.value,
            "cycle": self.cycle,
            "step": self.step,
        }


@dataclass
class StepRecord:
    """Tokens that entered the model in one forward step."""

    step: int
    cycle: int
    output_token: Optional[int] = None
    input_token: Optional[int] = None
    input_speculative: bool = False
    prefix_tokens: int = 0

    @property
    def tokens_in(self) -> int:
        return self.prefix_tokens + (self.output_token is not None) + (self.input_token is not None)


@dataclass
class Transcript:
    entries: List[TranscriptEntry] = field(default_factory=list)
    actions: List[tuple] = field(default_factory=list)  # (cycle, Action)
    events: List[dict] = field(default_factory=list)
    timeline: List[StepRecord] = field(default_factory=list)
    latencies: List[int] = field(default_factory=list)
    late_events: List[dict] = field(default_factory=list)
    forward_count: int = 0
    rebase_forwards: int = 0
    unresolved_input: bool = False

    def tokens(self, *tags: Tag) -> List[int]:
        return [e.token for e in self.entries if not tags or e.tag in tags]

    def tags(self) -> List[tuple]:
        return [(e.token, e.tag) for e in self.entries]

    def action_sequence(self) -> List[tuple]:
        return [(c, a) for c, a in self.actions if a is not Action.NONE]

    def event_kinds(self) -> List[str]:
        return [e["kind"] for e in self.events]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_dict()) + "\n" for e in self.entries)


@dataclass
class CycleOutcome:
    action: Action
    output_tokens_emitted: int
    speculative_tokens: List[int]
    forwards_used: int


@dataclass
class StepReport:
    record: StepRecord
    output_emitted: Optional[int] = None
    speculative_emitted: Optional[int] = None


@dataclass
class _Output:
    channel: int
    frontier: Optional[int]
    emitted: int = 0
    done: bool = False
    entries: List[int] = field(default_factory=list)


@dataclass
class _Input:
    channel: int
    spec: List[int] = field(default_factory=list)
    entries: List[int] = field(default_factory=list)


def evaluate_state(speculative_tokens: Sequence[int], pending_empty: bool) -> Action:
    """First state token decides, and only once the user has gone silent."""
    for t in speculative_tokens:
        if is_state_token(t):
            if not pending_empty:
                return Action.NONE
            return Action.TRANSITION if t == STATE_QUERY else Action.DROP_INPUT
    return Action.NONE


class Session:
    def __init__(
        self,
        model,
        config: Optional[SchedulerConfig] = None,
        capacity: Optional[int] = None,
        record_logits: bool = False,
        on_event: Optional[Callable[[dict], None]] = None,
        on_token: Optional[Callable[[TranscriptEntry], None]] = None,
    ):
        self.model = model
        self.config = config or SchedulerConfig()
        self.cache = model.new_cache(capacity)
        self.transcript = Transcript()
        self.pending: Deque[int] = deque()
        self.inbox: "queue.SimpleQueue[Sequence[int]]" = queue.SimpleQueue()
        self.schedule: Dict[int, List[List[int]]] = {}
        self.cycle = 0
        self.out: Optional[_Output] = None
        self.inp: Optional[_Input] = None
        self.started = False
        self.record_logits = record_logits
        self.output_logits: List = []  # (step, scores) of OUTPUT-channel rows
        self.on_event = on_event
        self.on_token = on_token

    # -- bookkeeping -------------------------------------------------------
    @property
    def forward_count(self) -> int:
        return self.transcript.forward_count

    @property
    def step_index(self) -> int:
        return len(self.transcript.timeline)

    @property
    def generating(self) -> bool:
        return self.out is not None and not self.out.done

    @property
    def phase(self) -> Phase:
        if self.generating:
            return Phase.DUAL if self.inp else Phase.GENERATING
        return Phase.IDLE

    def _record(self, token: int, tag: Tag, step: Optional[int] = None) -> int:
        entry = TranscriptEntry(int(token), tag, self.cycle, step)
        self.transcript.entries.append(entry)
        if self.on_token:
            self.on_token(entry)
        return len(self.transcript.entries) - 1

    def _event(self, kind: str, **info) -> None:
        ev = {"kind": kind, "cycle": self.cycle, "step": self.step_index, **info}
        self.transcript.events.append(ev)
        log.debug("event %s", ev)
        if self.on_event:
            self.on_event(ev)

    def _forward(self, requests):
        batch = pack(self.cache, requests)
        rows = self.model.forward(batch, self.cache)
        self.transcript.forward_count += 1
        return rows

    # -- lifecycle ---------------------------------------------------------
    def start(self, prompt: Optional[Sequence[int]] = None) -> None:
        """Prefill the opening context; with a prompt, begin answering it."""
        if self.started:
            raise StateError("session already started")
        self.started = True
        prefix = [BOS]
        if prompt:
            prefix += list(prompt) + [self.config.transition_delimiter]
        rows = self._forward([(t, PREFIX, False) for t in prefix])
        self.transcript.timeline.append(StepRecord(0, self.cycle, prefix_tokens=len(prefix)))
        if not prompt:
            return
        for t in prompt:
            self._record(t, Tag.USER, 0)
        self._record(self.config.transition_delimiter, Tag.ASSISTANT, 0)
        ch = self.cache.open_output_channel()
        self.out = _Output(ch.id, None)
        if self.record_logits:
            self.output_logits.append((0, rows[-1].scores.copy()))
        self._emit_output(sample_greedy(rows[-1]), 0)

    def enqueue(self, tokens: Sequence[int]) -> None:
        """Thread-safe hand-off of user tokens; consumed at the next cycle boundary."""
        self.inbox.put(list(tokens))

    def schedule_trace(self, trace) -> None:
        for ev in trace.events:
            self.schedule.setdefault(ev.cycle, []).append(tokenize(ev.payload))

    def _deliver(self) -> None:
        for toks in self.schedule.pop(self.cycle, []):
            self.pending.extend(toks)
        while True:
            try:
                self.pending.extend(self.inbox.get_nowait())
            except queue.Empty:
                break
        if self.pending and self.inp is None:
            ch = self.cache.fork_input_channel()
            self.inp = _Input(ch.id)
            self._event("fork", fork_time=ch.fork_time)

    def _silent(self) -> bool:
        return not self.pending and self.inbox.empty() and not self.schedule.get(self.cycle + 1)

    def _speculating(self) -> bool:
        s = self.inp.spec if self.inp else None
        return bool(s) and len(s) < self.config.alpha and not is_state_token(s[-1])

    def _emit_output(self, token: int, step: int) -> None:
        out = self.out
        out.emitted += 1
        out.entries.append(self._record(token, Tag.ASSISTANT, step))
        if token == EOS or out.emitted >= self.config.max_output_tokens:
            out.done = True
            out.frontier = token
            self._event("done", tokens=out.emitted)
        else:
            out.frontier = token

    # -- one forward -------------------------------------------------------
    def step(self) -> StepReport:
        if not self.started:
            self.start()
        step = self.step_index
        rec = StepRecord(step, self.cycle)
        requests = []
        if self.generating:
            rec.output_token = self.out.frontier
            requests.append((self.out.frontier, self.out.channel, False))
        real_input = False
        if self.inp is not None:
            if self.pending:
                rec.input_token = self.pending.popleft()
                real_input = True
            elif self._speculating():
                rec.input_token = self.inp.spec[-1]
                rec.input_speculative = True
            if rec.input_token is not None:
                requests.append((rec.input_token, self.inp.channel, rec.input_speculative))
        if not requests:
            raise StateError("nothing to decode in this step")
        rows = self._forward(requests)
        self.transcript.timeline.append(rec)
        report = StepReport(rec)
        i = 0
        if rec.output_token is not None:
            if self.record_logits:
                self.output_logits.append((step, rows[0].scores.copy()))
            nxt = sample_greedy(rows[0])
            self._emit_output(nxt, step)
            report.output_emitted = nxt
            i = 1
        if rec.input_token is not None:
            nxt = sample_greedy(rows[i])
            if real_input:
                self.inp.entries.append(self._record(rec.input_token, Tag.USER, step))
                if not self.pending:
                    self.inp.spec = [nxt]
                    report.speculative_emitted = nxt
            else:
                self.inp.spec.append(nxt)
                report.speculative_emitted = nxt
        return report

    # -- one cycle ---------------------------------------------------------
    def run_cycle(self) -> CycleOutcome:
        if not self.started:
            self.start()
        self._deliver()
        f0 = self.forward_count
        e0 = self.out.emitted if self.out else 0
        out_before = self.out
        if self.inp is not None and self.pending:
            while self.pending or self._speculating():
                self.step()
        elif self.generating:
            for _ in range(self.config.alpha):
                if not self.generating:
                    break
                self.step()
        emitted = (out_before.emitted - e0) if out_before else 0

        action = Action.NONE
        spec: List[int] = []
        if self.inp is not None and self.inp.spec:
            spec = list(self.inp.spec)
            action = evaluate_state(spec, self._silent())
            self.cache.discard_speculative(self.inp.channel)
            self.inp.spec = []
            if action is Action.TRANSITION:
                self.transcript.latencies.append(spec.index(STATE_QUERY))
                self._record(STATE_QUERY, Tag.STATE)
                self.apply_transition()
            elif action is Action.DROP_INPUT:
                self._record(STATE_NONQUERY, Tag.STATE)
                self._drop_input()

        if self.out is not None and self.out.done and self.inp is None:
            self._finish_exchange()
            if action is Action.NONE:
                action = Action.OUTPUT_DONE
        self.transcript.actions.append((self.cycle, action))
        self.cycle += 1
        return CycleOutcome(action, emitted, spec, self.forward_count - f0)

    # -- transitions -------------------------------------------------------
    def apply_transition(self) -> None:
        if self.inp is None:
            raise StateError("no input channel to promote")
        old = self.out
        if old is not None and not old.done:
            for idx in old.entries:
                self.transcript.entries[idx].tag = Tag.ASSISTANT_INTERRUPTED
            self._event("suspend", channel=old.channel)
        new_id = self.cache.promote_channel(self.inp.channel)
        delim = self.config.transition_delimiter
        self.out = _Output(new_id, delim)
        self.out.entries.append(self._record(delim, Tag.ASSISTANT))
        self.inp = None
        self._event("transition", channel=new_id)

    def _drop_input(self) -> None:
        self.cache.drop_channel(self.inp.channel)
        for idx in self.inp.entries:
            self.transcript.entries[idx].tag = Tag.IGNORED_INPUT
        self._event("drop", channel=self.inp.channel)
        self.inp = None

    def _finish_exchange(self) -> None:
        out = self.out
        canonical = self.cache.channel_tokens(out.channel) + [out.frontier]
        if out.frontier != EOS:
            canonical.append(EOS)
        self.cache = self.cache.rebase(canonical, model=self.model)
        self.transcript.rebase_forwards += 1
        self.out = None

    # -- driving -----------------------------------------------------------
    def has_work(self) -> bool:
        return bool(self.generating or self.pending or not self.inbox.empty())

    def finished(self) -> bool:
        if self.cycle >= self.config.max_cycles:
            return True
        future = any(c >= self.cycle for c in self.schedule)
        return not future and not self.has_work()

    def finalize(self) -> Transcript:
        for c in sorted(self.schedule):
            for toks in self.schedule[c]:
                self.transcript.late_events.append({"cycle": c, "payload": display(toks)})
        self.transcript.unresolved_input = self.inp is not None
        return self.transcript


def run_session(session: Session, trace) -> Transcript:
    if not session.started:
        session.start(tokenize(trace.prompt) if trace.prompt else None)
    session.schedule_trace(trace)
    while not session.finished():
        session.run_cycle()
    return session.finalize()


def standard_forward_count(timeline: Sequence[StepRecord]) -> int:
    """Forwards a single-stream decoder needs for the same token timeline.

    A standard incremental decoder consumes, in one forward, every token that
    enters the model at a given time step (chunked prefill). It needs one
    forward per time step with work, whatever channels the tokens belong to.
    """
    return sum(1 for rec in timeline if rec.tokens_in > 0)
