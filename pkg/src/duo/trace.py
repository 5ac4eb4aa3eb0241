"""Trace files: a header line plus one JSON object per timed user-text event."""
from __future__ import annotations

import enum
import io
import json
import random
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, TextIO

from .errors import TraceError


class Scenario(enum.Enum):
    PLAIN = "plain"
    INTERRUPTION = "interruption"
    NON_AWAKENING = "non_awakening"


GOLD_LABELS = {Scenario.PLAIN: None, Scenario.INTERRUPTION: "<1>", Scenario.NON_AWAKENING: "<2>"}


@dataclass(frozen=True)
class TraceEvent:
    cycle: int
    payload: str
    kind: str = "user_text"

    def __post_init__(self):
        if not self.payload:
            raise TraceError("event payload must be nonempty")
        if self.kind != "user_text":
            raise TraceError(f"unknown event kind {self.kind!r}")
        if self.cycle < 0:
            raise TraceError("event cycle must be non-negative")


@dataclass
class Trace:
    events: List[TraceEvent] = field(default_factory=list)
    scenario: Scenario = Scenario.PLAIN
    gold_label: Optional[str] = None
    prompt: Optional[str] = None
    topic: Optional[str] = None

    def __post_init__(self):
        cycles = [e.cycle for e in self.events]
        if any(b < a for a, b in zip(cycles, cycles[1:])):
            raise TraceError("event cycles must be non-decreasing")
        if self.gold_label not in (None, "<1>", "<2>"):
            raise TraceError(f"bad gold_label {self.gold_label!r}")

    def without_events(self) -> "Trace":
        return Trace([], Scenario.PLAIN, None, self.prompt, self.topic)

    def header(self) -> dict:
        h = {"scenario": self.scenario.value, "gold_label": self.gold_label}
        if self.prompt is not None:
            h["prompt"] = self.prompt
        if self.topic is not None:
            h["topic"] = self.topic
        return h


def save_trace(trace: Trace, stream: TextIO) -> None:
    stream.write(json.dumps(trace.header()) + "\n")
    for ev in trace.events:
        stream.write(json.dumps({"cycle": ev.cycle, "kind": ev.kind, "payload": ev.payload}) + "\n")


def dumps_trace(trace: Trace) -> str:
    buf = io.StringIO()
    save_trace(trace, buf)
    return buf.getvalue()


def load_trace(stream: TextIO | Iterable[str]) -> Trace:
    header: Dict = {}
    events: List[TraceEvent] = []
    for lineno, line in enumerate(stream, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceError(f"malformed JSON: {exc.msg}", lineno) from None
        if not isinstance(obj, dict):
            raise TraceError("expected a JSON object", lineno)
        if "scenario" in obj and not events and not header:
            header = obj
            continue
        try:
            cycle = obj["cycle"]
            if not isinstance(cycle, int) or isinstance(cycle, bool):
                raise TraceError("cycle must be an integer", lineno)
            events.append(TraceEvent(cycle, obj["payload"], obj.get("kind", "user_text")))
        except KeyError as exc:
            raise TraceError(f"missing field {exc.args[0]!r}", lineno) from None
        except TraceError as exc:
            if exc.line is None:
                raise TraceError(str(exc), lineno) from None
            raise
        if len(events) > 1 and events[-1].cycle < events[-2].cycle:
            raise TraceError("event cycles must be non-decreasing", lineno)
    try:
        scenario = Scenario(header.get("scenario", "plain"))
    except ValueError:
        raise TraceError(f"unknown scenario {header.get('scenario')!r}", 1) from None
    return Trace(events, scenario, header.get("gold_label"), header.get("prompt"), header.get("topic"))


def read_trace(path: str) -> Trace:
    with open(path) as f:
        return load_trace(f)


def write_trace(trace: Trace, path: str) -> None:
    with open(path, "w") as f:
        save_trace(trace, f)


# -- synthesis ---------------------------------------------------------------

TOPICS = [
    "gardening", "volcanoes", "jazz", "chess", "bread", "comets", "sailing", "bees",
    "glaciers", "origami", "tea", "bridges", "owls", "deserts", "violins", "tides",
]

PROMPT_TEMPLATES = [
    "Tell me about {topic}.",
    "Explain how {topic} work.",
    "Give me a short overview of {topic}.",
    "Describe the history of {topic}.",
]

QUERY_TEMPLATES = [
    "Wait, what about {topic}?",
    "Sorry, can you tell me about {topic} instead?",
    "Hold on, how do {topic} compare?",
    "Actually, why are {topic} interesting?",
]

# Declarative statements that need no reply.
DISTRACTOR_TEMPLATES = [
    "I read something about {topic} yesterday.",
    "My neighbour really likes {topic}.",
    "The weather is nice for {topic} today.",
    "We talked about {topic} at lunch.",
    "There is a documentary on {topic} tonight.",
    "My sister wrote a paper on {topic}.",
]


def parse_mix(mix) -> Dict[Scenario, float]:
    if isinstance(mix, str):
        out = {}
        for part in filter(None, (p.strip() for p in mix.split(","))):
            name, _, val = part.partition("=")
            try:
                out[Scenario(name.strip().lower())] = float(val)
            except ValueError:
                raise TraceError(f"bad scenario mix entry {part!r}") from None
        mix = out
    mix = {Scenario(k) if not isinstance(k, Scenario) else k: float(v) for k, v in mix.items()}
    if any(v < 0 for v in mix.values()) or abs(sum(mix.values()) - 1.0) > 1e-9:
        raise TraceError(f"scenario mix must be non-negative and sum to 1, got {sum(mix.values())}")
    return mix


def synth_trace(rng: random.Random, scenario: Scenario, max_event_cycle: int = 3) -> Trace:
    topic = rng.choice(TOPICS)
    prompt = rng.choice(PROMPT_TEMPLATES).format(topic=topic)
    events = []
    cycle = rng.randint(1, max_event_cycle)
    if scenario is Scenario.INTERRUPTION:
        other = rng.choice([t for t in TOPICS if t != topic])
        events.append(TraceEvent(cycle, rng.choice(QUERY_TEMPLATES).format(topic=other)))
    elif scenario is Scenario.NON_AWAKENING:
        events.append(TraceEvent(cycle, rng.choice(DISTRACTOR_TEMPLATES).format(topic=topic)))
    return Trace(events, scenario, GOLD_LABELS[scenario], prompt, topic)


def synth_traces(n: int, scenario_mix, rng_seed: int, max_event_cycle: int = 3) -> List[Trace]:
    if n <= 0:
        raise TraceError("n must be positive")
    mix = parse_mix(scenario_mix)
    rng = random.Random(rng_seed)
    scenarios = [s for s in Scenario if mix.get(s, 0) > 0]
    weights = [mix[s] for s in scenarios]
    return [synth_trace(rng, rng.choices(scenarios, weights)[0], max_event_cycle) for _ in range(n)]


def label_consistent(trace: Trace) -> bool:
    """Re-check a synthesized trace against its construction rule."""
    if trace.gold_label != GOLD_LABELS[trace.scenario]:
        return False
    if trace.scenario is Scenario.PLAIN:
        return not trace.events
    if len(trace.events) != 1 or trace.events[0].cycle < 1:
        return False
    text = trace.events[0].payload
    if trace.scenario is Scenario.INTERRUPTION:
        return text.endswith("?")
    return text.endswith(".") and trace.topic in text
