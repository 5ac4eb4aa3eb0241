"""Replay traces and check the duplex invariants on the resulting transcripts."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

from .errors import TraceError
from .mock import MockModel, mock_next
from .model import Model, greedy_decode
from .scheduler import (
    Action,
    SchedulerConfig,
    Session,
    Tag,
    Transcript,
    TranscriptEntry,
    run_session,
    standard_forward_count,
)
from .trace import Trace
from .vocab import BOS, EOS, tokenize


@dataclass
class Report:
    forward_parity: bool
    duo_forwards: int
    standard_forwards: int
    equivalence_when_plain: Optional[bool] = None
    drop_neutrality: Optional[bool] = None
    transition_latency_steps: Optional[int] = None
    latency_within_alpha: Optional[bool] = None
    label_behavior_match: Optional[bool] = None

    @property
    def flags(self) -> dict:
        return {
            k: v
            for k, v in asdict(self).items()
            if k in ("forward_parity", "equivalence_when_plain", "drop_neutrality",
                     "latency_within_alpha", "label_behavior_match")
        }

    @property
    def passed(self) -> bool:
        return all(v is not False for v in self.flags.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def is_behavioral(model) -> bool:
    """Only the scripted model is expected to honour gold labels."""
    return isinstance(model, MockModel)


def replay(model, trace: Trace, config: Optional[SchedulerConfig] = None, **session_kw) -> Transcript:
    return run_session(Session(model, config, **session_kw), trace)


def standard_transcript(model, trace: Trace, config: Optional[SchedulerConfig] = None) -> Transcript:
    """Turn-based greedy decoding of the trace's prompt, ignoring every event."""
    config = config or SchedulerConfig()
    t = Transcript()
    if not trace.prompt:
        return t
    prompt = tokenize(trace.prompt)
    context = [BOS] + prompt + [config.transition_delimiter]
    if isinstance(model, Model):
        out, t.forward_count, _ = greedy_decode(model, context, config.max_output_tokens)
    else:
        out = []
        while not out or (out[-1] != EOS and len(out) < config.max_output_tokens):
            out.append(mock_next(model.script, context + out))
        t.forward_count = len(out)
    t.entries = [TranscriptEntry(tok, Tag.USER, 0) for tok in prompt]
    t.entries.append(TranscriptEntry(config.transition_delimiter, Tag.ASSISTANT, 0))
    t.entries += [TranscriptEntry(tok, Tag.ASSISTANT, 0) for tok in out]
    return t


def _check_pairing(transcript: Transcript, trace: Trace, baseline: Transcript) -> None:
    prompt = tokenize(trace.prompt) if trace.prompt else []
    n = len(prompt)
    head = [e.token for e in transcript.entries[:n]]
    if head != prompt or any(e.tag is not Tag.USER for e in transcript.entries[:n]):
        raise TraceError("transcript does not start with the trace prompt")
    if baseline.entries and [e.token for e in baseline.entries[:n]] != prompt:
        raise TraceError("baseline transcript belongs to a different prompt")
    delivered = b"".join(
        ev.payload.encode() for ev in trace.events
        if not any(le["cycle"] == ev.cycle for le in transcript.late_events)
    )
    user = [e.token for e in transcript.entries[n:] if e.tag in (Tag.USER, Tag.IGNORED_INPUT)]
    if bytes(user) != delivered[: len(user)] or len(user) > len(delivered):
        raise TraceError("transcript user tokens do not match the trace events")


def verify_transcript(
    transcript: Transcript,
    trace: Trace,
    baseline_transcript: Transcript,
    alpha: int = 4,
    behavioral: bool = False,
) -> Report:
    _check_pairing(transcript, trace, baseline_transcript)
    standard = standard_forward_count(transcript.timeline)
    report = Report(
        forward_parity=transcript.forward_count == standard,
        duo_forwards=transcript.forward_count,
        standard_forwards=standard,
    )
    actions = [a for _, a in transcript.actions]
    duo_answer = transcript.tokens(Tag.ASSISTANT, Tag.ASSISTANT_INTERRUPTED)
    base_answer = baseline_transcript.tokens(Tag.ASSISTANT)
    if not trace.events and trace.prompt:
        report.equivalence_when_plain = duo_answer == base_answer
        # with no duplex work both decoders run exactly the same forwards
        report.forward_parity &= transcript.forward_count == baseline_transcript.forward_count
    if trace.events and trace.prompt and Action.TRANSITION not in actions:
        report.drop_neutrality = duo_answer == base_answer
    if transcript.latencies:
        report.transition_latency_steps = max(transcript.latencies)
        report.latency_within_alpha = report.transition_latency_steps <= alpha
    if behavioral:
        if trace.gold_label == "<1>":
            report.label_behavior_match = Action.TRANSITION in actions
        elif trace.gold_label == "<2>":
            report.label_behavior_match = Action.DROP_INPUT in actions and Action.TRANSITION not in actions
        else:
            report.label_behavior_match = not ({Action.TRANSITION, Action.DROP_INPUT} & set(actions))
    return report


def check_trace(model, trace: Trace, config: Optional[SchedulerConfig] = None, session_cls=Session):
    """Replay one trace and its no-event baseline; return (transcript, report)."""
    config = config or SchedulerConfig()
    transcript = run_session(session_cls(model, config), trace)
    baseline = standard_transcript(model, trace, config)
    report = verify_transcript(transcript, trace, baseline, config.alpha, is_behavioral(model))
    return transcript, report
