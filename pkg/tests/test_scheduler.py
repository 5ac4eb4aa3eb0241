import numpy as np
import pytest

from duo.errors import ConfigurationError, StateError
from duo.mock import MockModel, MockScript, default_script
from duo.model import greedy_decode
from duo.scheduler import (
    Action, Phase, SchedulerConfig, Session, Tag, evaluate_state, run_session,
    standard_forward_count,
)
from duo.trace import Trace, TraceEvent
from duo.vocab import ASSIST, BOS, EOS, STATE_NONQUERY, STATE_QUERY, tokenize


def rules(*pairs, default=ord(".")):
    """Script from (suffix text, next token) pairs; the answer repeats '.' forever."""
    return MockModel(MockScript([(tuple(tokenize(s)), t) for s, t in pairs], default_token=default))


def guessing(*guesses):
    """After 'q' the input channel guesses the given tokens in order."""
    chain = list(zip([ord("q")] + list(guesses[:-1]), guesses))
    return MockModel(MockScript([((a,), b) for a, b in chain], default_token=ord(".")))


def generating(model, prompt="hi"):
    s = Session(model, SchedulerConfig(alpha=4, max_output_tokens=50))
    s.start(tokenize(prompt))
    return s


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SchedulerConfig(alpha=0)
    assert SchedulerConfig().alpha == 4 and SchedulerConfig().max_output_tokens == 256


def test_step_generating():
    s = generating(rules())
    n = s.forward_count
    rep = s.step()
    assert rep.record.output_token is not None and rep.record.input_token is None
    assert rep.output_emitted == ord(".")
    assert s.forward_count == n + 1 and s.phase is Phase.GENERATING


def test_step_dual_prefills_before_speculating():
    s = generating(rules())
    s.enqueue(tokenize("abc"))
    s._deliver()
    assert s.phase is Phase.DUAL
    rep = s.step()
    assert rep.record.output_token is not None and rep.record.input_token == ord("a")
    assert len(s.pending) == 2 and rep.speculative_emitted is None


def test_step_idle_input_only():
    s = Session(rules())
    s.start()
    assert s.phase is Phase.IDLE
    s.enqueue(tokenize("ab"))
    s._deliver()
    rep = s.step()
    assert rep.record.output_token is None and rep.record.input_token == ord("a")


def test_step_with_nothing_to_do():
    s = Session(rules())
    s.start()
    with pytest.raises(StateError):
        s.step()


def test_cycle_transition_after_three_guesses():
    s = generating(guessing(ord("w"), ord("x"), STATE_QUERY))
    s.enqueue([ord("q")])
    before = s.forward_count
    outcome = s.run_cycle()
    assert outcome.action is Action.TRANSITION
    assert outcome.speculative_tokens == [ord("w"), ord("x"), STATE_QUERY]
    # one prefill step that yields w, then two speculative steps
    assert outcome.forwards_used == s.forward_count - before == 3
    assert s.transcript.latencies == [2]


def test_cycle_without_state_token_discards():
    s = generating(guessing(ord("w"), ord("x"), ord("y"), ord("z"), STATE_QUERY))
    s.enqueue([ord("q")])
    outcome = s.run_cycle()
    assert outcome.action is Action.NONE and len(outcome.speculative_tokens) == 4
    assert s.cache.input_channel.n_speculative == 0
    assert len(s.cache.input_channel) == 1
    s.cache.audit()


def test_cycle_drop():
    s = generating(guessing(STATE_NONQUERY))
    s.enqueue([ord("q")])
    assert s.run_cycle().action is Action.DROP_INPUT
    assert s.inp is None and s.phase is Phase.GENERATING
    assert s.transcript.tags()[-2:] == [(ord("q"), Tag.IGNORED_INPUT), (STATE_NONQUERY, Tag.STATE)]


def test_state_token_waits_for_silence():
    s = generating(guessing(STATE_QUERY))
    s.schedule = {0: [[ord("q")]], 1: [[ord("q")]]}
    assert s.run_cycle().action is Action.NONE
    assert s.run_cycle().action is Action.TRANSITION


@pytest.mark.parametrize(
    "spec, empty, expected",
    [
        ([ord("a"), STATE_QUERY], True, Action.TRANSITION),
        ([STATE_QUERY], False, Action.NONE),
        ([STATE_NONQUERY, STATE_QUERY], True, Action.DROP_INPUT),
        ([ord("a"), ord("b")], True, Action.NONE),
        ([], True, Action.NONE),
    ],
)
def test_evaluate_state(spec, empty, expected):
    assert evaluate_state(spec, empty) is expected


def test_interruption_mid_generation(mock_model):
    tr = Trace([TraceEvent(2, "why?")], prompt="hi")
    t = run_session(Session(mock_model), tr)
    tags = [tag for _, tag in t.tags()]
    assert Tag.ASSISTANT_INTERRUPTED in tags
    assert t.event_kinds()[:3] == ["fork", "suspend", "transition"]
    second = [tok for tok, tag in t.tags()[tags.index(Tag.STATE) + 1:] if tag is Tag.ASSISTANT]
    assert second == [ASSIST] + tokenize("0123456789") + [EOS]


def test_transition_when_idle(mock_model):
    t = run_session(Session(mock_model), Trace([TraceEvent(0, "hi?")]))
    assert "suspend" not in t.event_kinds()
    assert t.action_sequence()[0] == (0, Action.TRANSITION)
    assert t.tokens(Tag.ASSISTANT)[:2] == [ASSIST, ord("0")]


def test_nested_interruptions(mock_model):
    tr = Trace([TraceEvent(1, "a?"), TraceEvent(3, "b?")], prompt="hi")
    t = run_session(Session(mock_model), tr)
    assert t.event_kinds().count("suspend") == 2
    assert [a for _, a in t.action_sequence()][:2] == [Action.TRANSITION, Action.TRANSITION]
    interrupted = t.tokens(Tag.ASSISTANT_INTERRUPTED)
    assert ASSIST in interrupted  # the first reply's delimiter is part of what got cut off


def test_distractor_is_ignored(mock_model):
    plain = run_session(Session(mock_model), Trace(prompt="hi"))
    t = run_session(Session(mock_model), Trace([TraceEvent(2, "nice day.")], prompt="hi"))
    assert bytes(t.tokens(Tag.IGNORED_INPUT)) == b"nice day."
    assert t.tokens(Tag.ASSISTANT) == plain.tokens(Tag.ASSISTANT)


def test_plain_session_matches_greedy(tiny_model):
    cfg = SchedulerConfig(max_output_tokens=40)
    t = run_session(Session(tiny_model, cfg), Trace(prompt="hello"))
    out, forwards, _ = greedy_decode(tiny_model, [BOS] + tokenize("hello") + [ASSIST], 40)
    assert t.tokens(Tag.ASSISTANT)[1:] == out
    assert t.forward_count == forwards


def test_output_persists_while_listening(mock_model):
    s = Session(mock_model, SchedulerConfig(max_output_tokens=200))
    s.start(tokenize("hi"))
    s.enqueue(tokenize("a long remark."))
    s.run_cycle()
    steps = s.transcript.timeline[1:]
    assert steps and all(r.output_token is not None for r in steps)


def test_eos_while_listening_leaves_input_live():
    model = MockModel(MockScript([((ASSIST,), EOS), ((ord("q"),), ord("z"))], default_token=ord("y")))
    s = Session(model)
    s.start(tokenize("hi"))
    s.enqueue([ord("q")])
    assert s.run_cycle().action is Action.NONE
    assert s.phase is Phase.IDLE and s.inp is not None
    t = s.finalize()
    assert t.unresolved_input


def test_forward_count_and_parity(mock_model):
    tr = Trace([TraceEvent(1, "hey?"), TraceEvent(4, "ok.")], prompt="hi")
    t = run_session(Session(mock_model), tr)
    assert t.forward_count == len(t.timeline)
    assert t.forward_count == standard_forward_count(t.timeline)


def test_late_events_are_reported(mock_model):
    s = Session(mock_model, SchedulerConfig(max_cycles=3))
    t = run_session(s, Trace([TraceEvent(10, "late.")], prompt="hi"))
    assert t.late_events == [{"cycle": 10, "payload": "late."}]


def test_rebase_after_exchange(mock_model):
    s = Session(mock_model)
    t = run_session(s, Trace(prompt="hi"))
    assert t.rebase_forwards == 1
    assert s.cache.prefix_len == 1 + 2 + 1 + len(t.tokens(Tag.ASSISTANT)) - 1
    assert not s.cache.channels


def test_second_exchange_sees_history():
    model = MockModel(default_script(answer="abc", reply="12"))
    t = run_session(Session(model), Trace([TraceEvent(3, "x?")], prompt="hi"))
    # the first answer finished before the query, so both replies are complete
    assert Tag.ASSISTANT_INTERRUPTED not in [tag for _, tag in t.tags()]
    assert t.tokens(Tag.ASSISTANT) == [ASSIST, *tokenize("abc"), EOS, ASSIST, *tokenize("12"), EOS]


def test_transcript_jsonl(mock_model):
    t = run_session(Session(mock_model), Trace(prompt="hi"))
    first = t.to_jsonl().splitlines()[0]
    assert '"channel_tag": "user"' in first and '"cycle": 0' in first


def test_logits_recorded(tiny_model):
    s = Session(tiny_model, SchedulerConfig(max_output_tokens=5), record_logits=True)
    run_session(s, Trace(prompt="hi"))
    assert len(s.output_logits) == 5
    assert all(isinstance(r, np.ndarray) for _, r in s.output_logits)


def test_double_start():
    s = Session(rules())
    s.start()
    with pytest.raises(StateError):
        s.start()
