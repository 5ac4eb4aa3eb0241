import pytest

from conftest import TimeDivisionSession
from duo.errors import TraceError
from duo.scheduler import SchedulerConfig, Session, run_session
from duo.trace import Scenario, Trace, TraceEvent, synth_traces
from duo.verify import check_trace, standard_transcript, verify_transcript


def test_plain_trace(tiny_model):
    _, report = check_trace(tiny_model, Trace(prompt="hi"), SchedulerConfig(max_output_tokens=30))
    assert report.equivalence_when_plain and report.forward_parity and report.passed
    assert report.duo_forwards == report.standard_forwards


def test_non_awakening_trace(mock_model):
    tr = Trace([TraceEvent(2, "I like tea.")], Scenario.NON_AWAKENING, "<2>", "hi")
    _, report = check_trace(mock_model, tr)
    assert report.drop_neutrality and report.label_behavior_match and report.passed


def test_interruption_trace(mock_model):
    tr = Trace([TraceEvent(1, "what about tea?")], Scenario.INTERRUPTION, "<1>", "hi")
    _, report = check_trace(mock_model, tr)
    assert report.transition_latency_steps <= 4 and report.latency_within_alpha
    assert report.label_behavior_match and report.drop_neutrality is None


def test_wrong_label_is_flagged(mock_model):
    tr = Trace([TraceEvent(1, "I like tea.")], Scenario.INTERRUPTION, "<1>", "hi")
    _, report = check_trace(mock_model, tr)
    assert report.label_behavior_match is False and not report.passed


def test_mismatched_pairing(mock_model):
    a = Trace([TraceEvent(1, "x?")], prompt="hi")
    b = Trace([TraceEvent(1, "y?")], prompt="hi")
    transcript = run_session(Session(mock_model), a)
    with pytest.raises(TraceError):
        verify_transcript(transcript, b, standard_transcript(mock_model, b))
    other = Trace(prompt="bye")
    with pytest.raises(TraceError):
        verify_transcript(transcript, a, standard_transcript(mock_model, other))


def test_time_division_breaks_parity(mock_model):
    tr = Trace([TraceEvent(1, "what about tea?")], Scenario.INTERRUPTION, "<1>", "hi")
    _, report = check_trace(mock_model, tr, session_cls=TimeDivisionSession)
    assert report.forward_parity is False and not report.passed


def test_report_dict(mock_model):
    _, report = check_trace(mock_model, synth_traces(1, "plain=1", 0)[0])
    d = report.to_dict()
    assert d["passed"] is True and set(report.flags) <= set(d)
