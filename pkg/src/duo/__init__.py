"""Duplex decoding: one model answers and listens over a shared KV cache."""
from .cache import ChannelCache, Role
from .errors import CapacityError, ConfigurationError, DuoError, LayoutError, StateError, TraceError
from .mask import PREFIX, SlotRef, allowed, build_mask
from .mock import MockModel, MockScript, default_script
from .model import Model, ModelConfig, greedy_decode, init_model, load_checkpoint, save_checkpoint
from .scheduler import Action, Phase, SchedulerConfig, Session, Tag, Transcript, run_session
from .trace import Scenario, Trace, TraceEvent, load_trace, save_trace, synth_traces
from .verify import Report, check_trace

__version__ = "0.1.0"

__all__ = [
    "Action", "CapacityError", "ChannelCache", "ConfigurationError", "DuoError", "LayoutError",
    "MockModel", "MockScript", "Model", "ModelConfig", "PREFIX", "Phase", "Report", "Role",
    "Scenario", "SchedulerConfig", "Session", "SlotRef", "StateError", "Tag", "Trace",
    "TraceError", "TraceEvent", "Transcript", "allowed", "build_mask", "check_trace",
    "default_script", "greedy_decode", "init_model", "load_checkpoint", "load_trace",
    "run_session", "save_checkpoint", "save_trace", "synth_traces",
]
