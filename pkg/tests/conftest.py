import numpy as np
import pytest

from duo.mock import MockModel, default_script
from duo.model import ModelConfig, init_model
from duo.scheduler import Session
from duo.vocab import STATE_NONQUERY, STATE_QUERY

# (criterion, passed, detail) lines collected by the acceptance suite
ACCEPTANCE_LINES = []


class TimeDivisionSession(Session):
    """Broken build for negative controls: one forward per channel per step."""

    def _forward(self, requests):
        rows = []
        for r in requests:
            rows += super()._forward([r])
        return rows


class ForcedInputModel:
    """Wraps a model and overrides INPUT-channel rows.

    mode "drop" makes every input-channel row predict ``<2>``; mode "hold"
    forbids both state tokens so the input is never resolved.
    """

    def __init__(self, model, mode):
        self.model = model
        self.mode = mode
        self.config = model.config

    def new_cache(self, capacity=None):
        return self.model.new_cache(capacity)

    def prefill(self, cache, tokens):
        return self.model.prefill(cache, tokens)

    def forward(self, batch, cache, *args):
        rows = self.model.forward(batch, cache, *args)
        inp = cache.input_channel
        for row in rows:
            if inp is not None and row.channel_id == inp.id:
                row.scores = row.scores.copy()
                if self.mode == "drop":
                    row.scores[STATE_NONQUERY] = row.scores.max() + np.float32(1.0)
                else:
                    row.scores[[STATE_QUERY, STATE_NONQUERY]] = np.float32(-1e9)
        return rows


@pytest.fixture(scope="session")
def tiny_model():
    return init_model(ModelConfig(seed=0))


@pytest.fixture(scope="session")
def mock_model():
    return MockModel(default_script())


@pytest.fixture
def short_mock():
    return MockModel(default_script(answer="abcdef", reply="012"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for name, ok, detail in ACCEPTANCE_LINES:
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
