"""Duplex training examples: turn-based conversations annotated with state tokens.

User turns end with ``<1>``; inserted non-query distractor turns end with
``<2>``. Distractors come from a fixed bank of declarative templates keyed
to the conversation's topic word.
"""
from __future__ import annotations

import enum
import json
import random
import re
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .errors import TraceError
from .trace import DISTRACTOR_TEMPLATES, PROMPT_TEMPLATES, TOPICS
from .vocab import ASSIST, BOS, EOS, STATE_NONQUERY, STATE_QUERY, tokenize


class Role(enum.Enum):
    USER = "user"
    ASSISTANT = "assistant"
    DISTRACTOR = "distractor"


STATE_FOR_ROLE = {Role.USER: "<1>", Role.DISTRACTOR: "<2>", Role.ASSISTANT: None}


@dataclass
class Turn:
    role: Role
    text: str
    state_token: Optional[str] = None


@dataclass
class DuplexExample:
    turns: List[Turn]
    source: str = "template"

    def validate(self) -> None:
        for t in self.turns:
            if t.state_token != STATE_FOR_ROLE[t.role]:
                raise TraceError(f"{t.role.value} turn carries {t.state_token!r}")

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "turns": [{"role": t.role.value, "text": t.text, "state": t.state_token} for t in self.turns],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_tokens(self) -> List[int]:
        """Linear training sequence: text, then its state token; replies framed by ASSIST/EOS."""
        toks = [BOS]
        for t in self.turns:
            if t.role is Role.ASSISTANT:
                toks += [ASSIST] + tokenize(t.text) + [EOS]
            else:
                toks += tokenize(t.text)
                toks.append(STATE_QUERY if t.role is Role.USER else STATE_NONQUERY)
        return toks


def load_template_bank(path: str) -> List[str]:
    with open(path) as f:
        bank = json.load(f)
    if not isinstance(bank, list) or not all(isinstance(s, str) and "{topic}" in s for s in bank):
        raise TraceError("template bank must be a JSON list of strings containing {topic}")
    return bank


FUNCTION_WORDS = frozenset(
    "a about an and are be can could describe do does explain give how i in is it me of on "
    "overview please short tell that the this to what when where which who why with work would "
    "you history".split()
)


def topic_word(conversation: Sequence[Tuple[str, str]]) -> str:
    """Longest non-function word of the first user turn."""
    for role, text in conversation:
        if role == "user":
            words = [w.lower() for w in re.findall(r"[A-Za-z]+", text)]
            content = [w for w in words if w not in FUNCTION_WORDS] or words
            if content:
                return max(content, key=len)
    return "this"


def build_training_example(
    conversation: Sequence[Tuple[str, str]],
    rng: random.Random,
    distractor_prob: float = 0.3,
    bank: Optional[Sequence[str]] = None,
    topic: Optional[str] = None,
) -> DuplexExample:
    """Annotate an alternating user/assistant conversation with state tokens."""
    if not conversation:
        raise TraceError("conversation is empty")
    for i, (role, _) in enumerate(conversation):
        expected = "user" if i % 2 == 0 else "assistant"
        if role != expected:
            raise TraceError(f"turn {i}: expected {expected}, got {role!r}")
    bank = list(bank or DISTRACTOR_TEMPLATES)
    topic = topic or topic_word(conversation)
    turns: List[Turn] = []
    for i, (role, text) in enumerate(conversation):
        if i > 0 and rng.random() < distractor_prob:
            turns.append(Turn(Role.DISTRACTOR, rng.choice(bank).format(topic=topic), "<2>"))
        r = Role(role)
        turns.append(Turn(r, text, STATE_FOR_ROLE[r]))
    ex = DuplexExample(turns)
    ex.validate()
    return ex


def synth_conversation(rng: random.Random, max_exchanges: int = 3) -> List[Tuple[str, str]]:
    topic = rng.choice(TOPICS)
    conv = []
    for _ in range(rng.randint(1, max_exchanges)):
        conv.append(("user", rng.choice(PROMPT_TEMPLATES).format(topic=topic)))
        conv.append(("assistant", f"Here is what I know about {topic}."))
    return conv


def synth_examples(n: int, seed: int, distractor_prob: float = 0.3) -> List[DuplexExample]:
    rng = random.Random(seed)
    return [build_training_example(synth_conversation(rng), rng, distractor_prob) for _ in range(n)]
