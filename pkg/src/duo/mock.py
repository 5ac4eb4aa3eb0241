"""Scripted stand-in model: next token chosen by suffix rules over the visible context."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .batch import LogitsRow, PackedBatch, attention_keys, commit, pack
from .cache import ChannelCache
from .mask import PREFIX, mask_from_arrays
from .vocab import ASSIST, EOS, MIN_VOCAB, STATE_NONQUERY, STATE_QUERY, ends_with, parse_markup, tokenize


@dataclass
class MockScript:
    rules: List[Tuple[Tuple[int, ...], int]] = field(default_factory=list)
    default_token: int = EOS

    @classmethod
    def from_dict(cls, data: dict) -> "MockScript":
        rules = []
        for r in data.get("rules", []):
            nxt = parse_markup(r["next"])
            if len(nxt) != 1:
                raise ValueError(f"rule target must be one token: {r['next']!r}")
            rules.append((tuple(parse_markup(r["suffix"])), nxt[0]))
        default = parse_markup(data.get("default", "<eos>"))
        return cls(rules, default[0])

    @classmethod
    def load(cls, path: str) -> "MockScript":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def mock_next(script: MockScript, channel_context: Sequence[int]) -> int:
    for suffix, nxt in script.rules:
        if ends_with(channel_context, suffix):
            return nxt
    return script.default_token


class MockModel:
    """Same forward surface as :class:`duo.model.Model`, no weights."""

    def __init__(self, script: MockScript, vocab_size: int = MIN_VOCAB, max_position: int = 4096):
        self.script = script
        self.vocab_size = vocab_size
        self.max_position = max_position

    def new_cache(self, capacity=None) -> ChannelCache:
        return ChannelCache(capacity or self.max_position)

    def forward(self, batch: PackedBatch, cache: ChannelCache, mask=mask_from_arrays) -> List[LogitsRow]:
        commit(cache, batch)
        rows = []
        for it, keys in zip(batch, attention_keys(cache, batch, mask)):
            ctx = [int(t) for t in cache.slot_token[keys]]
            scores = np.zeros(self.vocab_size, dtype=np.float32)
            scores[mock_next(self.script, ctx)] = 1.0
            rows.append(LogitsRow(it.channel_id, it.logical_position, scores))
        return rows

    def prefill(self, cache: ChannelCache, tokens: Sequence[int]) -> List[LogitsRow]:
        return self.forward(pack(cache, [(t, PREFIX, False) for t in tokens]), cache)


def chain_response(text: str, after: Sequence[int]) -> List[Tuple[Tuple[int, ...], int]]:
    """Rules making the model spell ``text`` after ``after`` and then emit EOS.

    Characters of ``text`` must be unique so each one keys its successor.
    """
    toks = tokenize(text)
    if len(set(toks)) != len(toks):
        raise ValueError("chain text needs unique characters")
    rules = [(tuple(after), toks[0])]
    rules += [((a,), b) for a, b in zip(toks, toks[1:])]
    rules.append(((toks[-1],), EOS))
    return rules


DEFAULT_ANSWER = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ#$%&*+-/:;=@^_~"
DEFAULT_REPLY = "0123456789"


def default_script(answer: str = DEFAULT_ANSWER, reply: str = DEFAULT_REPLY) -> MockScript:
    """Queries end with '?', distractors with '.'; unfinished input speculates spaces.

    The first answer spells ``answer``; a response to a '?'-terminated input
    spells ``reply``.
    """
    rules = [
        ((ord("?"),), STATE_QUERY),
        ((ord("."),), STATE_NONQUERY),
    ]
    rules += chain_response(reply, (ord("?"), ASSIST))
    rules += chain_response(answer, (ASSIST,))
    return MockScript(rules, default_token=ord(" "))


def script_to_dict(script: MockScript) -> dict:
    from .vocab import display

    return {
        "rules": [{"suffix": display(s), "next": display([n])} for s, n in script.rules],
        "default": display([script.default_token]),
    }
