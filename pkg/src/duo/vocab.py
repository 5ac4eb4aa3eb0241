"""Byte-level vocabulary with the special tokens used by the duplex decoder."""
from __future__ import annotations

import re
from typing import Iterable, List, Sequence

BOS = 256
EOS = 257
PAD = 258
ASSIST = 259
STATE_QUERY = 260  # <1>
STATE_NONQUERY = 261  # <2>

NUM_BYTES = 256
NUM_SPECIALS = 6
MIN_VOCAB = NUM_BYTES + NUM_SPECIALS

SPECIAL_MARKERS = {
    BOS: "<bos>",
    EOS: "<eos>",
    PAD: "<pad>",
    ASSIST: "<assist>",
    STATE_QUERY: "<1>",
    STATE_NONQUERY: "<2>",
}
MARKER_TO_ID = {v: k for k, v in SPECIAL_MARKERS.items()}
STATE_TOKENS = (STATE_QUERY, STATE_NONQUERY)

_MARKUP_RE = re.compile("(" + "|".join(re.escape(m) for m in MARKER_TO_ID) + ")")


class Vocabulary:
    """256 byte tokens followed by the six specials."""

    byte_tokens = tuple(range(NUM_BYTES))
    specials = dict(
        BOS=BOS,
        EOS=EOS,
        PAD=PAD,
        ASSIST=ASSIST,
        STATE_QUERY=STATE_QUERY,
        STATE_NONQUERY=STATE_NONQUERY,
    )

    def __len__(self) -> int:
        return MIN_VOCAB

    def is_special(self, token: int) -> bool:
        return token >= NUM_BYTES


def tokenize(text: bytes | str) -> List[int]:
    if isinstance(text, str):
        text = text.encode("utf-8")
    return list(text)


def detokenize(tokens: Iterable[int]) -> bytes:
    """Inverse of :func:`tokenize`; specials render as their literal markers."""
    out = bytearray()
    for t in tokens:
        t = int(t)
        if t < NUM_BYTES:
            out.append(t)
        else:
            out += SPECIAL_MARKERS.get(t, f"<{t}>").encode("ascii")
    return bytes(out)


def display(tokens: Iterable[int]) -> str:
    return detokenize(tokens).decode("utf-8", errors="replace")


def parse_markup(text: str) -> List[int]:
    """Tokenize text where ``<1>``, ``<eos>`` etc. denote special tokens."""
    tokens: List[int] = []
    for piece in _MARKUP_RE.split(text):
        if piece in MARKER_TO_ID:
            tokens.append(MARKER_TO_ID[piece])
        elif piece:
            tokens.extend(tokenize(piece))
    return tokens


def token_name(token: int) -> str:
    return display([token])


def is_state_token(token: int) -> bool:
    return token in STATE_TOKENS


def ends_with(seq: Sequence[int], suffix: Sequence[int]) -> bool:
    n = len(suffix)
    return n <= len(seq) and list(seq[len(seq) - n:]) == list(suffix)
