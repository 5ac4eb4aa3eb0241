"""Channel-aware key/value cache.

Slots hold one token each. A slot belongs either to the shared prefix or to
exactly one channel segment. Positions inside a channel continue from the
prefix length, so after a fork two channels hold the same logical positions.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import CapacityError, ConfigurationError, LayoutError, StateError
from .mask import PREFIX, SlotRef

FREE = -2


class Role(enum.Enum):
    OUTPUT = "output"
    INPUT = "input"
    SUSPENDED = "suspended"
    DROPPED = "dropped"


@dataclass
class Channel:
    id: int
    role: Role
    slots: List[int] = field(default_factory=list)
    n_speculative: int = 0
    fork_time: int = 0

    @property
    def live(self) -> bool:
        return self.role in (Role.OUTPUT, Role.INPUT)

    def __len__(self):
        return len(self.slots)


@dataclass
class Entry:
    token: int
    position: int
    slot: int


class ChannelCache:
    def __init__(self, capacity: int, n_layers: int = 0, n_heads: int = 1, d_head: int = 1):
        if capacity <= 0:
            raise ConfigurationError("capacity must be positive")
        self.capacity = capacity
        self.dims = (n_layers, n_heads, d_head)
        self.keys = [np.zeros((capacity, n_heads, d_head), dtype=np.float32) for _ in range(n_layers)]
        self.values = [np.zeros((capacity, n_heads, d_head), dtype=np.float32) for _ in range(n_layers)]
        self.slot_channel = np.full(capacity, FREE, dtype=np.int64)
        self.slot_pos = np.zeros(capacity, dtype=np.int64)
        self.slot_token = np.zeros(capacity, dtype=np.int64)
        self.slot_spec = np.zeros(capacity, dtype=bool)
        self.prefix_slots: List[int] = []
        self.channels: Dict[int, Channel] = {}
        self._next_id = 0

    # -- layout queries ---------------------------------------------------
    @property
    def prefix_len(self) -> int:
        return len(self.prefix_slots)

    @property
    def fork_time(self) -> Optional[int]:
        ch = self.input_channel
        return ch.fork_time if ch else None

    def live_channels(self) -> List[Channel]:
        return [c for c in self.channels.values() if c.live]

    def _by_role(self, role: Role) -> Optional[Channel]:
        for c in self.channels.values():
            if c.role is role:
                return c
        return None

    @property
    def output_channel(self) -> Optional[Channel]:
        return self._by_role(Role.OUTPUT)

    @property
    def input_channel(self) -> Optional[Channel]:
        return self._by_role(Role.INPUT)

    def _live(self, channel) -> Channel:
        cid = channel.id if isinstance(channel, Channel) else channel
        if cid == PREFIX:
            raise StateError("prefix is not a channel")
        ch = self.channels.get(cid)
        if ch is None or not ch.live:
            raise StateError(f"channel {cid} is not live")
        return ch

    def next_position(self, channel_id: int) -> int:
        if channel_id == PREFIX:
            return self.prefix_len
        return self.prefix_len + len(self._live(channel_id))

    def channel_tokens(self, channel_id: int) -> List[int]:
        """Visible context of a channel: shared prefix then its own segment."""
        slots = list(self.prefix_slots)
        if channel_id != PREFIX:
            slots += self._live(channel_id).slots
        return [int(t) for t in self.slot_token[slots]]

    def used_slots(self) -> np.ndarray:
        return np.flatnonzero(self.slot_channel != FREE)

    def free_slots(self, n: int) -> List[int]:
        free = np.flatnonzero(self.slot_channel == FREE)
        if len(free) < n:
            raise CapacityError(f"need {n} slots, {len(free)} free of {self.capacity}")
        return [int(s) for s in free[:n]]

    def slot_refs(self, slots: Sequence[int]) -> List[SlotRef]:
        return [
            SlotRef(int(self.slot_channel[s]), int(self.slot_pos[s]), int(s), bool(self.slot_spec[s]))
            for s in slots
        ]

    # -- channel lifecycle -------------------------------------------------
    def _new_channel(self, role: Role, fork_time: int) -> Channel:
        ch = Channel(self._next_id, role, fork_time=fork_time)
        self._next_id += 1
        self.channels[ch.id] = ch
        return ch

    def open_output_channel(self) -> Channel:
        if self.output_channel is not None:
            raise StateError("an OUTPUT channel is already live")
        return self._new_channel(Role.OUTPUT, self.prefix_len)

    def fork_input_channel(self) -> Channel:
        if self.input_channel is not None:
            raise StateError("an INPUT channel is already live")
        out = self.output_channel
        t1 = self.prefix_len + (len(out) if out else 0)
        return self._new_channel(Role.INPUT, t1)

    def append_entries(self, channel_id: int, entries: Sequence[Entry], speculative: bool = False) -> None:
        if not entries:
            return
        if channel_id == PREFIX:
            if self.live_channels():
                raise LayoutError("prefix cannot grow while channels are live")
            ch = None
        else:
            ch = self._live(channel_id)
            if ch.n_speculative and not speculative:
                raise LayoutError("real entry after speculative tail; discard first")
        expected = self.next_position(channel_id)
        for i, e in enumerate(entries):
            if e.position != expected + i:
                raise LayoutError(
                    f"channel {channel_id}: position {e.position}, expected {expected + i}"
                )
        slots = [e.slot for e in entries]
        if len(set(slots)) != len(slots):
            raise LayoutError("slot collision within batch")
        for s in slots:
            if not 0 <= s < self.capacity:
                raise CapacityError(f"slot {s} outside capacity {self.capacity}")
            if self.slot_channel[s] != FREE:
                raise LayoutError(f"slot collision at {s}")
        for e in entries:
            self.slot_channel[e.slot] = channel_id
            self.slot_pos[e.slot] = e.position
            self.slot_token[e.slot] = e.token
            self.slot_spec[e.slot] = speculative
        if ch is None:
            self.prefix_slots.extend(slots)
        else:
            ch.slots.extend(slots)
            if speculative:
                ch.n_speculative += len(slots)

    def _free(self, slots: Sequence[int]) -> None:
        slots = list(slots)
        self.slot_channel[slots] = FREE
        self.slot_spec[slots] = False
        for k, v in zip(self.keys, self.values):
            k[slots] = 0.0
            v[slots] = 0.0

    def discard_speculative(self, channel) -> int:
        ch = self._live(channel)
        n = ch.n_speculative
        if n:
            self._free(ch.slots[-n:])
            del ch.slots[-n:]
            ch.n_speculative = 0
        return n

    def drop_channel(self, channel) -> None:
        ch = self._live(channel)
        if ch.role is Role.OUTPUT:
            raise StateError("the OUTPUT channel cannot be dropped")
        self._free(ch.slots)
        ch.slots = []
        ch.n_speculative = 0
        ch.role = Role.DROPPED

    def close_output_channel(self) -> None:
        """Evict the OUTPUT channel (suspension or completed response)."""
        out = self.output_channel
        if out is not None:
            self._free(out.slots)
            out.slots = []
            out.n_speculative = 0
            out.role = Role.SUSPENDED

    def promote_channel(self, channel) -> int:
        ch = self._live(channel)
        if ch.role is not Role.INPUT:
            raise StateError("only the INPUT channel can be promoted")
        if ch.n_speculative:
            raise StateError("discard the speculative tail before promotion")
        self.close_output_channel()
        ch.role = Role.OUTPUT
        return ch.id

    def rebase(self, canonical_tokens: Sequence[int], model=None) -> "ChannelCache":
        """Fresh cache whose shared prefix is ``canonical_tokens``."""
        if len(self.live_channels()) > 1:
            raise StateError("rebase requires at most one live channel")
        fresh = ChannelCache(self.capacity, *self.dims)
        if canonical_tokens:
            if model is None:
                raise ConfigurationError("rebase needs a model to re-prefill")
            model.prefill(fresh, list(canonical_tokens))
        return fresh

    # -- checks and dumps --------------------------------------------------
    def audit(self) -> None:
        """Raise if slot occupancy disagrees with the layout."""
        owned = {s: PREFIX for s in self.prefix_slots}
        for ch in self.channels.values():
            if not ch.live and ch.slots:
                raise LayoutError(f"retired channel {ch.id} still owns slots")
            for s in ch.slots:
                if s in owned:
                    raise LayoutError(f"slot {s} owned twice")
                owned[s] = ch.id
            spec = [bool(self.slot_spec[s]) for s in ch.slots]
            n = ch.n_speculative
            if spec != [False] * (len(spec) - n) + [True] * n:
                raise LayoutError(f"channel {ch.id}: speculative entries not a contiguous tail")
            pos = [int(self.slot_pos[s]) for s in ch.slots]
            if pos != list(range(self.prefix_len, self.prefix_len + len(pos))):
                raise LayoutError(f"channel {ch.id}: positions not consecutive from prefix")
        if [int(self.slot_pos[s]) for s in self.prefix_slots] != list(range(self.prefix_len)):
            raise LayoutError("prefix positions not consecutive")
        occupied = set(int(s) for s in self.used_slots())
        if occupied != set(owned):
            raise LayoutError("occupied slots differ from layout segments")
        for s, cid in owned.items():
            if self.slot_channel[s] != cid:
                raise LayoutError(f"slot {s} tagged {self.slot_channel[s]}, layout says {cid}")

    def layout(self) -> dict:
        chans = []
        for ch in sorted(self.channels.values(), key=lambda c: c.id):
            chans.append(
                {
                    "id": ch.id,
                    "role": ch.role.value,
                    "fork_time": ch.fork_time,
                    "positions": [int(self.slot_pos[s]) for s in ch.slots],
                    "speculative": [bool(self.slot_spec[s]) for s in ch.slots],
                }
            )
        return {"prefix_len": self.prefix_len, "fork_time": self.fork_time, "channels": chans}

    def dump_layout(self) -> str:
        return json.dumps(self.layout(), sort_keys=True)


def new_session_cache(capacity: int, n_layers: int = 0, n_heads: int = 1, d_head: int = 1) -> ChannelCache:
    return ChannelCache(capacity, n_layers, n_heads, d_head)
