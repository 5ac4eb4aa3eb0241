"""Packed forward batches: one step may carry tokens from several channels."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, List, NamedTuple, Tuple

import numpy as np

from .cache import FREE, ChannelCache, Entry
from .errors import CapacityError, LayoutError
from .mask import PREFIX


class BatchItem(NamedTuple):
    token_id: int
    logical_position: int
    channel_id: int
    slot_index: int
    speculative: bool = False


@dataclass
class PackedBatch:
    items: List[BatchItem]

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


@dataclass
class LogitsRow:
    channel_id: int
    logical_position: int
    scores: np.ndarray


def pack(cache: ChannelCache, requests: Iterable[Tuple[int, int, bool]]) -> PackedBatch:
    """Assign positions and free slots to ``(token, channel_id, speculative)`` requests."""
    requests = list(requests)
    slots = cache.free_slots(len(requests))
    offsets = defaultdict(int)
    items = []
    for (token, cid, spec), slot in zip(requests, slots):
        pos = cache.next_position(cid) + offsets[cid]
        offsets[cid] += 1
        items.append(BatchItem(int(token), pos, cid, slot, bool(spec)))
    return PackedBatch(items)


def commit(cache: ChannelCache, batch: PackedBatch) -> None:
    """Validate the whole batch against the layout, then append its entries."""
    slots = [it.slot_index for it in batch]
    if any(b <= a for a, b in zip(slots, slots[1:])):
        raise LayoutError("slot indices must be distinct and strictly increasing")
    for s in slots:
        if not 0 <= s < cache.capacity:
            raise CapacityError(f"slot {s} outside capacity {cache.capacity}")
        if cache.slot_channel[s] != FREE:
            raise LayoutError(f"slot collision at {s}")
    groups = defaultdict(list)
    for it in batch:
        groups[it.channel_id].append(it)
    for cid, its in groups.items():
        expected = cache.next_position(cid)
        for i, it in enumerate(its):
            if it.logical_position != expected + i:
                raise LayoutError(
                    f"channel {cid}: position gap ({it.logical_position}, expected {expected + i})"
                )
        flags = [it.speculative for it in its]
        if cid == PREFIX and any(flags):
            raise LayoutError("prefix entries cannot be speculative")
        if flags != sorted(flags):
            raise LayoutError("real entry after speculative entry in one channel")
    for cid, its in groups.items():
        real = [Entry(it.token_id, it.logical_position, it.slot_index) for it in its if not it.speculative]
        spec = [Entry(it.token_id, it.logical_position, it.slot_index) for it in its if it.speculative]
        cache.append_entries(cid, real, speculative=False)
        cache.append_entries(cid, spec, speculative=True)


def attention_keys(cache: ChannelCache, batch: PackedBatch, mask) -> List[np.ndarray]:
    """Per batch item, the visible key slots in canonical (position, channel) order."""
    used = cache.used_slots()
    k_chan = cache.slot_channel[used]
    k_pos = cache.slot_pos[used]
    q_chan = np.array([it.channel_id for it in batch], dtype=np.int64)
    q_pos = np.array([it.logical_position for it in batch], dtype=np.int64)
    m = mask(cache.prefix_len, q_chan, q_pos, k_chan, k_pos)
    out = []
    for i, it in enumerate(batch):
        row = m[i]
        own = np.flatnonzero(used == it.slot_index)
        if not row[own].all():
            raise LayoutError("mask must let every query attend itself")
        sel = used[row]
        order = np.lexsort((cache.slot_channel[sel], cache.slot_pos[sel]))
        out.append(sel[order])
    return out
