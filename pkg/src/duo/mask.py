"""Attention permissions for packed multi-channel batches.

A query may see every shared-prefix key and the keys of its own channel up
to its own logical position. Keys from any other channel are invisible, even
though positions overlap across channels after a fork.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

PREFIX = -1


@dataclass(frozen=True)
class SlotRef:
    channel_id: int  # PREFIX for shared-prefix entries
    logical_position: int
    slot_index: int = -1
    speculative: bool = False


def allowed(q: SlotRef, k: SlotRef, prefix_len: int) -> bool:
    if k.channel_id == PREFIX:
        return k.logical_position < prefix_len and k.logical_position <= q.logical_position
    return k.channel_id == q.channel_id and k.logical_position <= q.logical_position


def _arrays(refs):
    chan = np.fromiter((r.channel_id for r in refs), dtype=np.int64, count=len(refs))
    pos = np.fromiter((r.logical_position for r in refs), dtype=np.int64, count=len(refs))
    return chan, pos


def mask_from_arrays(prefix_len: int, q_chan, q_pos, k_chan, k_pos) -> np.ndarray:
    k_prefix = (k_chan == PREFIX) & (k_pos < prefix_len)
    causal = k_pos[None, :] <= q_pos[:, None]
    same = k_chan[None, :] == q_chan[:, None]
    return causal & (k_prefix[None, :] | same)


def build_mask(prefix_len: int, query_items: Sequence[SlotRef], key_items: Sequence[SlotRef]) -> np.ndarray:
    """Boolean matrix ``m[i, j] == allowed(query_items[i], key_items[j])``."""
    if not query_items:
        return np.zeros((0, len(key_items)), dtype=bool)
    q_chan, q_pos = _arrays(query_items)
    k_chan, k_pos = _arrays(key_items)
    return mask_from_arrays(prefix_len, q_chan, q_pos, k_chan, k_pos)


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))
