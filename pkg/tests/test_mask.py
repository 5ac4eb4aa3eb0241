import numpy as np
from hypothesis import given, strategies as st

from duo.mask import PREFIX, SlotRef, allowed, build_mask, causal_mask


def refs(chan, n, start=0):
    return [SlotRef(chan, start + i) for i in range(n)]


def test_cross_channel_blind():
    assert not allowed(SlotRef(1, 5), SlotRef(0, 5), prefix_len=5)
    assert not allowed(SlotRef(0, 6), SlotRef(1, 5), prefix_len=5)


def test_prefix_visible_to_every_channel():
    for q in (SlotRef(0, 7), SlotRef(1, 5), SlotRef(PREFIX, 4)):
        assert allowed(q, SlotRef(PREFIX, 2), prefix_len=5)


def test_causal_within_channel():
    assert not allowed(SlotRef(0, 5), SlotRef(0, 6), prefix_len=5)
    assert allowed(SlotRef(0, 6), SlotRef(0, 5), prefix_len=5)


def test_single_channel_is_lower_triangular():
    items = refs(PREFIX, 6)
    assert (build_mask(6, items, items) == causal_mask(6)).all()
    items = refs(0, 6)
    assert (build_mask(0, items, items) == causal_mask(6)).all()


def test_empty_query_set():
    assert build_mask(3, [], refs(PREFIX, 3)).shape == (0, 3)


def test_lonely_first_token_sees_itself():
    q = [SlotRef(0, 0)]
    assert build_mask(0, q, q).tolist() == [[True]]


def test_block_structure():
    p, a, b = 4, 3, 2
    keys = refs(PREFIX, p) + refs(0, a, p) + refs(1, b, p)
    queries = refs(0, a, p) + refs(1, b, p)
    m = build_mask(p, queries, keys)
    assert m[:, :p].all()  # every post-fork query sees the whole prefix
    assert not m[:a, p + a:].any()
    assert not m[a:, p:p + a].any()
    assert (m[:a, p:p + a] == causal_mask(a)).all()
    assert (m[a:, p + a:] == causal_mask(b)).all()


slot = st.builds(SlotRef, st.integers(-1, 2), st.integers(0, 12))


@given(st.lists(slot, min_size=1, max_size=8), st.lists(slot, max_size=8), st.integers(0, 12))
def test_matrix_agrees_with_predicate(qs, ks, prefix_len):
    ks = [k for k in ks if k.channel_id != PREFIX or k.logical_position < prefix_len]
    m = build_mask(prefix_len, qs, ks)
    expect = np.array([[allowed(q, k, prefix_len) for k in ks] for q in qs], dtype=bool).reshape(m.shape)
    assert (m == expect).all()


@given(slot, st.integers(0, 2), st.integers(0, 12), st.integers(0, 12))
def test_symmetric_blindness(q, other, p1, p2):
    if q.channel_id in (PREFIX, other):
        return
    assert not allowed(q, SlotRef(other, p1), 12)
    assert not allowed(SlotRef(other, p2), SlotRef(q.channel_id, p1), 12)


@given(st.integers(0, 2), st.integers(0, 12), st.integers(0, 12), st.integers(0, 12))
def test_monotone_within_channel(c, qpos, kpos, smaller):
    q, k = SlotRef(c, qpos), SlotRef(c, kpos)
    if allowed(q, k, 0) and smaller <= kpos:
        assert allowed(q, SlotRef(c, smaller), 0)
