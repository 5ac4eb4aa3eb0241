"""A small deterministic decoder-only transformer.

Every token row is computed on its own (no cross-row matrix products), so the
values a row produces depend only on that row's inputs and the keys it can
see. A packed dual-channel step and a standalone single-channel run therefore
yield bit-identical logits for the same channel history.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import BinaryIO, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .batch import LogitsRow, PackedBatch, attention_keys, commit, pack
from .cache import ChannelCache
from .errors import ConfigurationError
from .mask import PREFIX, mask_from_arrays
from .vocab import EOS, MIN_VOCAB

MAGIC = b"DUO1"
F32 = np.float32


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    n_heads: int = 2
    d_model: int = 64
    d_head: int = 0  # 0 means d_model // n_heads
    vocab_size: int = MIN_VOCAB
    max_position: int = 1024
    seed: int = 0

    def __post_init__(self):
        if self.d_head == 0 and self.n_heads > 0 and self.d_model % self.n_heads == 0:
            object.__setattr__(self, "d_head", self.d_model // self.n_heads)
        self.validate()

    def validate(self) -> None:
        if min(self.n_layers, self.n_heads, self.d_model, self.max_position) <= 0:
            raise ConfigurationError("layer/head/width/position counts must be positive")
        if self.d_model % self.n_heads:
            raise ConfigurationError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.n_heads * self.d_head != self.d_model:
            raise ConfigurationError("d_model must equal n_heads * d_head")
        if self.d_head % 2:
            raise ConfigurationError("rotary encoding needs an even d_head")
        if self.vocab_size < MIN_VOCAB:
            raise ConfigurationError(f"vocab_size must be >= {MIN_VOCAB}")

    @property
    def d_ff(self) -> int:
        return 4 * self.d_model


def weight_shapes(cfg: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Checkpoint order of the weight arrays."""
    d, v, f = cfg.d_model, cfg.vocab_size, cfg.d_ff
    shapes = [("tok_emb", (v, d))]
    for i in range(cfg.n_layers):
        shapes += [
            (f"l{i}.attn_norm", (d,)),
            (f"l{i}.wq", (d, d)),
            (f"l{i}.wk", (d, d)),
            (f"l{i}.wv", (d, d)),
            (f"l{i}.wo", (d, d)),
            (f"l{i}.mlp_norm", (d,)),
            (f"l{i}.w_up", (d, f)),
            (f"l{i}.w_down", (f, d)),
        ]
    shapes += [("final_norm", (d,)), ("lm_head", (d, v))]
    return shapes


def _rms(x, g):
    return x / np.sqrt(np.mean(x * x) + F32(1e-6)) * g


def _softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class Model:
    def __init__(self, config: ModelConfig, weights: Dict[str, np.ndarray]):
        self.config = config
        self.weights = {k: np.ascontiguousarray(w, dtype=F32) for k, w in weights.items()}
        for w in self.weights.values():
            w.setflags(write=False)
        cfg = config
        half = cfg.d_head // 2
        inv = 1.0 / (10000.0 ** (np.arange(half, dtype=np.float64) * 2 / cfg.d_head))
        ang = np.arange(cfg.max_position, dtype=np.float64)[:, None] * inv[None, :]
        self._cos = np.cos(ang).astype(F32)
        self._sin = np.sin(ang).astype(F32)
        self._scale = F32(1.0 / np.sqrt(cfg.d_head))

    # -- identity ----------------------------------------------------------
    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, _ in weight_shapes(self.config):
            h.update(self.weights[name].tobytes())
        return h.hexdigest()

    def new_cache(self, capacity: Optional[int] = None) -> ChannelCache:
        c = self.config
        return ChannelCache(capacity or c.max_position, c.n_layers, c.n_heads, c.d_head)

    # -- row kernels -------------------------------------------------------
    def _rope(self, x, pos):
        half = self.config.d_head // 2
        c, s = self._cos[pos], self._sin[pos]
        x1, x2 = x[:, :half], x[:, half:]
        return np.concatenate([x1 * c - x2 * s, x1 * s + x2 * c], axis=-1)

    def _qkv(self, layer, x, pos):
        w, cfg = self.weights, self.config
        h = _rms(x, w[f"l{layer}.attn_norm"])
        shape = (cfg.n_heads, cfg.d_head)
        q = (h @ w[f"l{layer}.wq"]).reshape(shape)
        k = (h @ w[f"l{layer}.wk"]).reshape(shape)
        v = (h @ w[f"l{layer}.wv"]).reshape(shape)
        return self._rope(q, pos), self._rope(k, pos), v

    def _mix(self, layer, x, q, keys, values):
        w = self.weights
        p = _softmax(np.einsum("hd,nhd->hn", q, keys) * self._scale)
        o = np.einsum("hn,nhd->hd", p, values).reshape(-1)
        x = x + o @ w[f"l{layer}.wo"]
        h = _rms(x, w[f"l{layer}.mlp_norm"])
        u = h @ w[f"l{layer}.w_up"]
        u = u / (F32(1.0) + np.exp(-u))
        return x + u @ w[f"l{layer}.w_down"]

    def _head(self, x):
        w = self.weights
        return _rms(x, w["final_norm"]) @ w["lm_head"]

    def _embed(self, token):
        return self.weights["tok_emb"][token].copy()

    # -- public ------------------------------------------------------------
    def forward(self, batch: PackedBatch, cache: ChannelCache, mask=mask_from_arrays) -> List[LogitsRow]:
        items = list(batch)
        for it in items:
            if not 0 <= it.logical_position < self.config.max_position:
                raise ConfigurationError(f"position {it.logical_position} beyond max_position")
        commit(cache, batch)
        visible = attention_keys(cache, batch, mask)
        xs = [self._embed(it.token_id) for it in items]
        for layer in range(self.config.n_layers):
            kc, vc = cache.keys[layer], cache.values[layer]
            qs = []
            for i, it in enumerate(items):
                q, k, v = self._qkv(layer, xs[i], it.logical_position)
                kc[it.slot_index] = k
                vc[it.slot_index] = v
                qs.append(q)
            for i in range(len(items)):
                idx = visible[i]
                xs[i] = self._mix(layer, xs[i], qs[i], kc[idx], vc[idx])
        return [
            LogitsRow(it.channel_id, it.logical_position, self._head(x)) for it, x in zip(items, xs)
        ]

    def prefill(self, cache: ChannelCache, tokens: Sequence[int]) -> List[LogitsRow]:
        """Append ``tokens`` to the shared prefix in a single forward."""
        return self.forward(pack(cache, [(t, PREFIX, False) for t in tokens]), cache)


def init_model(config: ModelConfig) -> Model:
    config.validate()
    rng = np.random.default_rng(config.seed)
    weights = {}
    for name, shape in weight_shapes(config):
        if name.endswith("norm"):
            weights[name] = np.ones(shape, dtype=F32)
        elif name == "tok_emb":
            weights[name] = rng.standard_normal(shape).astype(F32)
        else:
            weights[name] = (rng.standard_normal(shape) / np.sqrt(shape[0])).astype(F32)
    return Model(config, weights)


def forward(model, batch: PackedBatch, cache: ChannelCache, mask=mask_from_arrays) -> List[LogitsRow]:
    return model.forward(batch, cache, mask)


def sample_greedy(row) -> int:
    """Argmax with ties broken towards the lowest token id."""
    scores = row.scores if isinstance(row, LogitsRow) else row
    return int(np.argmax(scores))  # argmax returns the first maximum


# -- checkpoints -------------------------------------------------------------

_HEADER_FIELDS = ("n_layers", "n_heads", "d_model", "d_head", "vocab_size", "max_position", "seed")


def save_checkpoint(model: Model, f: BinaryIO | str) -> None:
    if isinstance(f, str):
        with open(f, "wb") as fh:
            return save_checkpoint(model, fh)
    cfg = model.config
    f.write(MAGIC)
    f.write(struct.pack("<7i", *(getattr(cfg, k) for k in _HEADER_FIELDS)))
    for name, _ in weight_shapes(cfg):
        f.write(model.weights[name].astype("<f4").tobytes(order="C"))


def load_checkpoint(f: BinaryIO | str) -> Model:
    if isinstance(f, str):
        with open(f, "rb") as fh:
            return load_checkpoint(fh)
    if f.read(4) != MAGIC:
        raise ConfigurationError("not a DUO1 checkpoint")
    raw = f.read(28)
    if len(raw) != 28:
        raise ConfigurationError("truncated checkpoint header")
    cfg = ModelConfig(**dict(zip(_HEADER_FIELDS, struct.unpack("<7i", raw))))
    weights = {}
    for name, shape in weight_shapes(cfg):
        n = int(np.prod(shape))
        buf = f.read(4 * n)
        if len(buf) != 4 * n:
            raise ConfigurationError(f"truncated checkpoint at {name}")
        weights[name] = np.frombuffer(buf, dtype="<f4").astype(F32).reshape(shape)
    return Model(cfg, weights)


# -- standard decoding baseline ---------------------------------------------


class StandardDecoder:
    """Plain single-stream incremental decoding with a growing key/value list.

    Shares only the per-row layer arithmetic with :class:`Model`; it has no
    channels, slots or masks. ``forward_count`` counts model invocations.
    """

    def __init__(self, model: Model):
        self.model = model
        n = model.config.n_layers
        self.keys: List[list] = [[] for _ in range(n)]
        self.values: List[list] = [[] for _ in range(n)]
        self.tokens: List[int] = []
        self.forward_count = 0

    def feed(self, tokens: Sequence[int]) -> List[np.ndarray]:
        m = self.model
        self.forward_count += 1
        start = len(self.tokens)
        xs = [m._embed(t) for t in tokens]
        for layer in range(m.config.n_layers):
            qs = []
            for i in range(len(xs)):
                q, k, v = m._qkv(layer, xs[i], start + i)
                self.keys[layer].append(k)
                self.values[layer].append(v)
                qs.append(q)
            for i in range(len(xs)):
                n = start + i + 1
                K = np.stack(self.keys[layer][:n])
                V = np.stack(self.values[layer][:n])
                xs[i] = m._mix(layer, xs[i], qs[i], K, V)
        self.tokens.extend(tokens)
        return [m._head(x) for x in xs]


def greedy_decode(model: Model, prompt: Sequence[int], max_new_tokens: int, stop: int = EOS):
    """Standard greedy decoding. Returns (generated tokens, forward count, logits rows)."""
    dec = StandardDecoder(model)
    rows = [dec.feed(list(prompt))[-1]]
    out = [sample_greedy(rows[-1])]
    while out[-1] != stop and len(out) < max_new_tokens:
        rows.append(dec.feed([out[-1]])[0])
        out.append(sample_greedy(rows[-1]))
    return out, dec.forward_count, rows
