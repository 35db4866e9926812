"""Miniature transformer encoder with absolute or relative position handling.

All computation is float64 numpy. ``forward`` can retain every intermediate
needed by ``backward``, which produces analytic gradients for the encoder's
parameters; objective heads backpropagate into it through ``d_hidden``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.special import erf

LN_EPS = 1e-12
ABSOLUTE = "absolute"
RELATIVE = "relative"
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class MaskError(ValueError):
    """A query row has every key masked out."""


class NonFiniteActivationError(FloatingPointError):
    def __init__(self, layer: int):
        self.layer = layer
        super().__init__(f"non-finite activation in encoder layer {layer}")


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture hyperparameters; desk-scale defaults train on CPU in minutes."""

    vocab_size: int = 0
    layers: int = 2
    hidden: int = 64
    heads: int = 4
    ffn_mult: int = 4
    max_len: int = 150
    position_scheme: str = ABSOLUTE
    dropout_rate: float = 0.1
    seed: int = 0
    head_hidden: int = 0  # classifier head hidden width; 0 keeps the head affine

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if self.hidden < 1 or self.heads < 1 or self.hidden % self.heads != 0:
            raise ValueError(f"hidden ({self.hidden}) must be divisible by heads ({self.heads})")
        if self.ffn_mult < 1:
            raise ValueError("ffn_mult must be >= 1")
        if not 1 <= self.max_len <= 150:
            raise ValueError(f"max_len must be in [1, 150], got {self.max_len}")
        if self.position_scheme not in (ABSOLUTE, RELATIVE):
            raise ValueError("position_scheme must be absolute or relative")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0,1), got {self.dropout_rate}")
        if self.vocab_size < 0:
            raise ValueError("vocab_size must be >= 0")
        if self.head_hidden < 0:
            raise ValueError("head_hidden must be >= 0")


class ParameterSet:
    """Ordered named tensors with a stable flat index over every scalar."""

    def __init__(self, tensors: dict[str, np.ndarray], decay: dict[str, bool]):
        self.tensors = dict(tensors)
        self.decay = dict(decay)

    def names(self) -> list[str]:
        return list(self.tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self.tensors.items())

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ParameterSet":
        return ParameterSet({k: v.copy() for k, v in self.tensors.items()}, self.decay)

    def astype(self, dtype) -> "ParameterSet":
        return ParameterSet({k: v.astype(dtype) for k, v in self.tensors.items()}, self.decay)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def flat_slices(self) -> dict[str, slice]:
        out, offset = {}, 0
        for name, t in self.tensors.items():
            out[name] = slice(offset, offset + t.size)
            offset += t.size
        return out

    def to_flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors.values()])

    def from_flat(self, vec: np.ndarray) -> "ParameterSet":
        if vec.size != self.n_params:
            raise ValueError(f"flat vector has {vec.size} scalars, expected {self.n_params}")
        tensors, offset = {}, 0
        for name, t in self.tensors.items():
            tensors[name] = vec[offset : offset + t.size].reshape(t.shape).copy()
            offset += t.size
        return ParameterSet(tensors, self.decay)

    def flat_index(self, name: str, ravel_idx: int) -> int:
        return self.flat_slices()[name].start + ravel_idx


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: EncoderConfig, num_classes: int = 2) -> ParameterSet:
    """Deterministic initialization: Glorot-uniform weights, zero biases,
    unit layer-norm gains, zero relative-offset biases."""
    if config.vocab_size < 1:
        raise ValueError("config.vocab_size must be set before init_params")
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    rng = np.random.Generator(np.random.PCG64(config.seed))
    H, F, V = config.hidden, config.hidden * config.ffn_mult, config.vocab_size
    tensors: dict[str, np.ndarray] = {}
    decay: dict[str, bool] = {}

    def add(name: str, value: np.ndarray, decayed: bool) -> None:
        tensors[name] = np.ascontiguousarray(value, dtype=np.float64)
        decay[name] = decayed

    add("tok_emb", _glorot(rng, (V, H)), True)
    if config.position_scheme == ABSOLUTE:
        add("pos_emb", _glorot(rng, (config.max_len, H)), True)
    for l in range(config.layers):
        p = f"layers.{l}"
        for proj in ("q", "k", "v", "o"):
            add(f"{p}.attn.w{proj}", _glorot(rng, (H, H)), True)
            add(f"{p}.attn.b{proj}", np.zeros(H), False)
        if config.position_scheme == RELATIVE:
            add(f"{p}.attn.rel_bias", np.zeros((config.heads, 2 * config.max_len - 1)), False)
        add(f"{p}.ln1.gain", np.ones(H), False)
        add(f"{p}.ln1.bias", np.zeros(H), False)
        add(f"{p}.ffn.w1", _glorot(rng, (H, F)), True)
        add(f"{p}.ffn.b1", np.zeros(F), False)
        add(f"{p}.ffn.w2", _glorot(rng, (F, H)), True)
        add(f"{p}.ffn.b2", np.zeros(H), False)
        add(f"{p}.ln2.gain", np.ones(H), False)
        add(f"{p}.ln2.bias", np.zeros(H), False)
    head_in = H
    if config.head_hidden > 0:
        add("head.hidden_w", _glorot(rng, (H, config.head_hidden)), True)
        add("head.hidden_b", np.zeros(config.head_hidden), False)
        head_in = config.head_hidden
    add("head.w", _glorot(rng, (head_in, num_classes)), True)
    add("head.b", np.zeros(num_classes), False)
    add("lm.w", _glorot(rng, (H, V)), True)
    add("lm.b", np.zeros(V), False)
    return ParameterSet(tensors, decay)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def softmax_last(scores: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis; -inf entries become exact zeros."""
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _layer_norm(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv_std
    return gain * xhat + bias, xhat, inv_std


def _layer_norm_backward(dy, xhat, inv_std, gain):
    dxhat = dy * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv_std * (dxhat - m1 - xhat * m2)
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=axes), dy.sum(axis=axes)


def _check_rows(additive_mask: np.ndarray) -> None:
    if np.isneginf(additive_mask).all(axis=-1).any():
        raise MaskError("a query row has all keys masked")


def attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    additive_mask: np.ndarray | None = None,
    return_probs: bool = False,
):
    """Scaled dot-product attention over the last two axes (per head).

    The encoder concatenates the per-head outputs and applies the output
    projection; ``additive_mask`` entries are 0 or -inf.
    """
    d = q.shape[-1]
    scores = q @ np.swapaxes(k, -1, -2) / math.sqrt(d)
    if additive_mask is not None:
        scores = scores + additive_mask
        _check_rows(scores)
    probs = softmax_last(scores)
    ctx = probs @ v
    return (ctx, probs) if return_probs else ctx


def _dropout_mult(rng: np.random.Generator | None, rate: float, shape) -> np.ndarray | None:
    if rng is None or rate <= 0.0:
        return None
    return (rng.random(shape) >= rate).astype(np.float64) / (1.0 - rate)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    B, T, H = x.shape
    return x.reshape(B, T, heads, H // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    B, nh, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, nh * dh)


def forward(
    params: ParameterSet,
    config: EncoderConfig,
    ids: np.ndarray,
    mask: np.ndarray,
    extra_mask: np.ndarray | None = None,
    dropout_rng: np.random.Generator | None = None,
    want_cache: bool = False,
):
    """Run the encoder on (B, T) token ids with a (B, T) attention mask.

    ``extra_mask`` is an optional additive causal/permutation mask, (T, T)
    shared or (B, T, T) per sequence. Returns hidden states (B, T, H), plus
    the backward cache when requested.
    """
    ids = np.asarray(ids)
    mask = np.asarray(mask)
    if ids.ndim != 2 or ids.shape != mask.shape:
        raise ValueError("ids and mask must both have shape (batch, length)")
    B, T = ids.shape
    if T > config.max_len:
        raise ValueError(f"sequence length {T} exceeds max_len {config.max_len}")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise ValueError(f"token id out of range [0, {config.vocab_size})")

    H, nh = config.hidden, config.heads
    dh = H // nh
    rate = config.dropout_rate

    key_add = np.where(mask[:, None, None, :] == 1, 0.0, -np.inf)
    if extra_mask is None:
        combined = key_add
    else:
        extra_mask = np.asarray(extra_mask)
        if extra_mask.shape not in ((T, T), (B, T, T)):
            raise ValueError(f"extra_mask must be (T,T) or (B,T,T), got {extra_mask.shape}")
        combined = key_add + (extra_mask[None, None] if extra_mask.ndim == 2 else extra_mask[:, None])
    _check_rows(np.broadcast_to(combined, (B, 1, T, T)))

    x = params["tok_emb"][ids]
    if config.position_scheme == ABSOLUTE:
        x = x + params["pos_emb"][:T]
    emb_drop = _dropout_mult(dropout_rng, rate, x.shape)
    if emb_drop is not None:
        x = x * emb_drop

    rel_idx = None
    if config.position_scheme == RELATIVE:
        rel_idx = np.arange(T)[None, :] - np.arange(T)[:, None] + (config.max_len - 1)

    cache = None
    if want_cache:
        cache = {"ids": ids, "mask": mask, "x0": x, "emb_drop": emb_drop,
                 "rel_idx": rel_idx, "layers": []}

    h = x
    for l in range(config.layers):
        p = f"layers.{l}"
        h_in = h
        q = _split_heads(h_in @ params[f"{p}.attn.wq"] + params[f"{p}.attn.bq"], nh)
        k = _split_heads(h_in @ params[f"{p}.attn.wk"] + params[f"{p}.attn.bk"], nh)
        v = _split_heads(h_in @ params[f"{p}.attn.wv"] + params[f"{p}.attn.bv"], nh)
        scores = q @ np.swapaxes(k, -1, -2) / math.sqrt(dh)
        if rel_idx is not None:
            scores = scores + params[f"{p}.attn.rel_bias"][:, rel_idx]
        scores = scores + combined
        probs = softmax_last(scores)
        ctx = _merge_heads(probs @ v)
        attn_out = ctx @ params[f"{p}.attn.wo"] + params[f"{p}.attn.bo"]
        attn_drop = _dropout_mult(dropout_rng, rate, attn_out.shape)
        if attn_drop is not None:
            attn_out = attn_out * attn_drop
        h_mid, xhat1, inv1 = _layer_norm(
            h_in + attn_out, params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"]
        )
        ffn_pre = h_mid @ params[f"{p}.ffn.w1"] + params[f"{p}.ffn.b1"]
        gelu_out = gelu(ffn_pre)
        ffn_out = gelu_out @ params[f"{p}.ffn.w2"] + params[f"{p}.ffn.b2"]
        ffn_drop = _dropout_mult(dropout_rng, rate, ffn_out.shape)
        if ffn_drop is not None:
            ffn_out = ffn_out * ffn_drop
        h, xhat2, inv2 = _layer_norm(
            h_mid + ffn_out, params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"]
        )
        if not np.isfinite(h).all():
            raise NonFiniteActivationError(l)
        if want_cache:
            cache["layers"].append({
                "h_in": h_in, "q": q, "k": k, "v": v, "probs": probs, "ctx": ctx,
                "attn_drop": attn_drop, "xhat1": xhat1, "inv1": inv1, "h_mid": h_mid,
                "ffn_pre": ffn_pre, "gelu_out": gelu_out, "ffn_drop": ffn_drop,
                "xhat2": xhat2, "inv2": inv2,
            })

    if want_cache:
        cache["hidden"] = h
        return h, cache
    return h


def backward(
    params: ParameterSet,
    config: EncoderConfig,
    cache: dict,
    d_hidden: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    """Accumulate encoder-parameter gradients into ``grads`` given d(loss)/d(hidden)."""
    H, nh = config.hidden, config.heads
    dh = H // nh
    inv_sqrt_dh = 1.0 / math.sqrt(dh)
    B, T = cache["ids"].shape
    rel_idx = cache["rel_idx"]

    def matmul_grads(x, d_out, w_name, b_name):
        grads[w_name] += x.reshape(-1, x.shape[-1]).T @ d_out.reshape(-1, d_out.shape[-1])
        grads[b_name] += d_out.sum(axis=(0, 1))

    d = d_hidden
    for l in reversed(range(config.layers)):
        p = f"layers.{l}"
        c = cache["layers"][l]
        d_res2, dg2, db2 = _layer_norm_backward(d, c["xhat2"], c["inv2"], params[f"{p}.ln2.gain"])
        grads[f"{p}.ln2.gain"] += dg2
        grads[f"{p}.ln2.bias"] += db2
        d_h_mid = d_res2.copy()
        d_ffn_out = d_res2 if c["ffn_drop"] is None else d_res2 * c["ffn_drop"]

        matmul_grads(c["gelu_out"], d_ffn_out, f"{p}.ffn.w2", f"{p}.ffn.b2")
        d_pre = (d_ffn_out @ params[f"{p}.ffn.w2"].T) * gelu_grad(c["ffn_pre"])
        matmul_grads(c["h_mid"], d_pre, f"{p}.ffn.w1", f"{p}.ffn.b1")
        d_h_mid += d_pre @ params[f"{p}.ffn.w1"].T

        d_res1, dg1, db1 = _layer_norm_backward(
            d_h_mid, c["xhat1"], c["inv1"], params[f"{p}.ln1.gain"]
        )
        grads[f"{p}.ln1.gain"] += dg1
        grads[f"{p}.ln1.bias"] += db1
        d_h_in = d_res1.copy()
        d_attn_out = d_res1 if c["attn_drop"] is None else d_res1 * c["attn_drop"]

        matmul_grads(c["ctx"], d_attn_out, f"{p}.attn.wo", f"{p}.attn.bo")
        d_ctx = _split_heads(d_attn_out @ params[f"{p}.attn.wo"].T, nh)
        d_probs = d_ctx @ np.swapaxes(c["v"], -1, -2)
        d_v = np.swapaxes(c["probs"], -1, -2) @ d_ctx
        d_scores = c["probs"] * (d_probs - (d_probs * c["probs"]).sum(axis=-1, keepdims=True))
        if rel_idx is not None:
            per_head = d_scores.sum(axis=0)
            for head in range(nh):
                np.add.at(grads[f"{p}.attn.rel_bias"][head], rel_idx, per_head[head])
        d_q = d_scores @ c["k"] * inv_sqrt_dh
        d_k = np.swapaxes(d_scores, -1, -2) @ c["q"] * inv_sqrt_dh

        d_q_f, d_k_f, d_v_f = (_merge_heads(a) for a in (d_q, d_k, d_v))
        h_in = c["h_in"]
        matmul_grads(h_in, d_q_f, f"{p}.attn.wq", f"{p}.attn.bq")
        matmul_grads(h_in, d_k_f, f"{p}.attn.wk", f"{p}.attn.bk")
        matmul_grads(h_in, d_v_f, f"{p}.attn.wv", f"{p}.attn.bv")
        d_h_in += (
            d_q_f @ params[f"{p}.attn.wq"].T
            + d_k_f @ params[f"{p}.attn.wk"].T
            + d_v_f @ params[f"{p}.attn.wv"].T
        )
        d = d_h_in

    if cache["emb_drop"] is not None:
        d = d * cache["emb_drop"]
    np.add.at(grads["tok_emb"], cache["ids"].ravel(), d.reshape(-1, H))
    if config.position_scheme == ABSOLUTE:
        grads["pos_emb"][:T] += d.sum(axis=0)


def pool(hidden: np.ndarray, mask: np.ndarray, mode: str) -> np.ndarray:
    """Sequence representation: ``cls`` takes position 0, ``mean`` averages
    the unmasked positions (CLS included)."""
    if mode not in ("cls", "mean"):
        raise ValueError(f"pooling mode must be 'cls' or 'mean', got {mode!r}")
    lengths = mask.sum(axis=-1)
    if (lengths == 0).any():
        raise ValueError("pooling requires at least one unmasked position per sequence")
    if mode == "cls":
        return hidden[:, 0, :]
    return (hidden * mask[..., None]).sum(axis=1) / lengths[:, None]


def pool_backward(d_pooled: np.ndarray, mask: np.ndarray, mode: str) -> np.ndarray:
    B, T = mask.shape
    d_hidden = np.zeros((B, T, d_pooled.shape[-1]))
    if mode == "cls":
        d_hidden[:, 0, :] = d_pooled
    else:
        lengths = mask.sum(axis=-1)
        d_hidden += (mask[..., None] / lengths[:, None, None]) * d_pooled[:, None, :]
    return d_hidden
