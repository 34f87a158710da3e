"""Toy network building blocks with hand-derived backward passes.

A trainable embedding table plus a couple of tiny self-attention layers
stands in for a large pretrained encoder; per-layer outputs are mixed by
softmax-normalized scalar logits and layer-normalized.  Tokens map onto Q
queries each, refined by one pre-norm Transformer block with cross-attention
into the token embeddings.  Parameters live in a flat name->array dict.
"""

from __future__ import annotations

import io
import struct
from typing import Optional

import numpy as np

CHECKPOINT_MAGIC = b"MRP0"
CHECKPOINT_VERSION = 1
LN_EPS = 1e-5


class ModelError(Exception):
    pass


class CheckpointError(ModelError):
    pass


def add_grad(grads: dict, key: str, value: np.ndarray):
    if key in grads:
        grads[key] = grads[key] + value
    else:
        grads[key] = value


# ---------------------------------------------------------------------------
# layer norm

def layer_norm_forward(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(variance + LN_EPS)
    normed = centered * inv
    return gain * normed + bias, (normed, inv, gain)


def layer_norm_backward(cache, dy: np.ndarray):
    normed, inv, gain = cache
    dgain = (dy * normed).sum(axis=tuple(range(dy.ndim - 1)))
    dbias = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dnormed = dy * gain
    dx = inv * (dnormed - dnormed.mean(axis=-1, keepdims=True)
                - normed * (dnormed * normed).mean(axis=-1, keepdims=True))
    return dx, dgain, dbias


# ---------------------------------------------------------------------------
# single-head attention

def attention_forward(params: dict, prefix: str, queries_in: np.ndarray,
                      keys_in: np.ndarray):
    """Scaled dot-product attention; returns (out, cache)."""
    wq, bq = params[f"{prefix}.wq"], params[f"{prefix}.bq"]
    wk, bk = params[f"{prefix}.wk"], params[f"{prefix}.bk"]
    wv, bv = params[f"{prefix}.wv"], params[f"{prefix}.bv"]
    wo, bo = params[f"{prefix}.wo"], params[f"{prefix}.bo"]
    scale = 1.0 / np.sqrt(wq.shape[1])
    q = queries_in @ wq + bq
    k = keys_in @ wk + bk
    v = keys_in @ wv + bv
    scores = (q @ k.T) * scale
    shifted = scores - scores.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    weights /= weights.sum(axis=-1, keepdims=True)
    mixed = weights @ v
    out = mixed @ wo + bo
    cache = (queries_in, keys_in, q, k, v, weights, mixed, scale, prefix)
    return out, cache


def attention_backward(params: dict, cache, dout: np.ndarray, grads: dict):
    queries_in, keys_in, q, k, v, weights, mixed, scale, prefix = cache
    wq, wk, wv, wo = (params[f"{prefix}.wq"], params[f"{prefix}.wk"],
                      params[f"{prefix}.wv"], params[f"{prefix}.wo"])
    add_grad(grads, f"{prefix}.wo", mixed.T @ dout)
    add_grad(grads, f"{prefix}.bo", dout.sum(axis=0))
    dmixed = dout @ wo.T
    dweights = dmixed @ v.T
    dv = weights.T @ dmixed
    dscores = weights * (dweights - (dweights * weights).sum(axis=-1, keepdims=True))
    dq = dscores @ k * scale
    dk = dscores.T @ q * scale
    add_grad(grads, f"{prefix}.wq", queries_in.T @ dq)
    add_grad(grads, f"{prefix}.bq", dq.sum(axis=0))
    add_grad(grads, f"{prefix}.wk", keys_in.T @ dk)
    add_grad(grads, f"{prefix}.bk", dk.sum(axis=0))
    add_grad(grads, f"{prefix}.wv", keys_in.T @ dv)
    add_grad(grads, f"{prefix}.bv", dv.sum(axis=0))
    dqueries_in = dq @ wq.T
    dkeys_in = dk @ wk.T + dv @ wv.T
    return dqueries_in, dkeys_in


# ---------------------------------------------------------------------------
# pre-norm residual block (self-attention [+ cross-attention] + tanh FFN)

def block_forward(params: dict, prefix: str, x: np.ndarray,
                  memory: Optional[np.ndarray] = None):
    ln1, c_ln1 = layer_norm_forward(x, params[f"{prefix}.ln1.gain"],
                                    params[f"{prefix}.ln1.bias"])
    self_out, c_self = attention_forward(params, f"{prefix}.self", ln1, ln1)
    h = x + self_out
    c_cross = None
    c_ln2 = None
    if memory is not None:
        ln2, c_ln2 = layer_norm_forward(h, params[f"{prefix}.ln2.gain"],
                                        params[f"{prefix}.ln2.bias"])
        cross_out, c_cross = attention_forward(params, f"{prefix}.cross", ln2, memory)
        h = h + cross_out
    ln3, c_ln3 = layer_norm_forward(h, params[f"{prefix}.ln3.gain"],
                                    params[f"{prefix}.ln3.bias"])
    hidden = np.tanh(ln3 @ params[f"{prefix}.ffn.w1"] + params[f"{prefix}.ffn.b1"])
    ffn_out = hidden @ params[f"{prefix}.ffn.w2"] + params[f"{prefix}.ffn.b2"]
    y = h + ffn_out
    cache = (c_ln1, c_self, c_ln2, c_cross, c_ln3, ln3, hidden, memory is not None)
    return y, cache


def block_backward(params: dict, prefix: str, cache, dy: np.ndarray,
                   grads: dict):
    """Returns (dx, dmemory); parameter grads accumulate into grads."""
    c_ln1, c_self, c_ln2, c_cross, c_ln3, ln3, hidden, has_cross = cache
    dh = dy.copy()
    dffn_out = dy
    add_grad(grads, f"{prefix}.ffn.w2", hidden.T @ dffn_out)
    add_grad(grads, f"{prefix}.ffn.b2", dffn_out.sum(axis=0))
    dhidden = dffn_out @ params[f"{prefix}.ffn.w2"].T
    dpre = (1.0 - hidden * hidden) * dhidden
    add_grad(grads, f"{prefix}.ffn.w1", ln3.T @ dpre)
    add_grad(grads, f"{prefix}.ffn.b1", dpre.sum(axis=0))
    dln3 = dpre @ params[f"{prefix}.ffn.w1"].T
    dx3, dgain, dbias = layer_norm_backward(c_ln3, dln3)
    add_grad(grads, f"{prefix}.ln3.gain", dgain)
    add_grad(grads, f"{prefix}.ln3.bias", dbias)
    dh = dh + dx3

    dmemory = None
    if has_cross:
        dcross_out = dh
        dln2, dmemory = attention_backward(params, c_cross, dcross_out, grads)
        dx2, dgain, dbias = layer_norm_backward(c_ln2, dln2)
        add_grad(grads, f"{prefix}.ln2.gain", dgain)
        add_grad(grads, f"{prefix}.ln2.bias", dbias)
        dh = dh + dx2

    dself_out = dh
    dln1_q, dln1_kv = attention_backward(params, c_self, dself_out, grads)
    dln1 = dln1_q + dln1_kv
    dx1, dgain, dbias = layer_norm_backward(c_ln1, dln1)
    add_grad(grads, f"{prefix}.ln1.gain", dgain)
    add_grad(grads, f"{prefix}.ln1.bias", dbias)
    dx = dh + dx1
    return dx, dmemory


def init_block(rng: np.random.Generator, params: dict, prefix: str, dim: int,
               ffn_dim: int, cross: bool, scale: float = 0.1):
    def attn(sub):
        for name in ("wq", "wk", "wv", "wo"):
            params[f"{prefix}.{sub}.{name}"] = rng.normal(0.0, scale, (dim, dim))
        for name in ("bq", "bk", "bv", "bo"):
            params[f"{prefix}.{sub}.{name}"] = np.zeros(dim)

    for ln in ("ln1", "ln3") + (("ln2",) if cross else ()):
        params[f"{prefix}.{ln}.gain"] = np.ones(dim)
        params[f"{prefix}.{ln}.bias"] = np.zeros(dim)
    attn("self")
    if cross:
        attn("cross")
    params[f"{prefix}.ffn.w1"] = rng.normal(0.0, scale, (dim, ffn_dim))
    params[f"{prefix}.ffn.b1"] = np.zeros(ffn_dim)
    params[f"{prefix}.ffn.w2"] = rng.normal(0.0, scale, (ffn_dim, dim))
    params[f"{prefix}.ffn.b2"] = np.zeros(dim)


# ---------------------------------------------------------------------------
# encoder: embeddings, self-attention layers, layer mixing

def encode_forward(params: dict, token_ids: np.ndarray, num_layers: int,
                   rng: Optional[np.random.Generator] = None,
                   layer_dropout: float = 0.0):
    """Per-token embeddings mixed across layers; returns (e, cache).

    Layer outputs (embedding included) are combined by softmax-normalized
    logits and layer-normalized.  During training each mixing logit is
    dropped (set to -inf) with the given probability; at least one layer
    always survives.
    """
    states = [params["emb"][token_ids]]
    block_caches = []
    for layer in range(num_layers):
        out, cache = block_forward(params, f"enc{layer}", states[-1])
        states.append(out)
        block_caches.append(cache)
    logits = params["mix"].astype(np.float64).copy()
    if rng is not None and layer_dropout > 0.0:
        while True:
            dropped = rng.random(len(logits)) < layer_dropout
            if not dropped.all():
                break
        logits[dropped] = -np.inf
    shifted = logits - logits.max()
    alpha = np.exp(shifted)
    alpha /= alpha.sum()
    mixed = sum(a * s for a, s in zip(alpha, states))
    e, c_ln = layer_norm_forward(mixed, params["encln.gain"], params["encln.bias"])
    cache = (token_ids, states, block_caches, alpha, c_ln)
    return e, cache


def encode_backward(params: dict, cache, de: np.ndarray, grads: dict):
    token_ids, states, block_caches, alpha, c_ln = cache
    dmixed, dgain, dbias = layer_norm_backward(c_ln, de)
    add_grad(grads, "encln.gain", dgain)
    add_grad(grads, "encln.bias", dbias)
    dalpha = np.array([float((dmixed * s).sum()) for s in states])
    dlogits = alpha * (dalpha - float((dalpha * alpha).sum()))
    add_grad(grads, "mix", dlogits)
    dstates = [a * dmixed for a in alpha]
    for layer in range(len(block_caches) - 1, -1, -1):
        dx, _ = block_backward(params, f"enc{layer}", block_caches[layer],
                               dstates[layer + 1], grads)
        dstates[layer] = dstates[layer] + dx
    demb = np.zeros_like(params["emb"])
    np.add.at(demb, token_ids, dstates[0])
    add_grad(grads, "emb", demb)


# ---------------------------------------------------------------------------
# query generation

def queries_forward(params: dict, e: np.ndarray):
    """Map each token embedding onto Q queries: tanh(W_t e + b_t).

    Queries are ordered token-major: query index i*Q + t has source token i
    and slot t.  Returns (query states, source token indices, cache).
    """
    w, b = params["query.w"], params["query.b"]
    num_slots = w.shape[0]
    num_tokens = e.shape[0]
    pre = np.einsum("tde,ne->ntd", w, e) + b[None, :, :]
    q = np.tanh(pre)
    states = q.reshape(num_tokens * num_slots, -1)
    source = np.repeat(np.arange(num_tokens), num_slots)
    return states, source, (e, q)


def queries_backward(params: dict, cache, dstates: np.ndarray, grads: dict):
    e, q = cache
    w = params["query.w"]
    num_tokens, num_slots, dim = q.shape
    dq = dstates.reshape(num_tokens, num_slots, dim)
    dpre = (1.0 - q * q) * dq
    add_grad(grads, "query.w", np.einsum("ntd,ne->tde", dpre, e))
    add_grad(grads, "query.b", dpre.sum(axis=0))
    de = np.einsum("ntd,tde->ne", dpre, w)
    return de


# ---------------------------------------------------------------------------
# parameter initialization and checkpointing

def init_encoder(rng: np.random.Generator, params: dict, vocab_size: int,
                 dim: int, ffn_dim: int, num_layers: int, scale: float = 0.1):
    params["emb"] = rng.normal(0.0, scale, (vocab_size, dim))
    for layer in range(num_layers):
        init_block(rng, params, f"enc{layer}", dim, ffn_dim, cross=False, scale=scale)
    params["mix"] = np.zeros(num_layers + 1)
    params["encln.gain"] = np.ones(dim)
    params["encln.bias"] = np.zeros(dim)


def init_queries(rng: np.random.Generator, params: dict, num_slots: int,
                 dim: int, scale: float = 0.1):
    params["query.w"] = rng.normal(0.0, scale, (num_slots, dim, dim))
    params["query.b"] = np.zeros((num_slots, dim))


def save_params(params: dict, path: str):
    """Flat binary checkpoint: magic, version, named float64 arrays."""
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<II", CHECKPOINT_VERSION, len(params)))
        for name in sorted(params):
            array = np.asarray(params[name], dtype="<f8")  # tobytes() copies C-order
            encoded = name.encode("utf-8")
            handle.write(struct.pack("<H", len(encoded)))
            handle.write(encoded)
            handle.write(struct.pack("<B", array.ndim))
            for size in array.shape:
                handle.write(struct.pack("<Q", size))
            handle.write(array.tobytes())


def load_params(path: str) -> dict:
    with open(path, "rb") as handle:
        data = handle.read()
    stream = io.BytesIO(data)
    magic = stream.read(4)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    version, count = struct.unpack("<II", stream.read(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", stream.read(2))
        name = stream.read(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", stream.read(1))
        shape = tuple(struct.unpack("<Q", stream.read(8))[0] for _ in range(ndim))
        numel = int(np.prod(shape)) if shape else 1
        raw = stream.read(numel * 8)
        if len(raw) != numel * 8:
            raise CheckpointError(f"truncated array {name!r}")
        params[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return params


def pack_text(text: str) -> np.ndarray:
    """Encode text as a float64 byte array so it fits the checkpoint format."""
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def unpack_text(array: np.ndarray) -> str:
    return bytes(int(round(b)) for b in np.asarray(array).ravel()).decode("utf-8")
