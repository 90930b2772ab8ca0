"""Conditional token-map predictor: a small pre-norm transformer over
flattened positions with in-context class conditioning and hand-derived
gradients.

Input is a token map [n_pos, channels] (or a batch of them).  Per-channel
embedding tables are summed per position, a learned absolute position vector
is added, and the class embedding is prepended as sequence element 0.  The
head predicts all ``channels`` tokens of a position in parallel, emitting
[n_pos, channels, vocab] logits.  Attention is bidirectional (no causal
mask); rotary positions and qk normalization are optional flags off by
default.  The head is zero-initialized, so a fresh model emits exactly
uniform probabilities.

No autodiff tape exists anywhere: ``backward`` recomputes the forward pass
with caches and chains the gradients explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .errors import NumericError
from .numerics import Rng, softmax

__all__ = [
    "PredictorConfig",
    "PredictorParams",
    "init_params",
    "forward",
    "backward",
    "apply_cfg",
    "sample_tokens",
    "param_count",
]

_NORM_EPS = 1e-6
_ROPE_BASE = 10000.0


@dataclass(frozen=True)
class PredictorConfig:
    depth: int
    hidden: int
    heads: int
    n_pos: int
    channels: int  # tokens predicted per position
    vocab: int  # categories per token
    n_classes: int  # condition vocabulary; one extra null slot is appended
    ffn_hidden: int | None = None
    use_rope: bool = False
    use_qk_norm: bool = False

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.vocab < 2:
            raise ValueError(f"vocab must be >= 2, got {self.vocab}")
        if min(self.depth, self.n_pos, self.channels, self.n_classes) < 1:
            raise ValueError("depth, n_pos, channels and n_classes must be positive")
        if self.use_rope and (self.hidden // self.heads) % 2 != 0:
            raise ValueError("rotary positions need an even per-head dimension")

    @property
    def ffn(self) -> int:
        return self.ffn_hidden if self.ffn_hidden is not None else 4 * self.hidden

    @property
    def null_class(self) -> int:
        return self.n_classes

    @property
    def seq_len(self) -> int:
        return self.n_pos + 1


@dataclass
class PredictorParams:
    config: PredictorConfig
    tensors: dict[str, np.ndarray]

    def n_params(self) -> int:
        return sum(int(t.size) for t in self.tensors.values())

    def astype(self, dtype) -> "PredictorParams":
        return PredictorParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def copy(self) -> "PredictorParams":
        return PredictorParams(self.config, {k: v.copy() for k, v in self.tensors.items()})


def layer_keys(i: int) -> list[str]:
    base = f"layers.{i}."
    return [
        base + "attn_norm_g",
        base + "wq",
        base + "wk",
        base + "wv",
        base + "wo",
        base + "ffn_norm_g",
        base + "ffn_wgate",
        base + "ffn_wup",
        base + "ffn_wdown",
    ]


def param_count(cfg: PredictorConfig) -> int:
    """Closed-form parameter count for a config."""
    d, f = cfg.hidden, cfg.ffn
    per_layer = 2 * d + 4 * d * d + 3 * d * f
    return (
        cfg.channels * cfg.vocab * d
        + cfg.n_pos * d
        + (cfg.n_classes + 1) * d
        + cfg.depth * per_layer
        + d
        + d * cfg.channels * cfg.vocab
    )


def init_params(cfg: PredictorConfig, rng: Rng, dtype=np.float32) -> PredictorParams:
    """Random initialization: normal(std=0.02) everywhere, gains 1, head 0."""
    d, f = cfg.hidden, cfg.ffn

    def normal(*shape):
        return rng.normal(shape, std=0.02).astype(dtype)

    t: dict[str, np.ndarray] = {
        "tok_emb": normal(cfg.channels, cfg.vocab, d),
        "pos_emb": normal(cfg.n_pos, d),
        "cls_emb": normal(cfg.n_classes + 1, d),
    }
    for i in range(cfg.depth):
        base = f"layers.{i}."
        t[base + "attn_norm_g"] = np.ones(d, dtype=dtype)
        t[base + "wq"] = normal(d, d)
        t[base + "wk"] = normal(d, d)
        t[base + "wv"] = normal(d, d)
        t[base + "wo"] = normal(d, d)
        t[base + "ffn_norm_g"] = np.ones(d, dtype=dtype)
        t[base + "ffn_wgate"] = normal(d, f)
        t[base + "ffn_wup"] = normal(d, f)
        t[base + "ffn_wdown"] = normal(f, d)
    t["out_norm_g"] = np.ones(d, dtype=dtype)
    t["head_w"] = np.zeros((d, cfg.channels * cfg.vocab), dtype=dtype)
    assert sum(v.size for v in t.values()) == param_count(cfg)
    return PredictorParams(cfg, t)


def _rms_forward(x, gain):
    r = np.sqrt(np.mean(np.square(x), axis=-1, keepdims=True) + _NORM_EPS)
    return x * (gain / r), r


def _rms_backward(dy, x, r, gain):
    xhat = x / r
    dy_g = dy * gain
    dgain = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    dx = (dy_g - xhat * np.mean(dy_g * xhat, axis=-1, keepdims=True)) / r
    return dx, dgain


def _plain_rms_backward(dy, x, r):
    xhat = x / r
    return (dy - xhat * np.mean(dy * xhat, axis=-1, keepdims=True)) / r


def _rope_tables(seq_len: int, head_dim: int, dtype):
    freqs = _ROPE_BASE ** (-np.arange(0, head_dim, 2, dtype=np.float64) / head_dim)
    angles = np.arange(seq_len, dtype=np.float64)[:, None] * freqs[None, :]
    return np.cos(angles).astype(dtype), np.sin(angles).astype(dtype)


def _rope_apply(x, cos, sin, inverse=False):
    # x: [B, H, L, dh]; interleaved pairs rotate by +/- the position angle.
    if inverse:
        sin = -sin
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def _matmul(x, w):
    # [B, L, D] @ [D, E] via one BLAS call.
    b, l, d = x.shape
    return (x.reshape(-1, d) @ w).reshape(b, l, -1)


def _stable_softmax_lastaxis(scores):
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_cond_ids(cond, cfg: PredictorConfig, batch: int) -> np.ndarray:
    null = cfg.null_class
    if cond is None:
        ids = np.full(batch, null, dtype=np.int64)
    else:
        ids = np.atleast_1d(np.asarray(cond, dtype=np.int64))
        if ids.shape == (1,) and batch > 1:
            ids = np.full(batch, ids[0], dtype=np.int64)
    if ids.shape != (batch,):
        raise ValueError(f"expected {batch} condition ids, got shape {ids.shape}")
    if ids.min() < 0 or ids.max() > null:
        raise ValueError(f"condition ids must lie in [0, {null}] ({null} is the null class)")
    return ids


def _check_tokens(tokens, cfg: PredictorConfig):
    tokens = np.asarray(tokens)
    batched = tokens.ndim == 3
    if not batched:
        if tokens.ndim != 2:
            raise ValueError(f"tokens must be [n_pos, channels] or batched, got {tokens.shape}")
        tokens = tokens[None]
    if tokens.shape[1:] != (cfg.n_pos, cfg.channels):
        raise ValueError(
            f"token extents {tokens.shape[1:]} do not match config "
            f"(n_pos={cfg.n_pos}, channels={cfg.channels})"
        )
    if tokens.min() < 0 or tokens.max() >= cfg.vocab:
        raise ValueError(f"token values must lie in [0, {cfg.vocab})")
    return tokens.astype(np.int64, copy=False), batched


def _forward_cached(params: PredictorParams, tokens, cond_ids):
    cfg = params.config
    t = params.tensors
    dtype = t["head_w"].dtype
    b = tokens.shape[0]
    l, d = cfg.seq_len, cfg.hidden
    heads, dh = cfg.heads, cfg.hidden // cfg.heads
    scale = dtype.type(1.0 / np.sqrt(dh))

    x = np.empty((b, l, d), dtype=dtype)
    x[:, 0, :] = t["cls_emb"][cond_ids]
    tok_sum = np.zeros((b, cfg.n_pos, d), dtype=dtype)
    for c in range(cfg.channels):
        tok_sum += t["tok_emb"][c][tokens[:, :, c]]
    x[:, 1:, :] = tok_sum + t["pos_emb"][None]

    cos = sin = None
    if cfg.use_rope:
        cos, sin = _rope_tables(l, dh, dtype)

    cache = {"x0": x, "layers": []}
    for i in range(cfg.depth):
        base = f"layers.{i}."
        lc: dict = {"x_in": x}
        h1, r1 = _rms_forward(x, t[base + "attn_norm_g"])
        lc["r1"] = r1

        def split_heads(m):
            return m.reshape(b, l, heads, dh).transpose(0, 2, 1, 3)

        q = split_heads(_matmul(h1, t[base + "wq"]))
        k = split_heads(_matmul(h1, t[base + "wk"]))
        v = split_heads(_matmul(h1, t[base + "wv"]))
        lc["h1"] = h1
        if cfg.use_qk_norm:
            lc["q_pre"], lc["k_pre"] = q, k
            rq = np.sqrt(np.mean(np.square(q), axis=-1, keepdims=True) + _NORM_EPS)
            rk = np.sqrt(np.mean(np.square(k), axis=-1, keepdims=True) + _NORM_EPS)
            lc["rq"], lc["rk"] = rq, rk
            q, k = q / rq, k / rk
        if cfg.use_rope:
            lc["q_preRope"], lc["k_preRope"] = q, k
            q = _rope_apply(q, cos, sin)
            k = _rope_apply(k, cos, sin)
        att = _stable_softmax_lastaxis((q @ k.transpose(0, 1, 3, 2)) * scale)
        ctx = (att @ v).transpose(0, 2, 1, 3).reshape(b, l, d)
        lc.update(q=q, k=k, v=v, att=att, ctx=ctx)
        x = x + _matmul(ctx, t[base + "wo"])
        lc["x_mid"] = x

        h2, r2 = _rms_forward(x, t[base + "ffn_norm_g"])
        gate = _matmul(h2, t[base + "ffn_wgate"])
        up = _matmul(h2, t[base + "ffn_wup"])
        sig = 1.0 / (1.0 + np.exp(-gate))
        act = gate * sig * up
        lc.update(h2=h2, r2=r2, gate=gate, up=up, sig=sig, act=act)
        x = x + _matmul(act, t[base + "ffn_wdown"])
        cache["layers"].append(lc)

    hf, rf = _rms_forward(x, t["out_norm_g"])
    cache.update(x_final=x, rf=rf, hf=hf, rope=(cos, sin), scale=scale)
    logits = _matmul(hf[:, 1:, :], t["head_w"]).reshape(b, cfg.n_pos, cfg.channels, cfg.vocab)
    return logits, cache


def forward(params: PredictorParams, tokens, cond) -> np.ndarray:
    """Logits [n_pos, channels, vocab] for one map, or batched with a leading
    axis when ``tokens`` has one.  ``cond`` is a class id, an id array, or
    None for the null class."""
    cfg = params.config
    tokens, batched = _check_tokens(tokens, cfg)
    cond_ids = _as_cond_ids(cond, cfg, tokens.shape[0])
    logits, _ = _forward_cached(params, tokens, cond_ids)
    if not np.all(np.isfinite(logits)):
        raise NumericError("predictor forward produced non-finite logits")
    return logits if batched else logits[0]


def backward(params: PredictorParams, tokens, cond, targets):
    """Cross-entropy loss (nats, mean over every token in the batch) and the
    gradient for every parameter tensor."""
    cfg = params.config
    t = params.tensors
    tokens, _ = _check_tokens(tokens, cfg)
    targets_arr = np.asarray(targets)
    if targets_arr.ndim == 2:
        targets_arr = targets_arr[None]
    if targets_arr.shape != tokens.shape:
        raise ValueError(f"targets shape {targets_arr.shape} != tokens shape {tokens.shape}")
    if targets_arr.min() < 0 or targets_arr.max() >= cfg.vocab:
        raise ValueError(f"target values must lie in [0, {cfg.vocab})")
    cond_ids = _as_cond_ids(cond, cfg, tokens.shape[0])

    logits, cache = _forward_cached(params, tokens, cond_ids)
    b = tokens.shape[0]
    l, d = cfg.seq_len, cfg.hidden
    heads, dh = cfg.heads, cfg.hidden // cfg.heads
    dtype = t["head_w"].dtype
    n_tok = b * cfg.n_pos * cfg.channels

    # Loss and dlogits in float64 regardless of the model dtype.
    flat64 = logits.reshape(n_tok, cfg.vocab).astype(np.float64)
    z = flat64 - flat64.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1))
    tgt = targets_arr.reshape(-1)
    loss = float(np.mean(log_norm - z[np.arange(n_tok), tgt]))
    if not np.isfinite(loss):
        raise NumericError("non-finite training loss")
    probs = np.exp(z - log_norm[:, None])
    probs[np.arange(n_tok), tgt] -= 1.0
    dlogits = (probs / n_tok).astype(dtype).reshape(b, cfg.n_pos, cfg.channels * cfg.vocab)

    grads: dict[str, np.ndarray] = {}
    hf = cache["hf"]
    grads["head_w"] = hf[:, 1:, :].reshape(-1, d).T @ dlogits.reshape(-1, cfg.channels * cfg.vocab)
    dhf = np.zeros((b, l, d), dtype=dtype)
    dhf[:, 1:, :] = _matmul(dlogits, t["head_w"].T)
    dx, grads["out_norm_g"] = _rms_backward(dhf, cache["x_final"], cache["rf"], t["out_norm_g"])

    cos, sin = cache["rope"]
    scale = cache["scale"]
    for i in reversed(range(cfg.depth)):
        base = f"layers.{i}."
        lc = cache["layers"][i]

        # FFN block (x = x_mid + act @ wdown)
        dact = _matmul(dx, t[base + "ffn_wdown"].T)
        grads[base + "ffn_wdown"] = lc["act"].reshape(-1, cfg.ffn).T @ dx.reshape(-1, d)
        gate, sig, up = lc["gate"], lc["sig"], lc["up"]
        silu = gate * sig
        dup = dact * silu
        dgate = dact * up * (sig * (1.0 + gate * (1.0 - sig)))
        grads[base + "ffn_wgate"] = lc["h2"].reshape(-1, d).T @ dgate.reshape(-1, cfg.ffn)
        grads[base + "ffn_wup"] = lc["h2"].reshape(-1, d).T @ dup.reshape(-1, cfg.ffn)
        dh2 = _matmul(dgate, t[base + "ffn_wgate"].T) + _matmul(dup, t[base + "ffn_wup"].T)
        dx_norm, grads[base + "ffn_norm_g"] = _rms_backward(
            dh2, lc["x_mid"], lc["r2"], t[base + "ffn_norm_g"]
        )
        dx = dx + dx_norm

        # Attention block (x_mid = x_in + ctx @ wo)
        dctx = _matmul(dx, t[base + "wo"].T)
        grads[base + "wo"] = lc["ctx"].reshape(-1, d).T @ dx.reshape(-1, d)
        dctx_h = dctx.reshape(b, l, heads, dh).transpose(0, 2, 1, 3)
        att, q, k, v = lc["att"], lc["q"], lc["k"], lc["v"]
        datt = dctx_h @ v.transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ dctx_h
        dscores = att * (datt - np.sum(datt * att, axis=-1, keepdims=True))
        dscores *= scale
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q
        if cfg.use_rope:
            dq = _rope_apply(dq, cos, sin, inverse=True)
            dk = _rope_apply(dk, cos, sin, inverse=True)
        if cfg.use_qk_norm:
            dq = _plain_rms_backward(dq, lc["q_pre"], lc["rq"])
            dk = _plain_rms_backward(dk, lc["k_pre"], lc["rk"])

        def merge_heads(m):
            return m.transpose(0, 2, 1, 3).reshape(b, l, d)

        dq_m, dk_m, dv_m = merge_heads(dq), merge_heads(dk), merge_heads(dv)
        h1 = lc["h1"]
        grads[base + "wq"] = h1.reshape(-1, d).T @ dq_m.reshape(-1, d)
        grads[base + "wk"] = h1.reshape(-1, d).T @ dk_m.reshape(-1, d)
        grads[base + "wv"] = h1.reshape(-1, d).T @ dv_m.reshape(-1, d)
        dh1 = (
            _matmul(dq_m, t[base + "wq"].T)
            + _matmul(dk_m, t[base + "wk"].T)
            + _matmul(dv_m, t[base + "wv"].T)
        )
        dx_norm, grads[base + "attn_norm_g"] = _rms_backward(
            dh1, lc["x_in"], lc["r1"], t[base + "attn_norm_g"]
        )
        dx = dx + dx_norm

    # Embeddings
    grads["cls_emb"] = np.zeros_like(t["cls_emb"])
    np.add.at(grads["cls_emb"], cond_ids, dx[:, 0, :])
    dtok = dx[:, 1:, :]
    grads["pos_emb"] = dtok.sum(axis=0)
    grads["tok_emb"] = np.zeros_like(t["tok_emb"])
    for c in range(cfg.channels):
        np.add.at(grads["tok_emb"][c], tokens[:, :, c].reshape(-1), dtok.reshape(-1, d))

    return loss, grads


def apply_cfg(logits_cond: np.ndarray, logits_uncond: np.ndarray, scale: float) -> np.ndarray:
    """Guided logits: uncond + scale * (cond - uncond)."""
    if np.shape(logits_cond) != np.shape(logits_uncond):
        raise ValueError(
            f"shape mismatch: {np.shape(logits_cond)} vs {np.shape(logits_uncond)}"
        )
    if scale < 0:
        raise ValueError(f"guidance scale must be >= 0, got {scale}")
    return logits_uncond + scale * (logits_cond - logits_uncond)


def sample_tokens(logits: np.ndarray, temperature: float, rng: Rng) -> np.ndarray:
    """Categorical sample per token from softmax(logits / temperature).

    Uses the Gumbel-max trick, so the temperature -> 0 limit is the argmax.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    u = rng.uniform(z.shape)
    gumbel = -np.log(-np.log(u + 1e-300) + 1e-300)
    return np.argmax(z + gumbel, axis=-1).astype(np.int64)


def predict_probs(params: PredictorParams, tokens, cond) -> np.ndarray:
    """Temperature-1 probabilities of the model, float64."""
    return softmax(forward(params, tokens, cond))
