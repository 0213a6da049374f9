"""Encoder-decoder Transformer for single-channel sequence completion.

The input segment of N samples is cut into ``N / patch_len`` tokens, each
lifted to ``d_model`` by a shared linear embedding. There is no positional
encoding and no causal mask. The decoder consumes the same embedded
sequence as the encoder and attends to the last encoder's output; a linear
head and ``tanh`` give ``patch_len`` values in (-1, 1) per token.

With ``patch_len=1`` every sample is a token and the model is permutation
equivariant: it cannot tell where a run of identical (zero-filled) samples
sits. With ``patch_len=N`` the segment is a single token, time order lives
in the embedding's input axis, and attention reduces to its value path.

Activations are shaped ``(batch, tokens, d_model)``. Residual blocks are
post-norm: ``layer_norm(x + sublayer(x))``.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor

__all__ = [
    "ModelConfig",
    "FULL_PRESET",
    "Transformer",
    "init_weights",
    "attention",
    "multi_head",
    "feed_forward",
    "encoder_layer",
    "decoder_layer",
    "forward",
]


@dataclass(frozen=True)
class ModelConfig:
    n_encoders: int = 6
    n_decoders: int = 6
    d_qkv: int = 16
    n_heads: int = 4
    d_ff: int = 256
    seq_len: int = 100
    patch_len: int = 1
    ln_eps: float = 1e-5

    def __post_init__(self):
        for name in ("n_encoders", "n_decoders", "d_qkv", "n_heads", "d_ff", "seq_len",
                     "patch_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_model < 2:
            raise ValueError("d_model = n_heads * d_qkv must be >= 2")
        if self.seq_len % self.patch_len:
            raise ValueError(f"patch_len {self.patch_len} does not divide seq_len {self.seq_len}")

    @property
    def d_model(self) -> int:
        return self.n_heads * self.d_qkv

    @property
    def n_tokens(self) -> int:
        return self.seq_len // self.patch_len

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


# 6+6 layers, 16-wide heads; the whole 100-sample segment is one token
FULL_PRESET = ModelConfig(patch_len=100)


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _attention_block(params, rng, prefix, cfg: ModelConfig):
    dm, dq, h = cfg.d_model, cfg.d_qkv, cfg.n_heads
    for name in ("w_q", "w_k", "w_v"):
        params[f"{prefix}.{name}"] = _glorot(rng, (h, dm, dq), dm, dq)
    params[f"{prefix}.w_o"] = _glorot(rng, (h * dq, dm), h * dq, dm)
    params[f"{prefix}.b_o"] = np.zeros(dm)


def _ff_block(params, rng, prefix, cfg: ModelConfig):
    dm, dff = cfg.d_model, cfg.d_ff
    params[f"{prefix}.w1"] = _glorot(rng, (dm, dff), dm, dff)
    params[f"{prefix}.b1"] = np.zeros(dff)
    params[f"{prefix}.w2"] = _glorot(rng, (dff, dm), dff, dm)
    params[f"{prefix}.b2"] = np.zeros(dm)


def _norm(params, prefix, cfg: ModelConfig):
    params[f"{prefix}.gain"] = np.ones(cfg.d_model)
    params[f"{prefix}.bias"] = np.zeros(cfg.d_model)


def init_weights(cfg: ModelConfig, rng: np.random.Generator | int) -> OrderedDict[str, np.ndarray]:
    """Fresh parameters; matrices uniform on +-sqrt(6/(fan_in+fan_out)), biases 0, gains 1.

    Per-head Q/K/V projections are stored stacked as ``(n_heads, d_model, d_qkv)``.
    """
    rng = np.random.default_rng(rng)
    p: OrderedDict[str, np.ndarray] = OrderedDict()
    dm = cfg.d_model
    pl = cfg.patch_len
    p["embed.w"] = _glorot(rng, (pl, dm), pl, dm)
    p["embed.b"] = np.zeros(dm)
    for i in range(cfg.n_encoders):
        _attention_block(p, rng, f"enc{i}.attn", cfg)
        _norm(p, f"enc{i}.norm1", cfg)
        _ff_block(p, rng, f"enc{i}.ff", cfg)
        _norm(p, f"enc{i}.norm2", cfg)
    for i in range(cfg.n_decoders):
        _attention_block(p, rng, f"dec{i}.self", cfg)
        _norm(p, f"dec{i}.norm1", cfg)
        _attention_block(p, rng, f"dec{i}.cross", cfg)
        _norm(p, f"dec{i}.norm2", cfg)
        _ff_block(p, rng, f"dec{i}.ff", cfg)
        _norm(p, f"dec{i}.norm3", cfg)
    p["head.w"] = _glorot(rng, (dm, pl), dm, pl)
    p["head.b"] = np.zeros(pl)
    return p


# --------------------------------------------------------------------------
# building blocks (operate on Tensors)


def attention(q, k, v) -> Tensor:
    """``softmax(q k^T / sqrt(d)) v`` over the last two axes."""
    q, k, v = (x if isinstance(x, Tensor) else Tensor(x) for x in (q, k, v))
    d = q.shape[-1]
    if k.shape[-1] != d or k.shape[-2] != v.shape[-2]:
        raise ValueError(f"attention shape mismatch: q{q.shape} k{k.shape} v{v.shape}")
    # scaling q (N x d) is cheaper than scaling the N x N scores
    scores = ag.matmul(ag.scale(q, 1.0 / math.sqrt(d)), ag.swap_last(k))
    return ag.matmul(ag.softmax_rows(scores), v)


def _split_heads(x: Tensor, w: Tensor) -> Tensor:
    """Project ``x (B, N, dm)`` with stacked ``w (h, dm, dq)`` to ``(B, h, N, dq)``."""
    h, dm, dq = w.shape
    w_cat = ag.reshape(ag.transpose(w, (1, 0, 2)), (dm, h * dq))
    y = ag.matmul(x, w_cat)
    b, n = x.shape[0], x.shape[1]
    return ag.transpose(ag.reshape(y, (b, n, h, dq)), (0, 2, 1, 3))


def multi_head(x_att, params, prefix: str, memory=None) -> Tensor:
    """Multi-head attention. Queries come from ``x_att``; keys and values
    from ``memory`` when given (cross-attention), else from ``x_att``."""
    x = x_att if isinstance(x_att, Tensor) else Tensor(x_att)
    squeeze = x.ndim == 2
    if squeeze:
        x = ag.reshape(x, (1,) + x.shape)
    mem = x if memory is None else (memory if isinstance(memory, Tensor) else Tensor(memory))
    if mem.ndim == 2:
        mem = ag.reshape(mem, (1,) + mem.shape)
    w_q, w_k, w_v = (params[f"{prefix}.{n}"] for n in ("w_q", "w_k", "w_v"))
    if w_q.shape[1] != x.shape[-1] or w_k.shape[1] != mem.shape[-1]:
        raise ValueError(f"{prefix}: input width does not match projection weights")
    heads = attention(_split_heads(x, w_q), _split_heads(mem, w_k), _split_heads(mem, w_v))
    b, h, n, dq = heads.shape
    merged = ag.reshape(ag.transpose(heads, (0, 2, 1, 3)), (b, n, h * dq))
    out = ag.add(ag.matmul(merged, params[f"{prefix}.w_o"]), params[f"{prefix}.b_o"])
    if squeeze:
        out = ag.reshape(out, out.shape[1:])
    return out


def feed_forward(x, params, prefix: str) -> Tensor:
    hidden = ag.relu(ag.add(ag.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return ag.add(ag.matmul(hidden, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def _add_norm(x, y, params, prefix, eps):
    return ag.layer_norm(ag.add(x, y), params[f"{prefix}.gain"], params[f"{prefix}.bias"], eps)


def encoder_layer(x, params, i: int, eps: float = 1e-5) -> Tensor:
    p = f"enc{i}"
    x = _add_norm(x, multi_head(x, params, f"{p}.attn"), params, f"{p}.norm1", eps)
    return _add_norm(x, feed_forward(x, params, f"{p}.ff"), params, f"{p}.norm2", eps)


def decoder_layer(x, enc_out, params, i: int, eps: float = 1e-5) -> Tensor:
    p = f"dec{i}"
    x = _add_norm(x, multi_head(x, params, f"{p}.self"), params, f"{p}.norm1", eps)
    x = _add_norm(x, multi_head(x, params, f"{p}.cross", memory=enc_out), params, f"{p}.norm2", eps)
    return _add_norm(x, feed_forward(x, params, f"{p}.ff"), params, f"{p}.norm3", eps)


def forward(params, cfg: ModelConfig, x) -> Tensor:
    """Completed sequence(s) for masked input ``x`` of shape ``(N,)`` or ``(B, N)``."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    single = x.ndim == 1
    if single:
        x = ag.reshape(x, (1, x.shape[0]))
    if x.ndim != 2 or x.shape[1] != cfg.seq_len:
        raise ValueError(f"expected input length {cfg.seq_len}, got shape {x.shape}")
    b, n = x.shape
    t, pl = cfg.n_tokens, cfg.patch_len
    tokens = ag.add(ag.matmul(ag.reshape(x, (b, t, pl)), params["embed.w"]), params["embed.b"])
    enc = tokens
    for i in range(cfg.n_encoders):
        enc = encoder_layer(enc, params, i, cfg.ln_eps)
    dec = tokens
    for i in range(cfg.n_decoders):
        dec = decoder_layer(dec, enc, params, i, cfg.ln_eps)
    y = ag.tanh(ag.add(ag.matmul(dec, params["head.w"]), params["head.b"]))
    y = ag.reshape(y, (b, n))  # (b, t, pl) -> (b, n): tokens are contiguous runs
    if single:
        y = ag.reshape(y, (n,))
    return y


class Transformer:
    """A parameter set plus its config. Call it on a masked input."""

    def __init__(self, config: ModelConfig = FULL_PRESET, seed: int | np.random.Generator = 0,
                 params: dict | None = None):
        self.config = config
        raw = init_weights(config, seed) if params is None else params
        self.params: OrderedDict[str, Tensor] = OrderedDict(
            (k, v if isinstance(v, Tensor) else Tensor(np.array(v, dtype=np.float64),
                                                      requires_grad=True))
            for k, v in raw.items()
        )
        if params is not None:
            expected = init_weights(config, 0)
            if list(expected) != list(self.params) or any(
                expected[k].shape != self.params[k].shape for k in expected
            ):
                raise ValueError("parameter names/shapes do not match the config")

    def __call__(self, x) -> Tensor:
        return forward(self.params, self.config, x)

    def predict(self, x) -> np.ndarray:
        with ag.no_grad():
            return forward(self.params, self.config, np.asarray(x, dtype=np.float64)).data

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((k, v.data.copy()) for k, v in self.params.items())

    def load_state_dict(self, state) -> None:
        for k, v in state.items():
            if self.params[k].shape != np.shape(v):
                raise ValueError(f"{k}: shape {np.shape(v)} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())
