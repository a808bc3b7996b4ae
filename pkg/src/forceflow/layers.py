"""Dense layers, MLPs and scaled dot-product attention on the autodiff core.

Layers are functional: parameters live in a ``ParamSet`` under a name
prefix, forwards take tensors and return tensors. Default initialization is
uniform in +-1/sqrt(fan_in) from a caller-supplied seeded generator, so a
fixed seed and call sequence reproduce parameters bit for bit.
"""
from __future__ import annotations

import numpy as np

from .autodiff import DimensionError, ParamSet, Tensor, concat, softmax


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-bound, bound, size=shape)


def linear_init(params: ParamSet, name: str, d_in: int, d_out: int,
                rng: np.random.Generator, zero: bool = False):
    if zero:
        params.add(f"{name}.w", np.zeros((d_in, d_out)))
        params.add(f"{name}.b", np.zeros(d_out))
    else:
        params.add(f"{name}.w", uniform_init(rng, (d_in, d_out), d_in))
        params.add(f"{name}.b", uniform_init(rng, (d_out,), d_in))


def linear(params: ParamSet, name: str, x: Tensor) -> Tensor:
    """x @ W + b with b broadcast over leading axes."""
    w = params[f"{name}.w"]
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(
            f"linear '{name}': input dim {x.shape[-1]} != weight rows {w.shape[0]}")
    return x @ w + params[f"{name}.b"]


def mlp_init(params: ParamSet, name: str, dims, rng: np.random.Generator,
             zero_last: bool = False):
    """Chain of linear layers sized dims[0] -> dims[1] -> ... -> dims[-1]."""
    if len(dims) < 2:
        raise DimensionError("mlp needs at least input and output dims")
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        linear_init(params, f"{name}.{i}", a, b, rng,
                    zero=(zero_last and i == len(dims) - 2))


def mlp(params: ParamSet, name: str, x: Tensor) -> Tensor:
    """Alternating linear layers and tanh; no nonlinearity after the last."""
    i = 0
    while f"{name}.{i}.w" in params:
        x = linear(params, f"{name}.{i}", x)
        if f"{name}.{i + 1}.w" in params:
            x = x.tanh()
        i += 1
    if i == 0:
        raise KeyError(f"no mlp layers under prefix '{name}'")
    return x


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over the last two axes.

    Each output row is a convex combination of the value rows. Leading axes
    are batch dims and must broadcast.
    """
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError("queries and keys disagree on feature dim")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError("keys and values disagree on token count")
    if k.shape[-2] == 0:
        raise DimensionError("attention over zero tokens")
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = (q @ k.swapaxes(-1, -2)) * scale
    return softmax(scores, axis=-1) @ v


def attention_weights(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Forward-only attention weight matrix, for tests and introspection."""
    scores = (q @ np.swapaxes(k, -1, -2)) / np.sqrt(q.shape[-1])
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def attn_block_init(params: ParamSet, name: str, d_model: int,
                    rng: np.random.Generator, zero_out: bool = False):
    """Single-head self/cross attention projections (q, k, v, out)."""
    for proj in ("q", "k", "v"):
        linear_init(params, f"{name}.{proj}", d_model, d_model, rng)
    linear_init(params, f"{name}.out", d_model, d_model, rng, zero=zero_out)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, n, d = x.shape
    if d % n_heads:
        raise DimensionError(f"d_model {d} not divisible by {n_heads} heads")
    return x.reshape(*lead, n, n_heads, d // n_heads).swapaxes(-2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, n, h * dh)


def attn_block(params: ParamSet, name: str, queries: Tensor,
               context: Tensor, n_heads: int = 1) -> Tensor:
    """Projected attention: out-proj of attention(q(x), k(c), v(c)).

    Self-attention when queries is context. Residual connections are the
    caller's concern. Single-head by default; n_heads splits the feature
    dim into parallel heads.
    """
    q = linear(params, f"{name}.q", queries)
    k = linear(params, f"{name}.k", context)
    v = linear(params, f"{name}.v", context)
    if n_heads == 1:
        att = scaled_dot_attention(q, k, v)
    else:
        att = _merge_heads(scaled_dot_attention(
            _split_heads(q, n_heads), _split_heads(k, n_heads),
            _split_heads(v, n_heads)))
    return linear(params, f"{name}.out", att)


def transformer_block_init(params: ParamSet, name: str, d_model: int,
                           hidden: int, rng: np.random.Generator,
                           zero_out: bool = False):
    attn_block_init(params, f"{name}.attn", d_model, rng, zero_out=zero_out)
    mlp_init(params, f"{name}.mlp", (d_model, hidden, d_model), rng,
             zero_last=zero_out)


def transformer_block(params: ParamSet, name: str, x: Tensor,
                      n_heads: int = 1) -> Tensor:
    """Residual self-attention + residual MLP (no normalization at this scale)."""
    x = x + attn_block(params, f"{name}.attn", x, x, n_heads=n_heads)
    return x + mlp(params, f"{name}.mlp", x)


__all__ = [
    "uniform_init", "linear_init", "linear", "mlp_init", "mlp",
    "scaled_dot_attention", "attention_weights", "attn_block_init",
    "attn_block", "transformer_block_init", "transformer_block",
    "ParamSet", "Tensor", "concat", "softmax",
]
