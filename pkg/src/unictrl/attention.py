"""Multi-head attention blocks and the hook interface used for attention control.

Hidden states are laid out ``(..., frames, tokens, dim)``. Spatial self-attention
and text cross-attention run per frame; temporal attention runs along the frame
axis per spatial token and is never hooked.

A :class:`ControlHook` decides, per attention site, where K/V come from and
whether Q is replaced from a cache:

* ``vanilla``          own K, V, Q
* ``sac``              K and V projected from frame 0, shared by every frame
* ``sac_value_only``   V from frame 0, per-frame K (the K/V mismatch ablation)
* ``q_inject(cache)``  own K, V; Q replaced by ``cache``
* ``sac_q_inject``     frame-0 K, V and cached Q
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .tensor import ShapeError, Tensor, matmul, mul, reshape, softmax, swapaxes


class KVSource(str, Enum):
    OWN = "own"
    FIRST_FRAME = "first_frame"
    FIRST_FRAME_VALUE = "first_frame_value"


class SiteKind(str, Enum):
    SELF = "self"
    CROSS = "cross"


@dataclass(frozen=True)
class AttentionWeights:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    head_count: int

    def __post_init__(self):
        dim = self.w_q.shape[1]
        if dim % self.head_count:
            raise ShapeError(f"model_dim {dim} not divisible by head_count {self.head_count}")
        for name in ("w_k", "w_v"):
            if getattr(self, name).shape[1] != dim:
                raise ShapeError(f"{name} output dim differs from w_q")
        if self.w_o.shape != (dim, dim):
            raise ShapeError(f"w_o must be {dim}x{dim}, got {self.w_o.shape}")

    @property
    def model_dim(self) -> int:
        return self.w_q.shape[1]

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.head_count


@dataclass(frozen=True)
class ControlHook:
    kv: KVSource = KVSource.OWN
    q_cache: np.ndarray | None = None

    @classmethod
    def vanilla(cls) -> "ControlHook":
        return cls()

    @classmethod
    def sac(cls) -> "ControlHook":
        return cls(KVSource.FIRST_FRAME)

    @classmethod
    def sac_value_only(cls) -> "ControlHook":
        return cls(KVSource.FIRST_FRAME_VALUE)

    @classmethod
    def q_inject(cls, cache: np.ndarray) -> "ControlHook":
        return cls(KVSource.OWN, np.asarray(cache))

    @classmethod
    def sac_q_inject(cls, cache: np.ndarray, value_only: bool = False) -> "ControlHook":
        kv = KVSource.FIRST_FRAME_VALUE if value_only else KVSource.FIRST_FRAME
        return cls(kv, np.asarray(cache))

    @property
    def mode(self) -> str:
        names = {KVSource.OWN: "Vanilla", KVSource.FIRST_FRAME: "SAC", KVSource.FIRST_FRAME_VALUE: "SACValueOnly"}
        base = names[self.kv]
        if self.q_cache is None:
            return base
        return "QInject" if self.kv is KVSource.OWN else f"{base}+QInject"


VANILLA = ControlHook()


@dataclass(frozen=True)
class AttentionRecord:
    """What one hooked site computed and consumed during a forward pass.

    ``q`` is the query computed from the site's input (before any injection);
    ``k`` and ``v`` are the keys/values the attention actually consumed,
    broadcast to the frame layout of ``q``.
    """

    site: int
    kind: SiteKind
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray


Capture = Callable[[AttentionRecord], None]


def split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    return swapaxes(reshape(x, (*lead, n, heads, d // heads)), -3, -2)


def merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, d = x.shape
    return reshape(swapaxes(x, -3, -2), (*lead, n, h * d))


def attention(q: Tensor, k: Tensor, v: Tensor, head_count: int = 1) -> Tensor:
    """Scaled dot-product attention ``softmax(q k^T / sqrt(d)) v`` per head.

    ``q``: ``(..., Tq, D)``; ``k``, ``v``: ``(..., Tk, D)`` with leading axes
    broadcastable against ``q``. Heads are split from ``D`` and concatenated
    back, so the result is ``(..., Tq, D)``; output projection is left to the
    caller.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-1] != v.shape[-1]:
        raise ShapeError(f"attention feature dims differ: q {q.shape}, k {k.shape}, v {v.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"k and v token counts differ: {k.shape[-2]} vs {v.shape[-2]}")
    if q.shape[-1] % head_count:
        raise ShapeError(f"dim {q.shape[-1]} not divisible by {head_count} heads")
    d = q.shape[-1] // head_count
    qh, kh, vh = (split_heads(t, head_count) for t in (q, k, v))
    scores = mul(matmul(qh, swapaxes(kh, -1, -2)), 1.0 / math.sqrt(d))
    return merge_heads(matmul(softmax(scores, axis=-1), vh))


def _replace_q(q: Tensor, hook: ControlHook) -> Tensor:
    if hook.q_cache is None:
        return q
    if hook.q_cache.shape != q.shape:
        raise ShapeError(f"injected Q has shape {hook.q_cache.shape}, expected {q.shape}")
    return Tensor._wrap(np.asarray(hook.q_cache, dtype=np.float32), "q_inject")


def self_attention_block(
    z: Tensor,
    w: AttentionWeights,
    hook: ControlHook = VANILLA,
    capture: Capture | None = None,
    site: int = 0,
) -> Tensor:
    """Per-frame spatial self-attention on ``z`` of shape ``(..., F, N, D)``."""
    if z.ndim < 3 or z.shape[-3] < 1:
        raise ShapeError(f"self-attention expects (..., F, N, D), got {z.shape}")
    q = matmul(z, w.w_q)
    if hook.kv is KVSource.OWN:
        k = matmul(z, w.w_k)
        v = matmul(z, w.w_v)
    else:
        # frame 0 keeps a length-1 frame axis and broadcasts over all frames
        z0 = z[..., 0:1, :, :]
        v = matmul(z0, w.w_v)
        k = matmul(z0, w.w_k) if hook.kv is KVSource.FIRST_FRAME else matmul(z, w.w_k)
    if capture is not None:
        capture(AttentionRecord(site, SiteKind.SELF, q.data, np.broadcast_to(k.data, q.shape), np.broadcast_to(v.data, q.shape)))
    out = attention(_replace_q(q, hook), k, v, w.head_count)
    return matmul(out, w.w_o)


def cross_attention_block(
    z: Tensor,
    cond: Tensor,
    w: AttentionWeights,
    hook: ControlHook = VANILLA,
    capture: Capture | None = None,
    site: int = 0,
) -> Tensor:
    """Text cross-attention: Q from ``z`` (..., F, N, D), K/V from ``cond`` (..., L, Dc)."""
    if hook.kv is not KVSource.OWN:
        raise ValueError("cross-frame K/V control applies to self-attention only")
    if cond.shape[-2] < 1:
        raise ShapeError("condition needs at least one token")
    q = matmul(z, w.w_q)
    k = matmul(cond, w.w_k)
    v = matmul(cond, w.w_v)
    if z.ndim == cond.ndim + 1:
        # one condition per video: add a frame axis that broadcasts
        k = reshape(k, (*k.shape[:-2], 1, *k.shape[-2:]))
        v = reshape(v, (*v.shape[:-2], 1, *v.shape[-2:]))
    if capture is not None:
        kv_shape = (*q.shape[:-2], *k.shape[-2:])
        capture(AttentionRecord(site, SiteKind.CROSS, q.data, np.broadcast_to(k.data, kv_shape), np.broadcast_to(v.data, kv_shape)))
    out = attention(_replace_q(q, hook), k, v, w.head_count)
    return matmul(out, w.w_o)


def temporal_attention_block(z: Tensor, w: AttentionWeights) -> Tensor:
    """Attention along the frame axis, independently for every spatial token."""
    if z.ndim < 3 or z.shape[-3] < 1:
        raise ShapeError(f"temporal attention expects (..., F, N, D), got {z.shape}")
    zt = swapaxes(z, -3, -2)
    out = attention(matmul(zt, w.w_q), matmul(zt, w.w_k), matmul(zt, w.w_v), w.head_count)
    return swapaxes(matmul(out, w.w_o), -3, -2)
