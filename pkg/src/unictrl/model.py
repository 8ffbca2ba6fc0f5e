"""Tiny patch-transformer video denoiser ``eps_theta(z_t, c, t)``.

Each block runs, with pre-norm residuals: spatial self-attention (hooked),
text cross-attention (hooked), temporal attention, feed-forward. Hooked sites
are numbered in execution order: block ``b`` owns site ``2b`` (self) and
``2b + 1`` (cross).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as tc
from .attention import (
    VANILLA,
    AttentionRecord,
    AttentionWeights,
    ControlHook,
    SiteKind,
    cross_attention_block,
    self_attention_block,
    temporal_attention_block,
)
from .diffusion import make_schedule
from .tensor import RngStream, ShapeError, Tensor


@dataclass(frozen=True)
class DenoiserConfig:
    frames: int = 8
    height: int = 16
    width: int = 16
    channels: int = 4
    patch: int = 2
    model_dim: int = 64
    head_count: int = 4
    block_count: int = 4
    cond_dim: int = 64
    vocab_size: int = 512
    text_tokens: int = 8
    ffn_mult: int = 2
    max_timestep: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    # how the network output maps to the noise estimate:
    #   "eps": it is the noise estimate
    #   "v":   noise = sqrt(ab_t) * out + sqrt(1 - ab_t) * z_t, so out estimates sqrt(ab_t) eps - sqrt(1 - ab_t) z_0
    prediction: str = "v"

    def __post_init__(self):
        if self.height % self.patch or self.width % self.patch:
            raise ValueError(f"latent grid {self.height}x{self.width} not divisible by patch {self.patch}")
        if self.model_dim % self.head_count:
            raise ValueError(f"model_dim {self.model_dim} not divisible by head_count {self.head_count}")
        if self.prediction not in ("eps", "v"):
            raise ValueError(f"prediction must be 'eps' or 'v', got {self.prediction!r}")
        for name in ("frames", "channels", "patch", "block_count", "vocab_size", "text_tokens", "max_timestep"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def tokens(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch * self.patch

    @property
    def site_count(self) -> int:
        return 2 * self.block_count

    @property
    def latent_shape(self) -> tuple[int, int, int, int]:
        return (self.frames, self.channels, self.height, self.width)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        return cls(**d)


def sinusoid(positions: np.ndarray, dim: int, base: float = 10000.0) -> np.ndarray:
    """Standard sin/cos encoding, ``(len(positions), dim)``."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-math.log(base) * np.arange(half) / half)
    ang = positions * freqs
    enc = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if dim % 2:
        enc = np.pad(enc, ((0, 0), (0, 1)))
    return enc.astype(np.float32)


def spatial_encoding(rows: int, cols: int, dim: int) -> np.ndarray:
    """2-D encoding: first half of the channels from the row, second from the column."""
    r = sinusoid(np.repeat(np.arange(rows), cols), dim // 2)
    c = sinusoid(np.tile(np.arange(cols), rows), dim - dim // 2)
    return np.concatenate([r, c], axis=1)


def hash_token(token: str, vocab_size: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % vocab_size


def tokenize(prompt: str, config: DenoiserConfig) -> tuple[np.ndarray, np.ndarray]:
    """Hashed token ids and a 0/1 mask, both padded to ``config.text_tokens``."""
    words = prompt.lower().split()[: config.text_tokens]
    ids = np.zeros(config.text_tokens, dtype=np.int64)
    mask = np.zeros(config.text_tokens, dtype=np.float32)
    for i, w in enumerate(words):
        ids[i] = hash_token(w, config.vocab_size)
        mask[i] = 1.0
    return ids, mask


@dataclass(frozen=True)
class TextCondition:
    prompt: str
    embedding: np.ndarray  # (text_tokens, cond_dim)
    is_null: bool


@dataclass
class CapturedQueries:
    """Queries computed at each hooked site during one denoiser call, in site order."""

    records: list[AttentionRecord] = field(default_factory=list)

    def __call__(self, record: AttentionRecord) -> None:
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i) -> AttentionRecord:
        return self.records[i]

    @property
    def queries(self) -> list[np.ndarray]:
        return [r.q for r in self.records]


def _param_shapes(c: DenoiserConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, hidden = c.model_dim, c.model_dim * c.ffn_mult
    shapes = [
        ("patch_in.w", (c.patch_dim, d)),
        ("patch_in.b", (d,)),
        ("time.w1", (d, d)),
        ("time.b1", (d,)),
        ("time.w2", (d, d)),
        ("time.b2", (d,)),
        ("text.table", (c.vocab_size, c.cond_dim)),
    ]
    for b in range(c.block_count):
        p = f"blocks.{b}."
        for norm in ("norm_self", "norm_cross", "norm_temporal", "norm_ff"):
            shapes += [(p + norm + ".g", (d,)), (p + norm + ".b", (d,))]
        for kind in ("self", "cross", "temporal"):
            kv_in = c.cond_dim if kind == "cross" else d
            shapes += [
                (p + kind + ".q", (d, d)),
                (p + kind + ".k", (kv_in, d)),
                (p + kind + ".v", (kv_in, d)),
                (p + kind + ".o", (d, d)),
            ]
        shapes += [
            (p + "ff.w1", (d, hidden)),
            (p + "ff.b1", (hidden,)),
            (p + "ff.w2", (hidden, d)),
            (p + "ff.b2", (d,)),
        ]
    shapes += [
        ("final_norm.g", (d,)),
        ("final_norm.b", (d,)),
        ("out.w", (d, c.patch_dim)),
        ("out.b", (c.patch_dim,)),
    ]
    return shapes


class Denoiser:
    """Noise predictor over latent videos ``(F, C, H, W)``.

    ``params`` maps names to parameter tensors. The dict may be swapped out
    (e.g. by an optimizer step); tensors themselves are never mutated.
    """

    def __init__(self, config: DenoiserConfig, params: dict[str, Tensor]):
        expected = dict(_param_shapes(config))
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ValueError(f"parameter names mismatch; missing={missing[:3]} extra={extra[:3]}")
        for name, shape in expected.items():
            if tuple(params[name].shape) != shape:
                raise ShapeError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
        self.config = config
        self.params = {name: params[name] for name, _ in _param_shapes(config)}
        self.meta: dict = {}
        grid = (config.height // config.patch, config.width // config.patch)
        self._spatial_pe = spatial_encoding(*grid, config.model_dim)
        self._frame_pe = sinusoid(np.arange(config.frames), config.model_dim)[:, None, :]
        self._text_pe = sinusoid(np.arange(config.text_tokens), config.cond_dim)
        alpha_bar = make_schedule(config.max_timestep, config.beta_start, config.beta_end).alpha_bar
        self._out_gain = np.sqrt(alpha_bar)
        self._skip = np.sqrt(1.0 - alpha_bar)

    @classmethod
    def init(cls, config: DenoiserConfig, seed: int = 0, out_scale: float = 0.1) -> "Denoiser":
        """Random init: ``N(0, 1/fan_in)`` weights, zero biases, unit norm gains."""
        stream = RngStream(seed, 0)
        params = {}
        for name, shape in _param_shapes(config):
            leaf = name.rsplit(".", 1)[1]
            if name.endswith(".g"):
                arr = np.ones(shape, dtype=np.float32)
            elif len(shape) == 1:
                arr = np.zeros(shape, dtype=np.float32)
            else:
                scale = 1.0 if name == "text.table" else 1.0 / math.sqrt(shape[0])
                if name == "out.w" or (leaf in ("o", "w2") and name.startswith("blocks.")):
                    scale *= out_scale
                arr = tc.gaussian(shape, stream).data * np.float32(scale)
            params[name] = tc.parameter(arr)
        return cls(config, params)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    # -- conditioning -------------------------------------------------------

    def text_embedding(self, ids: np.ndarray, mask: np.ndarray) -> Tensor:
        """Differentiable lookup: ``(table[ids] + positional) * mask``."""
        emb = tc.add(tc.take(self.params["text.table"], ids), self._text_pe)
        return tc.mul(emb, np.asarray(mask, dtype=np.float32)[..., None])

    def embed_text(self, prompt: str) -> TextCondition:
        if not prompt.strip():
            return self.null_condition()
        ids, mask = tokenize(prompt, self.config)
        return TextCondition(prompt, np.array(self.text_embedding(ids, mask).data), False)

    def null_condition(self) -> TextCondition:
        c = self.config
        return TextCondition("", np.zeros((c.text_tokens, c.cond_dim), dtype=np.float32), True)

    def embed_timestep(self, t) -> Tensor:
        """Sinusoidal encoding of ``t`` passed through a two-layer SiLU MLP; ``(..., D)``."""
        t_arr = np.asarray(t)
        if np.any(t_arr < 0) or np.any(t_arr > self.config.max_timestep):
            raise ValueError(f"timestep out of range 0..{self.config.max_timestep}: {t}")
        p = self.params
        enc = sinusoid(t_arr.reshape(-1), self.config.model_dim)
        h = tc.silu(tc.linear(Tensor._wrap(enc, "sinusoid"), p["time.w1"], p["time.b1"]))
        out = tc.linear(h, p["time.w2"], p["time.b2"])
        return tc.reshape(out, (*t_arr.shape, self.config.model_dim))

    # -- forward ------------------------------------------------------------

    def _patchify(self, z: np.ndarray) -> np.ndarray:
        b, f, ch, h, w = z.shape
        p = self.config.patch
        x = z.reshape(b, f, ch, h // p, p, w // p, p).transpose(0, 1, 3, 5, 2, 4, 6)
        return np.ascontiguousarray(x.reshape(b, f, (h // p) * (w // p), ch * p * p))

    def _unpatchify(self, x: Tensor) -> Tensor:
        c = self.config
        b, f = x.shape[:2]
        p, gh, gw = c.patch, c.height // c.patch, c.width // c.patch
        arr = tc.reshape(x, (b, f, gh, gw, c.channels, p, p))
        # (b, f, gh, gw, ch, p, p) -> (b, f, ch, gh, p, gw, p) as three axis swaps
        arr = tc.swapaxes(arr, 2, 4)  # b f ch gw gh p p
        arr = tc.swapaxes(arr, 3, 4)  # b f ch gh gw p p
        arr = tc.swapaxes(arr, 4, 5)  # b f ch gh p gw p
        return tc.reshape(arr, (b, f, c.channels, c.height, c.width))

    def _weights(self, block: int, kind: str) -> AttentionWeights:
        p = self.params
        pre = f"blocks.{block}.{kind}."
        return AttentionWeights(p[pre + "q"], p[pre + "k"], p[pre + "v"], p[pre + "o"], self.config.head_count)

    def _norm(self, x: Tensor, name: str) -> Tensor:
        return tc.layer_norm(x, self.params[name + ".g"], self.params[name + ".b"])

    def forward(
        self,
        z: np.ndarray | Tensor,
        cond: np.ndarray | Tensor,
        t,
        hooks: Sequence[ControlHook] | None = None,
        capture=None,
    ) -> Tensor:
        """Batched noise prediction.

        ``z``: ``(B, F, C, H, W)``; ``cond``: ``(B, L, Dc)``; ``t``: int or ``(B,)``.
        ``hooks`` holds one :class:`ControlHook` per site (default all vanilla);
        ``capture`` is called with an :class:`AttentionRecord` at every site.
        """
        c = self.config
        zd = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float32)
        if zd.ndim != 5 or zd.shape[2:] != (c.channels, c.height, c.width):
            raise ShapeError(f"latent batch must be (B, F, {c.channels}, {c.height}, {c.width}), got {zd.shape}")
        if zd.shape[1] > c.frames:
            raise ShapeError(f"{zd.shape[1]} frames exceeds configured {c.frames}")
        bsz, frames = zd.shape[:2]
        cond_t = cond if isinstance(cond, Tensor) else Tensor._wrap(np.asarray(cond, dtype=np.float32), "cond")
        if cond_t.shape != (bsz, c.text_tokens, c.cond_dim):
            raise ShapeError(f"condition must be ({bsz}, {c.text_tokens}, {c.cond_dim}), got {cond_t.shape}")
        if hooks is None:
            hooks = [VANILLA] * c.site_count
        if len(hooks) != c.site_count:
            raise ValueError(f"expected {c.site_count} hooks, got {len(hooks)}")
        t_arr = np.broadcast_to(np.asarray(t), (bsz,))

        p = self.params
        x = tc.linear(Tensor._wrap(self._patchify(zd), "patchify"), p["patch_in.w"], p["patch_in.b"])
        x = tc.add(x, self._spatial_pe + self._frame_pe[:frames])
        temb = self.embed_timestep(t_arr)
        x = tc.add(x, tc.reshape(temb, (bsz, 1, 1, c.model_dim)))

        for b in range(c.block_count):
            pre = f"blocks.{b}."
            h = self._norm(x, pre + "norm_self")
            x = tc.add(x, self_attention_block(h, self._weights(b, "self"), hooks[2 * b], capture, 2 * b))
            h = self._norm(x, pre + "norm_cross")
            x = tc.add(x, cross_attention_block(h, cond_t, self._weights(b, "cross"), hooks[2 * b + 1], capture, 2 * b + 1))
            h = self._norm(x, pre + "norm_temporal")
            x = tc.add(x, temporal_attention_block(h, self._weights(b, "temporal")))
            h = self._norm(x, pre + "norm_ff")
            h = tc.silu(tc.linear(h, p[pre + "ff.w1"], p[pre + "ff.b1"]))
            x = tc.add(x, tc.linear(h, p[pre + "ff.w2"], p[pre + "ff.b2"]))

        x = tc.linear(self._norm(x, "final_norm"), p["out.w"], p["out.b"])
        out = self._unpatchify(x)
        if self.config.prediction == "eps":
            return out
        # network errors reach the implied z_0 unamplified, even where ab_t is tiny
        gain = self._out_gain[t_arr].reshape(bsz, 1, 1, 1, 1).astype(np.float32)
        skip = (self._skip[t_arr].reshape(bsz, 1, 1, 1, 1) * zd).astype(np.float32)
        return tc.add(tc.mul(out, gain), skip)

    def denoise(
        self,
        z_t: np.ndarray,
        cond: TextCondition,
        t: int,
        hooks: Sequence[ControlHook] | None = None,
        capture: bool = False,
    ) -> tuple[np.ndarray, CapturedQueries | None]:
        """Single-video ``eps_hat`` for ``z_t`` of shape ``(F, C, H, W)``."""
        if z_t.ndim != 4:
            raise ShapeError(f"expected a (F, C, H, W) latent, got {z_t.shape}")
        captured = CapturedQueries() if capture else None
        eps = self.forward(z_t[None], cond.embedding[None], t, hooks, captured)
        return np.array(eps.data[0]), captured


def site_kind(site: int) -> SiteKind:
    return SiteKind.SELF if site % 2 == 0 else SiteKind.CROSS
