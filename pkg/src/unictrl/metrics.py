"""Frame-consistency and motion-magnitude scores for generated videos.

Consistency: cosine similarity between the features of frame 0 and each later
frame, averaged. Motion: exhaustive SAD block-matching flow between consecutive
frames, the mean displacement magnitude per pair, averaged over pairs.

Frames are ``(F, H, W, 3)`` arrays in ``[0, 1]`` (or ``uint8``).
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .codec import encode_frames

if TYPE_CHECKING:
    from .model import Denoiser


def _check_video(frames: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise ValueError(f"expected (F, H, W, C) frames, got shape {frames.shape}")
    if frames.shape[0] < 2:
        raise ValueError(f"need at least 2 frames, got {frames.shape[0]}")
    return frames


def to_float(frames: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames)
    if frames.dtype == np.uint8:
        return frames.astype(np.float64) / 255.0
    return frames.astype(np.float64)


def to_levels(frames: np.ndarray) -> np.ndarray:
    """Quantize to integer 8-bit levels (what a PNG round trip stores).

    Integer input is taken to be levels already.
    """
    frames = np.asarray(frames)
    if np.issubdtype(frames.dtype, np.integer):
        return frames.astype(np.int64)
    return np.rint(np.clip(frames, 0.0, 1.0) * 255.0).astype(np.int64)


# ---------------------------------------------------------------------------
# consistency


@dataclass
class FrameEmbedder:
    """Maps a video to one feature vector per frame.

    ``pixel``: box-filter each frame to ``grid x grid x 3``, flatten, subtract
    the vector's mean. ``backbone``: encode to latent, apply the denoiser's
    patch embedding, flatten, subtract the mean.
    """

    kind: str = "pixel"
    grid: int = 8
    model: "Denoiser | None" = None

    def __post_init__(self):
        if self.kind not in ("pixel", "backbone"):
            raise ValueError(f"unknown embedder kind {self.kind!r}")
        if self.kind == "backbone" and self.model is None:
            raise ValueError("backbone embedder needs a model")

    def __call__(self, frames: np.ndarray) -> np.ndarray:
        x = to_float(frames)
        f, h, w, ch = x.shape
        if self.kind == "pixel":
            if h % self.grid or w % self.grid:
                raise ValueError(f"frame size {h}x{w} not divisible by grid {self.grid}")
            feats = x.reshape(f, self.grid, h // self.grid, self.grid, w // self.grid, ch).mean(axis=(2, 4))
        else:
            model = self.model
            z = encode_frames(x)[None]
            tokens = model._patchify(z)[0].astype(np.float64)
            feats = tokens @ model.params["patch_in.w"].data.astype(np.float64)
        feats = feats.reshape(f, -1)
        return feats - feats.mean(axis=1, keepdims=True)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; two zero vectors count as identical (1.0), one as 0.0."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = float(a @ a), float(b @ b)
    if na == 0.0 or nb == 0.0:
        return 1.0 if na == nb else 0.0
    # sqrt(na * nb) rather than sqrt(na) * sqrt(nb): exact 1.0 for a == b
    return float(np.clip((a @ b) / np.sqrt(na * nb), -1.0, 1.0))


def consistency_per_frame(frames: np.ndarray, embedder: FrameEmbedder | None = None) -> list[float]:
    frames = _check_video(frames)
    feats = (embedder or FrameEmbedder())(frames)
    return [cosine(feats[0], feats[i]) for i in range(1, len(feats))]


def consistency_score(frames: np.ndarray, embedder: FrameEmbedder | None = None) -> float:
    scores = consistency_per_frame(frames, embedder)
    return float(np.mean(scores))


def consecutive_consistency(frames: np.ndarray, embedder: FrameEmbedder | None = None) -> float:
    """Alternative reading: mean cosine over consecutive frame pairs."""
    frames = _check_video(frames)
    feats = (embedder or FrameEmbedder())(frames)
    return float(np.mean([cosine(feats[i - 1], feats[i]) for i in range(1, len(feats))]))


# ---------------------------------------------------------------------------
# motion


@dataclass
class FlowField:
    """Per-block displacement ``(dx, dy)`` in pixels; ``valid`` marks interior
    blocks whose whole search window lies inside the frame."""

    dx: np.ndarray
    dy: np.ndarray
    valid: np.ndarray
    block: int
    radius: int

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.dx, self.dy)


def _candidates(radius: int) -> list[tuple[int, int]]:
    offs = itertools.product(range(-radius, radius + 1), repeat=2)
    # tie-break: smallest |d|, then lexicographic (dy, dx)
    return sorted(offs, key=lambda d: (d[0] * d[0] + d[1] * d[1], d[0], d[1]))


def block_matching_flow(a: np.ndarray, b: np.ndarray, block: int = 4, radius: int = 4) -> FlowField:
    """For each ``block x block`` block of ``a``, the offset within ``+-radius``
    whose block in ``b`` has the smallest sum of absolute differences."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    h, w = a.shape[:2]
    if block < 1 or h % block or w % block:
        raise ValueError(f"block {block} does not divide frame {h}x{w}")
    if radius < 0 or radius >= min(h, w):
        raise ValueError(f"radius {radius} must be in [0, {min(h, w)})")
    la = to_levels(a).reshape(h, w, -1)
    lb = to_levels(b).reshape(h, w, -1)
    by, bx = h // block, w // block
    pb = np.pad(lb, ((radius, radius), (radius, radius), (0, 0)))
    a_blocks = la.reshape(by, block, bx, block, -1)

    best = np.full((by, bx), np.iinfo(np.int64).max, dtype=np.int64)
    best_dy = np.zeros((by, bx), dtype=np.int64)
    best_dx = np.zeros((by, bx), dtype=np.int64)
    for dy, dx in _candidates(radius):
        shifted = pb[radius + dy : radius + dy + h, radius + dx : radius + dx + w]
        sad = np.abs(a_blocks - shifted.reshape(by, block, bx, block, -1)).sum(axis=(1, 3, 4))
        better = sad < best
        best = np.where(better, sad, best)
        best_dy = np.where(better, dy, best_dy)
        best_dx = np.where(better, dx, best_dx)

    ys = np.arange(by) * block
    xs = np.arange(bx) * block
    vy = (ys >= radius) & (ys + block + radius <= h)
    vx = (xs >= radius) & (xs + block + radius <= w)
    return FlowField(best_dx, best_dy, vy[:, None] & vx[None, :], block, radius)


def motion_per_pair(frames: np.ndarray, block: int = 4, radius: int = 4) -> list[float]:
    frames = _check_video(frames)
    scores = []
    for i in range(1, len(frames)):
        flow = block_matching_flow(frames[i - 1], frames[i], block, radius)
        scores.append(float(flow.magnitude[flow.valid].mean()))
    return scores


def motion_score(frames: np.ndarray, block: int = 4, radius: int = 4) -> float:
    return float(np.mean(motion_per_pair(frames, block, radius)))


# ---------------------------------------------------------------------------
# report


@dataclass
class MetricReport:
    consistency_score: float
    motion_score: float
    per_frame_consistency: list[float]
    per_pair_motion: list[float]
    consecutive_consistency: float
    seed: int | None = None
    mode: str | None = None
    expectation: str | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_video(
    frames: np.ndarray,
    embedder: FrameEmbedder | None = None,
    block: int = 4,
    radius: int = 4,
    **meta,
) -> MetricReport:
    embedder = embedder or FrameEmbedder()
    per_frame = consistency_per_frame(frames, embedder)
    per_pair = motion_per_pair(frames, block, radius)
    return MetricReport(
        consistency_score=float(np.mean(per_frame)),
        motion_score=float(np.mean(per_pair)),
        per_frame_consistency=per_frame,
        per_pair_motion=per_pair,
        consecutive_consistency=consecutive_consistency(frames, embedder),
        **meta,
    )
