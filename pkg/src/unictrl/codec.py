"""Fixed affine latent <-> RGB codec.

``decode``: ``rgb = 0.5 + A z`` per latent cell, nearest-neighbour upsampled by
``scale`` and clamped to ``[0, 1]``. ``encode`` box-averages ``scale x scale``
pixel blocks and applies the pseudo-inverse of ``A``, so
``decode(encode(x)) == x`` for any video that is constant on each block.
"""

from __future__ import annotations

import numpy as np

# rows: R, G, B; columns: latent channels. Full row rank.
MIX = 0.25 * np.array(
    [
        [1.0, 0.0, 0.0, 1.0],
        [0.0, 1.0, 0.0, 1.0],
        [0.0, 0.0, 1.0, 1.0],
    ]
)
UNMIX = np.linalg.pinv(MIX)
SCALE = 4


def decode_latent(z: np.ndarray, scale: int = SCALE) -> np.ndarray:
    """``(F, 4, h, w)`` latent -> ``(F, h*scale, w*scale, 3)`` frames in ``[0, 1]``."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 4 or z.shape[1] != MIX.shape[1]:
        raise ValueError(f"expected (F, {MIX.shape[1]}, h, w) latent, got {z.shape}")
    if not np.isfinite(z).all():
        raise ValueError("latent contains non-finite values")
    rgb = 0.5 + np.einsum("rc,fchw->fhwr", MIX, z)
    rgb = rgb.repeat(scale, axis=1).repeat(scale, axis=2)
    return np.clip(rgb, 0.0, 1.0).astype(np.float32)


def encode_frames(frames: np.ndarray, scale: int = SCALE) -> np.ndarray:
    """``(F, H, W, 3)`` frames -> ``(F, 4, H/scale, W/scale)`` float32 latent."""
    frames = np.asarray(frames, dtype=np.float64)
    f, h, w, _ = frames.shape
    if h % scale or w % scale:
        raise ValueError(f"frame size {h}x{w} not divisible by {scale}")
    pooled = frames.reshape(f, h // scale, scale, w // scale, scale, 3).mean(axis=(2, 4))
    return np.einsum("cr,fhwr->fchw", UNMIX, pooled - 0.5).astype(np.float32)
