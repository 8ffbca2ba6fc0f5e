"""Synthetic moving-sprite videos used to train the toy denoiser."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import SCALE, encode_frames
from .tensor import RngStream

FRAME_SIZE = 64
BACKGROUND = (0.5, 0.5, 0.5)  # encodes to the zero latent
COLORS = {
    "red": (0.95, 0.15, 0.1),
    "green": (0.15, 0.9, 0.2),
    "blue": (0.2, 0.3, 0.95),
    "yellow": (0.95, 0.9, 0.15),
}
SHAPES = ("square", "circle")
DIRECTIONS = {"right": (1, 0), "left": (-1, 0), "down": (0, 1), "up": (0, -1)}


@dataclass(frozen=True)
class SpriteSpec:
    shape: str
    size: int
    color: str
    velocity: tuple[int, int]  # (vx, vy) pixels per frame
    start: tuple[int, int]  # top-left (x, y)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.color not in COLORS:
            raise ValueError(f"unknown color {self.color!r}")
        if not 1 <= self.size <= FRAME_SIZE:
            raise ValueError(f"size {self.size} out of range")

    @property
    def direction(self) -> str:
        vx, vy = self.velocity
        if vx == 0 and vy == 0:
            return "still"
        if abs(vx) >= abs(vy):
            return "right" if vx > 0 else "left"
        return "down" if vy > 0 else "up"

    @property
    def prompt(self) -> str:
        if self.direction == "still":
            return f"{self.color} {self.shape} standing still"
        return f"{self.color} {self.shape} moving {self.direction}"


def _reflect(p: float, span: int) -> int:
    """Fold ``p`` into ``[0, span]`` by bouncing off both ends."""
    if span <= 0:
        return 0
    p = p % (2 * span)
    return int(2 * span - p if p > span else p)


def sprite_positions(spec: SpriteSpec, frames: int, frame_size: int = FRAME_SIZE) -> list[tuple[int, int]]:
    span = frame_size - spec.size
    return [
        (_reflect(spec.start[0] + spec.velocity[0] * f, span), _reflect(spec.start[1] + spec.velocity[1] * f, span))
        for f in range(frames)
    ]


def render_sprite(spec: SpriteSpec, pos: tuple[int, int], frame_size: int = FRAME_SIZE) -> np.ndarray:
    """One ``(H, W, 3)`` frame. The sprite carries a two-slope shading ramp so
    block matching can lock onto its interior, not only its edges."""
    frame = np.empty((frame_size, frame_size, 3), dtype=np.float32)
    frame[:] = BACKGROUND
    s = spec.size
    v, u = np.mgrid[0:s, 0:s].astype(np.float32)
    if spec.shape == "circle":
        r = (s - 1) / 2.0
        inside = (u - r) ** 2 + (v - r) ** 2 <= r * r + 0.25
    else:
        inside = np.ones((s, s), dtype=bool)
    shade = np.float32(0.55) + np.float32(0.30) * u / np.float32(s) + np.float32(0.17) * v / np.float32(s)
    patch = shade[..., None] * np.asarray(COLORS[spec.color], dtype=np.float32)
    x0, y0 = pos
    region = frame[y0 : y0 + s, x0 : x0 + s]
    region[inside] = patch[inside]
    return frame


def generate_sprite_video(spec: SpriteSpec, frames: int = 8) -> tuple[np.ndarray, np.ndarray, str]:
    """Pixel frames ``(F, 64, 64, 3)``, their latent ``(F, 4, 16, 16)`` and the prompt."""
    pix = np.stack([render_sprite(spec, p) for p in sprite_positions(spec, frames)])
    return pix, encode_frames(pix, SCALE), spec.prompt


def random_spec(stream: RngStream, frames: int = 8, speed: int = 2) -> SpriteSpec:
    """A sprite that crosses the frame in one of four directions without bouncing."""
    u = stream.uniform(6)
    shape = SHAPES[int(u[0] * len(SHAPES))]
    color = list(COLORS)[int(u[1] * len(COLORS))]
    dname = list(DIRECTIONS)[int(u[2] * len(DIRECTIONS))]
    size = 12 + int(u[3] * 9)  # 12..20
    dx, dy = DIRECTIONS[dname]
    travel = speed * (frames - 1)
    free = FRAME_SIZE - size

    def start(axis_dir: int, r: float) -> int:
        if axis_dir > 0:
            return int(r * (free - travel + 1))
        if axis_dir < 0:
            return travel + int(r * (free - travel + 1))
        return int(r * (free + 1))

    return SpriteSpec(shape, size, color, (dx * speed, dy * speed), (start(dx, u[4]), start(dy, u[5])))
