"""Checkpoint files, video artifacts and metric reports.

Checkpoint layout (all integers little-endian)::

    b"UCTL" | u32 format version | u32 header length | header JSON | payload

The header JSON holds the model config, an optional manifest, and a parameter
table of ``{name, shape, offset}`` entries; offsets are byte offsets into the
payload, which stores float32 little-endian values. Entries must tile the
payload exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

from . import __version__
from .metrics import MetricReport
from .model import Denoiser, DenoiserConfig
from .tensor import parameter

MAGIC = b"UCTL"
FORMAT_VERSION = 1
GIF_FPS = 8


class CheckpointError(Exception):
    pass


class NotACheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointIntegrityError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def encode_checkpoint(model: Denoiser, manifest: dict | None = None) -> bytes:
    table, chunks, offset = [], [], 0
    for name, p in model.params.items():
        raw = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        table.append({"name": name, "shape": list(p.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = {"config": model.config.to_dict(), "manifest": manifest or {}, "params": table, "payload_bytes": offset}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(hbytes)) + hbytes + b"".join(chunks)


def decode_checkpoint(blob: bytes) -> Denoiser:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise NotACheckpointError("not a checkpoint: bad magic bytes")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    if len(blob) < 12 + hlen:
        raise TruncatedCheckpointError("checkpoint truncated inside header")
    try:
        header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointIntegrityError(f"unreadable checkpoint header: {exc}") from exc
    payload = blob[12 + hlen :]
    declared = header["payload_bytes"]
    entries = sorted(header["params"], key=lambda e: e["offset"])
    pos = 0
    for e in entries:
        if e["offset"] != pos:
            kind = "overlap" if e["offset"] < pos else "gap"
            raise CheckpointIntegrityError(f"parameter table {kind} at {e['name']} (offset {e['offset']}, expected {pos})")
        pos += 4 * int(np.prod(e["shape"], dtype=np.int64))
    if pos != declared:
        raise CheckpointIntegrityError(f"parameter table covers {pos} bytes, header declares {declared}")
    if len(payload) < declared:
        raise TruncatedCheckpointError(f"payload has {len(payload)} bytes, expected {declared}")
    if len(payload) > declared:
        raise CheckpointIntegrityError(f"{len(payload) - declared} trailing bytes after payload")
    params = {}
    for e in header["params"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=e["offset"]).astype(np.float32).reshape(e["shape"])
        params[e["name"]] = parameter(arr)
    model = Denoiser(DenoiserConfig.from_dict(header["config"]), params)
    model.meta = {"manifest": header.get("manifest", {})}
    return model


def save_checkpoint(model: Denoiser, path, manifest: dict | None = None) -> Path:
    path = Path(path)
    if manifest is None:
        manifest = getattr(model, "meta", {}).get("manifest", {})
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(model, manifest))
    return path


def load_checkpoint(path) -> Denoiser:
    return decode_checkpoint(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# videos


def to_uint8(frames: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(frames, 0.0, 1.0) * 255.0).astype(np.uint8)


def _write_png(img: Image.Image, path: Path) -> None:
    with open(path, "wb") as fh:
        img.save(fh, format="PNG", optimize=False)


def emit_video(frames: np.ndarray, out_dir, manifest: dict) -> list[Path]:
    """Write ``frame_###.png``, ``grid.png``, ``video.gif`` and ``manifest.json``.

    ``manifest`` must be JSON-serializable and free of run-to-run noise
    (timings belong elsewhere) so that repeated runs produce identical bytes.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        pix = to_uint8(frames)
        paths = []
        images = [Image.fromarray(f, mode="RGB") for f in pix]
        for i, img in enumerate(images):
            p = out / f"frame_{i:03d}.png"
            _write_png(img, p)
            paths.append(p)
        grid = Image.fromarray(np.concatenate(list(pix), axis=1), mode="RGB")
        _write_png(grid, out / "grid.png")
        paths.append(out / "grid.png")
        gif = out / "video.gif"
        with open(gif, "wb") as fh:
            images[0].save(fh, format="GIF", save_all=True, append_images=images[1:], duration=1000 // GIF_FPS, loop=0)
        paths.append(gif)
        man = {
            **manifest,
            "artifacts": [p.name for p in paths] + ["manifest.json"],
            "tool_version": __version__,
        }
        (out / "manifest.json").write_text(_dumps(man) + "\n")
        paths.append(out / "manifest.json")
    except OSError as exc:
        raise OSError(f"cannot write video artifacts to {out}: {exc.strerror or exc}") from exc
    return paths


def read_video(video_dir) -> tuple[np.ndarray, dict]:
    """Frames (uint8) and manifest from a directory written by :func:`emit_video`."""
    d = Path(video_dir)
    files = sorted(d.glob("frame_*.png"))
    if not files:
        raise FileNotFoundError(f"no frame_*.png files in {d}")
    frames = np.stack([np.asarray(Image.open(f).convert("RGB")) for f in files])
    man_path = d / "manifest.json"
    manifest = json.loads(man_path.read_text()) if man_path.exists() else {}
    return frames, manifest


# ---------------------------------------------------------------------------
# reports


def aggregate_reports(reports: Iterable[MetricReport]) -> dict:
    """Per-mode mean and population standard deviation of both scores."""
    groups: dict[str, list[MetricReport]] = {}
    for r in reports:
        groups.setdefault(r.mode or "default", []).append(r)
    out = {}
    for mode, rs in groups.items():
        cons = np.array([r.consistency_score for r in rs], dtype=np.float64)
        mot = np.array([r.motion_score for r in rs], dtype=np.float64)
        out[mode] = {
            "runs": len(rs),
            "seeds": [r.seed for r in rs],
            "consistency_mean": float(cons.mean()),
            "consistency_std": float(cons.std()),
            "motion_mean": float(mot.mean()),
            "motion_std": float(mot.std()),
            "expectation": rs[0].expectation,
        }
    return out


def emit_report(reports: list[MetricReport], path) -> Path:
    if not reports:
        raise ValueError("no reports to write")
    doc = {"runs": [r.to_dict() for r in reports], "modes": aggregate_reports(reports), "tool_version": __version__}
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(_dumps(doc) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror or exc}") from exc
    return path
