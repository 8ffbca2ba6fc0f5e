"""Command-line entry point: ``train``, ``generate``, ``evaluate``, ``ablate``.

Every command accepts ``--config FILE`` (JSON); explicit flags override values
from the file. Failures exit nonzero with one line on stderr of the form
``error: <category>: <message>``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .diffusion import SamplerConfig
from .io import CheckpointError, emit_report, emit_video, load_checkpoint, read_video
from .metrics import FrameEmbedder, evaluate_video
from .pipeline import AblationSettings, UniCtrlConfig, ablation_config, expand_modes, sample
from .train import TrainConfig, train

log = logging.getLogger("unictrl")


class ConfigError(ValueError):
    pass


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _merge(file_cfg: dict, args: argparse.Namespace, keys) -> dict:
    out = dict(file_cfg)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _sampler_from(cfg: dict) -> SamplerConfig:
    return SamplerConfig(
        steps=int(cfg.get("steps", 25)),
        eta=float(cfg.get("eta", 0.0)),
        guidance=float(cfg.get("guidance", 7.5)),
        T=int(cfg.get("T", 1000)),
        beta_start=float(cfg.get("beta_start", 1e-4)),
        beta_end=float(cfg.get("beta_end", 2e-2)),
    )


def _ctrl_from(cfg: dict) -> UniCtrlConfig | None:
    # any control option implies --unictrl rather than being silently dropped
    controls = ("unictrl", "c", "no_sac", "no_mi", "no_ss", "kv_mismatch", "q_scope", "window")
    if not any(cfg.get(k) is not None and cfg.get(k) is not False for k in controls):
        return None
    return UniCtrlConfig(
        enable_sac=not cfg.get("no_sac", False),
        enable_mi=not cfg.get("no_mi", False),
        enable_ss=not cfg.get("no_ss", False),
        motion_degree=float(cfg.get("c", 1.0)),
        kv_mode="value-only" if cfg.get("kv_mismatch") else "matched",
        q_scope=cfg.get("q_scope", "all"),
        window=cfg.get("window", "early"),
    )


# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _merge(_load_config(args.config), args, ["seed", "out", "steps"])
    config = TrainConfig.from_dict(cfg)
    if not config.out:
        config.out = "checkpoint.uctl"
    t0 = time.perf_counter()
    _, summary = train(config, progress_every=args.log_every)
    print(json.dumps({"checkpoint": config.out, "final_loss": summary["final_loss"],
                      "first_window_mean": summary["first_window_mean"],
                      "last_window_mean": summary["last_window_mean"],
                      "seconds": round(time.perf_counter() - t0, 2)}))
    return 0


def _generate_one(model, ckpt: Path, cfg: dict, out: Path) -> dict:
    sampler = _sampler_from(cfg)
    ctrl = _ctrl_from(cfg)
    seed = int(cfg.get("seed", 0))
    t0 = time.perf_counter()
    video = sample(model, cfg["prompt"], seed, sampler, ctrl)
    elapsed = time.perf_counter() - t0
    manifest = {
        "command": "generate",
        "checkpoint": {"path": str(ckpt), "sha256": _sha256(ckpt)},
        "config": {k: v for k, v in sorted(cfg.items()) if k not in ("out", "config", "workers")},
        **video.manifest,
    }
    emit_video(video.frames, out, manifest)
    # wall-clock time varies run to run; kept apart from the reproducible manifest
    (out / "timing.json").write_text(json.dumps({"sample_seconds": round(elapsed, 4)}) + "\n")
    return manifest


def cmd_generate(args) -> int:
    keys = ["ckpt", "prompt", "seed", "steps", "guidance", "eta", "c", "q_scope", "window"]
    cfg = _merge(_load_config(args.config), args, keys)
    for flag in ("unictrl", "no_sac", "no_mi", "no_ss", "kv_mismatch"):
        if getattr(args, flag):
            cfg[flag] = True
    if "ckpt" not in cfg or "prompt" not in cfg:
        raise ConfigError("generate needs --ckpt and --prompt")
    ckpt = Path(cfg["ckpt"])
    model = load_checkpoint(ckpt)
    out = Path(args.out or cfg.get("out", "video_out"))
    _generate_one(model, ckpt, cfg, out)
    print(json.dumps({"out": str(out)}))
    return 0


def _embedder(kind: str, ckpt: str | None) -> FrameEmbedder:
    if kind == "backbone":
        if not ckpt:
            raise ConfigError("--embedder backbone needs --ckpt")
        return FrameEmbedder("backbone", model=load_checkpoint(ckpt))
    return FrameEmbedder(kind)


def cmd_evaluate(args) -> int:
    frames, manifest = read_video(args.video)
    report = evaluate_video(
        frames,
        _embedder(args.embedder, args.ckpt),
        args.block,
        args.radius,
        seed=manifest.get("seed"),
        mode=manifest.get("mode"),
        config={"embedder": args.embedder, "block": args.block, "radius": args.radius},
    )
    text = json.dumps(report.to_dict(), sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_ablate(args) -> int:
    cfg = _merge(_load_config(args.config), args, ["ckpt", "prompt", "steps", "guidance", "eta", "c"])
    if "ckpt" not in cfg or "prompt" not in cfg:
        raise ConfigError("ablate needs --ckpt and --prompt")
    modes = expand_modes([m.strip() for m in args.modes.split(",") if m.strip()])
    for m in modes:
        ablation_config(m)  # validate before any work
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    ckpt = Path(cfg["ckpt"])
    model = load_checkpoint(ckpt)
    sampler = _sampler_from(cfg)
    settings = AblationSettings(block=args.block, radius=args.radius, c=float(cfg.get("c", 1.0)))
    out = Path(args.out)
    jobs = [(m, s) for m in modes for s in seeds]

    def run(job):
        mode, seed = job
        ctrl, note = ablation_config(mode, settings.c)
        video = sample(model, cfg["prompt"], seed, sampler, ctrl)
        video.manifest["mode"] = mode
        manifest = {"command": "ablate", "checkpoint": {"path": str(ckpt), "sha256": _sha256(ckpt)}, **video.manifest}
        emit_video(video.frames, out / f"{mode}_seed{seed}", manifest)
        return evaluate_video(
            video.frames, settings.embedder, settings.block, settings.radius,
            seed=seed, mode=mode, expectation=note,
            config={"prompt": cfg["prompt"], "unictrl": ctrl.to_dict() if ctrl else None, "sampler": asdict(sampler)},
        )

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        reports = list(pool.map(run, jobs))
    path = emit_report(reports, out / "report.json")
    print(json.dumps({"report": str(path), "runs": len(reports)}))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="unictrl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train the toy denoiser on moving sprites")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--out")
    t.add_argument("--log-every", type=int, default=100)
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="sample one video")
    g.add_argument("--config")
    g.add_argument("--ckpt")
    g.add_argument("--prompt")
    g.add_argument("--seed", type=int)
    g.add_argument("--steps", type=int)
    g.add_argument("--guidance", type=float)
    g.add_argument("--eta", type=float)
    g.add_argument("--unictrl", action="store_true")
    g.add_argument("--c", type=float)
    g.add_argument("--no-sac", action="store_true")
    g.add_argument("--no-mi", action="store_true")
    g.add_argument("--no-ss", action="store_true")
    g.add_argument("--kv-mismatch", action="store_true")
    g.add_argument("--q-scope", choices=["all", "cross"])
    g.add_argument("--window", choices=["early", "late"], help=argparse.SUPPRESS)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("evaluate", help="score a generated video directory")
    e.add_argument("--video", required=True)
    e.add_argument("--embedder", choices=["pixel", "backbone"], default="pixel")
    e.add_argument("--ckpt")
    e.add_argument("--block", type=int, default=4)
    e.add_argument("--radius", type=int, default=4)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help="run ablation modes over seeds")
    a.add_argument("--config")
    a.add_argument("--ckpt")
    a.add_argument("--prompt")
    a.add_argument("--modes", required=True, help="comma list, e.g. baseline,full,no-sac,c-sweep,c=0.4")
    a.add_argument("--seeds", required=True, help="comma list of integers")
    a.add_argument("--out", required=True)
    a.add_argument("--steps", type=int)
    a.add_argument("--guidance", type=float)
    a.add_argument("--eta", type=float)
    a.add_argument("--c", type=float)
    a.add_argument("--block", type=int, default=4)
    a.add_argument("--radius", type=int, default=4)
    a.add_argument("--workers", type=int, default=1)
    a.set_defaults(func=cmd_ablate)
    return p


def _category(exc: BaseException) -> str:
    if isinstance(exc, CheckpointError):
        return "checkpoint"
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, (OSError, FileNotFoundError)):
        return "io"
    if isinstance(exc, (ValueError, TypeError, KeyError)):
        return "invalid-argument"
    if isinstance(exc, FloatingPointError):
        return "numeric"
    return "internal"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        msg = " ".join(str(exc).split())
        print(f"error: {_category(exc)}: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
