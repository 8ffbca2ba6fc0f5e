"""Baseline and UniCtrl samplers.

UniCtrl runs two branches per sampling step:

* the *motion* branch denoises without any attention control and hands its
  per-site queries ``Q_m`` to
* the *output* branch, whose self-attention uses frame 0's keys/values (SAC)
  and whose queries are replaced by ``Q_m`` while the step is inside the
  injection window (MI).

With spatiotemporal synchronization (SS) the motion latent is overwritten by
the output latent at the top of every step, so the motion branch's own DDIM
update is skipped.

Both classifier-free-guidance passes (conditional, unconditional) run as one
batch of two; hooks and query caches therefore cover both passes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .attention import ControlHook, KVSource, SiteKind
from .codec import decode_latent
from .diffusion import SamplerConfig, cfg_combine, ddim_step, make_schedule
from .metrics import FrameEmbedder, MetricReport, evaluate_video
from .model import CapturedQueries, Denoiser, site_kind
from .tensor import RngStream, gaussian

INJECTION_EPS = 1e-9


@dataclass(frozen=True)
class UniCtrlConfig:
    enable_sac: bool = True
    motion_degree: float = 1.0
    enable_ss: bool = True
    enable_mi: bool = True
    q_scope: str = "all"  # "all" | "cross"
    kv_mode: str = "matched"  # "matched" | "value-only"
    window: str = "early"  # "early" (inject while tau >= (1-c)T) | "late" (debug)

    def __post_init__(self):
        if not 0.0 <= self.motion_degree <= 1.0:
            raise ValueError(f"motion degree c must lie in [0, 1], got {self.motion_degree}")
        if self.q_scope not in ("all", "cross"):
            raise ValueError(f"q_scope must be 'all' or 'cross', got {self.q_scope!r}")
        if self.kv_mode not in ("matched", "value-only"):
            raise ValueError(f"kv_mode must be 'matched' or 'value-only', got {self.kv_mode!r}")
        if self.kv_mode == "value-only" and not self.enable_sac:
            raise ValueError("value-only K/V mismatch requires SAC")
        if self.window not in ("early", "late"):
            raise ValueError(f"window must be 'early' or 'late', got {self.window!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def motion_injection_active(tau_n: int, c: float, T: int, window: str = "early") -> bool:
    """True iff ``tau_n >= (1 - c) T`` (boundary inclusive).

    ``window="late"`` gives the opposite reading, ``tau_n <= (1 - c) T``; it is
    only meant for comparison runs.
    """
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"c must lie in [0, 1], got {c}")
    if not 0 <= tau_n <= T:
        raise ValueError(f"tau_n must lie in [0, {T}], got {tau_n}")
    threshold = (1.0 - c) * T
    # tolerance absorbs the rounding of (1 - c) for decimal c such as 0.8
    if window == "late":
        return tau_n <= threshold + INJECTION_EPS * T
    return tau_n >= threshold - INJECTION_EPS * T


@dataclass
class GeneratedVideo:
    frames: np.ndarray  # (F, H_px, W_px, 3) in [0, 1]
    latent: np.ndarray  # final latent (F, C, H, W)
    manifest: dict
    trajectory: list[np.ndarray] | None = None


@dataclass
class StepState:
    """Handed to an observer at the top of each step (after synchronization)."""

    n: int
    tau: int
    z_out: np.ndarray
    z_motion: np.ndarray | None


def _output_hooks(model: Denoiser, ctrl: UniCtrlConfig, captured: CapturedQueries | None) -> list[ControlHook]:
    hooks = []
    for site in range(model.config.site_count):
        kind = site_kind(site)
        kv = KVSource.OWN
        if kind is SiteKind.SELF and ctrl.enable_sac:
            kv = KVSource.FIRST_FRAME_VALUE if ctrl.kv_mode == "value-only" else KVSource.FIRST_FRAME
        q = None
        if captured is not None and (kind is SiteKind.CROSS or ctrl.q_scope == "all"):
            q = captured[site].q
        hooks.append(ControlHook(kv, q))
    return hooks


def _guided_eps(model, z, conds, t, w, hooks=None, capture=None) -> np.ndarray:
    eps = model.forward(np.stack([z, z]), conds, t, hooks, capture).data
    return cfg_combine(eps[0], eps[1], w)


def sample(
    model: Denoiser,
    prompt: str,
    seed: int,
    sampler: SamplerConfig = SamplerConfig(),
    ctrl: UniCtrlConfig | None = None,
    *,
    init_latent: np.ndarray | None = None,
    start_step: int = 0,
    keep_trajectory: bool = False,
    observer: Callable[[StepState], None] | None = None,
) -> GeneratedVideo:
    """CFG-guided DDIM sampling; ``ctrl=None`` is the uncontrolled baseline.

    Noise comes from counter-based streams keyed by ``seed``: counter 0 is the
    initial latent, counter ``n + 1`` the stochastic term of step ``n``
    (shared by both branches). ``init_latent``/``start_step`` resume a run
    from the latent at the top of step ``start_step``.
    """
    cfg = model.config
    schedule = make_schedule(sampler.T, sampler.beta_start, sampler.beta_end)
    trained = (cfg.max_timestep, cfg.beta_start, cfg.beta_end)
    if trained != (sampler.T, sampler.beta_start, sampler.beta_end):
        raise ValueError(f"model trained with schedule (T, beta_start, beta_end)={trained}, sampler uses "
                         f"{(sampler.T, sampler.beta_start, sampler.beta_end)}")
    taus = sampler.taus
    if not 0 <= start_step < sampler.steps:
        raise ValueError(f"start_step {start_step} out of range")
    conds = np.stack([model.embed_text(prompt).embedding, model.null_condition().embedding])

    if init_latent is None:
        if start_step:
            raise ValueError("resuming needs init_latent")
        z_out = np.array(gaussian(cfg.latent_shape, RngStream(seed, 0)).data)
    else:
        z_out = np.array(init_latent, dtype=np.float32)
        if z_out.shape != cfg.latent_shape:
            raise ValueError(f"init_latent shape {z_out.shape} != {cfg.latent_shape}")
    z_mot = z_out.copy() if ctrl is not None else None

    log = []
    trajectory = [z_out.copy()] if keep_trajectory else None
    for n in range(start_step, sampler.steps):
        t, t_prev = taus[n], taus[n + 1]
        entry = {"step": n, "tau": t, "injected": False, "motion_branch": False}
        if ctrl is not None and ctrl.enable_ss:
            z_mot = z_out.copy()
            entry["synced"] = True
        if observer is not None:
            observer(StepState(n, t, z_out, z_mot))

        sigma = schedule.sigma(t, t_prev, sampler.eta)
        noise = np.array(gaussian(cfg.latent_shape, RngStream(seed, n + 1)).data) if sigma > 0 else None

        if ctrl is None:
            eps_out = _guided_eps(model, z_out, conds, t, sampler.guidance)
        else:
            inject = ctrl.enable_mi and motion_injection_active(t, ctrl.motion_degree, sampler.T, ctrl.window)
            run_motion = ctrl.enable_mi and (inject or not ctrl.enable_ss)
            captured = None
            if run_motion:
                captured = CapturedQueries()
                eps_mot = _guided_eps(model, z_mot, conds, t, sampler.guidance, capture=captured)
                if not ctrl.enable_ss:
                    z_mot = ddim_step(z_mot, eps_mot, t, t_prev, schedule, noise, sampler.eta)
            hooks = _output_hooks(model, ctrl, captured if inject else None)
            own = CapturedQueries() if inject else None
            eps_out = _guided_eps(model, z_out, conds, t, sampler.guidance, hooks, own)
            entry.update(injected=inject, motion_branch=run_motion)
            if inject:
                # how far the injected queries are from the ones the output branch computed
                entry["q_divergence"] = [float(np.abs(m.q - o.q).max()) for m, o in zip(captured.records, own.records)]
        z_out = ddim_step(z_out, eps_out, t, t_prev, schedule, noise, sampler.eta)
        log.append(entry)
        if keep_trajectory:
            trajectory.append(z_out.copy())

    manifest = {
        "prompt": prompt,
        "seed": seed,
        "sampler": asdict(sampler),
        "unictrl": ctrl.to_dict() if ctrl is not None else None,
        "model": cfg.to_dict(),
        "taus": taus,
        "start_step": start_step,
        "injection_log": log,
    }
    return GeneratedVideo(decode_latent(z_out), z_out, manifest, trajectory)


def sample_baseline(model: Denoiser, prompt: str, seed: int, sampler: SamplerConfig = SamplerConfig(), **kw) -> GeneratedVideo:
    return sample(model, prompt, seed, sampler, None, **kw)


def sample_unictrl(
    model: Denoiser,
    prompt: str,
    seed: int,
    sampler: SamplerConfig = SamplerConfig(),
    ctrl: UniCtrlConfig = UniCtrlConfig(),
    **kw,
) -> GeneratedVideo:
    return sample(model, prompt, seed, sampler, ctrl, **kw)


# ---------------------------------------------------------------------------
# ablations

_MODES = {
    "baseline": (None, "reference"),
    "full": (UniCtrlConfig(), "consistency above baseline, motion near baseline"),
    "no-sac": (UniCtrlConfig(enable_sac=False), "identical to baseline"),
    "no-mi": (UniCtrlConfig(enable_mi=False), "max consistency, min motion"),
    "no-ss": (UniCtrlConfig(enable_ss=False), "consistency near baseline, motion slightly reduced"),
    "only-sac": (UniCtrlConfig(enable_mi=False, enable_ss=False), "expected: max consistency, min motion"),
    "only-mi": (UniCtrlConfig(enable_sac=False, enable_ss=False), "identical to baseline"),
    "only-ss": (UniCtrlConfig(enable_sac=False, enable_mi=False), "identical to baseline"),
    "kv-mismatch": (UniCtrlConfig(kv_mode="value-only"), "consistency below matched K/V"),
}
ABLATION_MODES = tuple(_MODES)
DEFAULT_C_SWEEP = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
# one prompt per colour and direction; seed sweeps cycle through them
DEFAULT_PROMPTS = (
    "red square moving right",
    "blue circle moving down",
    "green square moving left",
    "yellow circle moving up",
)


def ablation_config(mode: str, c: float = 1.0) -> tuple[UniCtrlConfig | None, str]:
    """``UniCtrlConfig`` (``None`` for baseline) and expected behaviour for ``mode``.

    ``mode`` is one of :data:`ABLATION_MODES` or ``"c=<value>"`` for a full
    UniCtrl run at motion degree ``value``. ``c`` sets the degree for the other
    modes that inject.
    """
    if mode.startswith("c="):
        try:
            value = float(mode[2:])
        except ValueError:
            raise ValueError(f"bad c-sweep mode {mode!r}") from None
        return UniCtrlConfig(motion_degree=value), "consistency falls and motion rises as c grows"
    if mode not in _MODES:
        raise ValueError(f"unknown ablation mode {mode!r}; expected one of {', '.join(ABLATION_MODES)} or c=<value>")
    ctrl, note = _MODES[mode]
    if ctrl is not None and ctrl.enable_mi:
        ctrl = replace(ctrl, motion_degree=c)
    return ctrl, note


def expand_modes(modes, c_values=DEFAULT_C_SWEEP) -> list[str]:
    """Replace ``"c-sweep"`` by one ``"c=<value>"`` entry per value."""
    out = []
    for m in modes:
        if m == "c-sweep":
            out += [f"c={v:g}" for v in c_values]
        else:
            out.append(m)
    return out


@dataclass
class AblationSettings:
    embedder: FrameEmbedder = field(default_factory=FrameEmbedder)
    block: int = 4
    radius: int = 4
    c: float = 1.0


def ablation_run(
    model: Denoiser,
    prompt: str,
    seed: int,
    sampler: SamplerConfig,
    modes,
    c_values=DEFAULT_C_SWEEP,
    settings: AblationSettings | None = None,
) -> list[tuple[GeneratedVideo, MetricReport]]:
    settings = settings or AblationSettings()
    results = []
    for mode in expand_modes(modes, c_values):
        ctrl, note = ablation_config(mode, settings.c)
        video = sample(model, prompt, seed, sampler, ctrl)
        video.manifest["mode"] = mode
        report = evaluate_video(
            video.frames,
            settings.embedder,
            settings.block,
            settings.radius,
            seed=seed,
            mode=mode,
            expectation=note,
            config={"prompt": prompt, "unictrl": ctrl.to_dict() if ctrl else None, "sampler": asdict(sampler)},
        )
        results.append((video, report))
    return results
