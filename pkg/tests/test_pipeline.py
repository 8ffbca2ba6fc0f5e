from dataclasses import replace

import numpy as np
import pytest

from unictrl.diffusion import SamplerConfig
from unictrl.model import Denoiser
from unictrl.pipeline import (
    ABLATION_MODES,
    UniCtrlConfig,
    ablation_config,
    ablation_run,
    expand_modes,
    motion_injection_active,
    sample,
    sample_baseline,
    sample_unictrl,
)

from .conftest import TINY
from .oracles import injected_steps_exact

FAST = SamplerConfig(steps=10)


def test_injection_window_examples():
    assert all(motion_injection_active(t, 1.0, 1000) for t in range(0, 1001, 40))
    assert motion_injection_active(1000, 0.0, 1000)
    assert not motion_injection_active(999, 0.0, 1000)
    assert motion_injection_active(600, 0.4, 1000) and motion_injection_active(1000, 0.4, 1000)
    assert not motion_injection_active(599, 0.4, 1000)


@pytest.mark.parametrize("c", [0.0, 0.1, 0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 0.9, 1.0])
def test_injection_window_matches_exact_threshold(c):
    taus = SamplerConfig().taus
    got = {n for n in range(25) if motion_injection_active(taus[n], c, 1000)}
    assert got == injected_steps_exact(c, 1000, 25)


def test_injection_window_validation():
    with pytest.raises(ValueError):
        motion_injection_active(10, 1.5, 1000)
    with pytest.raises(ValueError):
        motion_injection_active(1001, 0.5, 1000)


def test_config_validation():
    with pytest.raises(ValueError):
        UniCtrlConfig(motion_degree=-0.1)
    with pytest.raises(ValueError):
        UniCtrlConfig(enable_sac=False, kv_mode="value-only")
    with pytest.raises(ValueError):
        UniCtrlConfig(q_scope="self")


# -- sampling ---------------------------------------------------------------


def test_same_seed_bit_exact_and_seeds_differ(tiny_model):
    a = sample_baseline(tiny_model, "red square moving right", 1, FAST)
    b = sample_baseline(tiny_model, "red square moving right", 1, FAST)
    c = sample_baseline(tiny_model, "red square moving right", 2, FAST)
    np.testing.assert_array_equal(a.latent, b.latent)
    assert a.frames.shape == (TINY.frames, 32, 32, 3)
    assert not np.array_equal(a.latent, c.latent)


def test_untrained_full_model_stays_finite(default_model):
    video = sample_baseline(default_model, "green circle moving up", 0, SamplerConfig(steps=8))
    assert np.isfinite(video.frames).all()
    assert video.frames.min() >= 0 and video.frames.max() <= 1


def test_stochastic_sampler_is_seeded(tiny_model):
    cfg = SamplerConfig(steps=6, eta=1.0)
    a = sample_unictrl(tiny_model, "x", 3, cfg, UniCtrlConfig(enable_ss=False))
    b = sample_unictrl(tiny_model, "x", 3, cfg, UniCtrlConfig(enable_ss=False))
    np.testing.assert_array_equal(a.latent, b.latent)


def test_ss_keeps_branches_synchronized(tiny_model):
    seen = []

    def observe(state):
        seen.append(state.n)
        assert state.z_motion is not state.z_out
        np.testing.assert_array_equal(state.z_motion, state.z_out)

    sample_unictrl(tiny_model, "blue circle", 4, FAST, UniCtrlConfig(motion_degree=0.6), observer=observe)
    assert seen == list(range(FAST.steps))


def test_without_ss_motion_branch_drifts(tiny_model):
    gaps = []
    sample_unictrl(
        tiny_model, "blue circle", 4, FAST, UniCtrlConfig(enable_ss=False),
        observer=lambda s: gaps.append(float(np.abs(s.z_motion - s.z_out).max())),
    )
    assert gaps[0] == 0.0 and max(gaps[1:]) > 0


def test_sac_off_full_injection_equals_baseline(tiny_model):
    base = sample_baseline(tiny_model, "red square", 5, FAST)
    ctrl = sample_unictrl(tiny_model, "red square", 5, FAST, UniCtrlConfig(enable_sac=False, motion_degree=1.0))
    np.testing.assert_array_equal(base.latent, ctrl.latent)


def test_single_frame_unictrl_equals_baseline(tiny_model):
    one = Denoiser(replace(TINY, frames=1), tiny_model.params)
    base = sample_baseline(one, "red square", 5, FAST)
    ctrl = sample_unictrl(one, "red square", 5, FAST, UniCtrlConfig())
    np.testing.assert_array_equal(base.latent, ctrl.latent)


def test_no_mi_matches_c_zero_after_boundary_step(tiny_model):
    c0 = sample_unictrl(tiny_model, "red square", 6, FAST, UniCtrlConfig(motion_degree=0.0), keep_trajectory=True)
    log = c0.manifest["injection_log"]
    assert [e["injected"] for e in log] == [True] + [False] * (FAST.steps - 1)
    resumed = sample_unictrl(
        tiny_model, "red square", 6, FAST, UniCtrlConfig(enable_mi=False),
        init_latent=c0.trajectory[1], start_step=1,
    )
    np.testing.assert_array_equal(resumed.latent, c0.latent)


@pytest.mark.parametrize("mode", ["only-mi", "only-ss", "no-sac"])
def test_modes_without_sac_equal_baseline(tiny_model, mode):
    base = sample_baseline(tiny_model, "yellow square", 7, FAST)
    ctrl, _ = ablation_config(mode)
    np.testing.assert_array_equal(sample(tiny_model, "yellow square", 7, FAST, ctrl).latent, base.latent)


def test_sac_changes_output(tiny_model):
    base = sample_baseline(tiny_model, "yellow square", 7, FAST)
    full = sample_unictrl(tiny_model, "yellow square", 7, FAST, UniCtrlConfig())
    assert not np.array_equal(base.latent, full.latent)


def test_manifest_records_injection(tiny_model):
    video = sample_unictrl(tiny_model, "red square", 1, FAST, UniCtrlConfig(motion_degree=0.5))
    m = video.manifest
    assert m["seed"] == 1 and m["prompt"] == "red square" and m["taus"] == FAST.taus
    injected = [e["step"] for e in m["injection_log"] if e["injected"]]
    assert injected == sorted(injected_steps_exact(0.5, 1000, FAST.steps))
    for e in m["injection_log"]:
        assert e["synced"] is True
        if e["injected"]:
            assert len(e["q_divergence"]) == TINY.site_count
            assert e["q_divergence"][0] == 0.0  # first site sees identical inputs in both branches


def test_cross_scope_injects_only_cross_sites(tiny_model):
    video = sample_unictrl(tiny_model, "red square", 1, FAST, UniCtrlConfig(q_scope="cross"))
    assert np.isfinite(video.latent).all()
    # with SAC off, injecting only cross-attention queries is still a no-op
    base = sample_baseline(tiny_model, "red square", 1, FAST)
    nosac = sample_unictrl(tiny_model, "red square", 1, FAST, UniCtrlConfig(enable_sac=False, q_scope="cross"))
    np.testing.assert_array_equal(base.latent, nosac.latent)


def test_kv_mismatch_differs_from_matched(tiny_model):
    a = sample_unictrl(tiny_model, "red square", 1, FAST, UniCtrlConfig())
    b = sample_unictrl(tiny_model, "red square", 1, FAST, UniCtrlConfig(kv_mode="value-only"))
    assert not np.array_equal(a.latent, b.latent)


def test_sampler_rejects_mismatched_horizon(tiny_model):
    with pytest.raises(ValueError):
        sample_baseline(tiny_model, "x", 0, SamplerConfig(T=500, steps=5))
    with pytest.raises(ValueError):
        sample_baseline(tiny_model, "x", 0, FAST, start_step=2)


# -- ablations --------------------------------------------------------------


def test_ablation_modes_known():
    assert set(ABLATION_MODES) >= {"full", "no-sac", "no-mi", "no-ss", "only-sac", "only-mi", "only-ss", "kv-mismatch"}
    ctrl, note = ablation_config("only-sac")
    assert ctrl.enable_sac and not ctrl.enable_mi and "max consistency" in note
    assert ablation_config("baseline")[0] is None
    assert ablation_config("c=0.3")[0].motion_degree == 0.3
    with pytest.raises(ValueError):
        ablation_config("bogus")
    assert expand_modes(["full", "c-sweep"], (0, 0.5, 1)) == ["full", "c=0", "c=0.5", "c=1"]


def test_ablation_run_sweep_shares_seed(tiny_model):
    results = ablation_run(tiny_model, "red square", 9, SamplerConfig(steps=4), ["c-sweep"], c_values=(0.0, 0.5, 1.0))
    assert [r.mode for _, r in results] == ["c=0", "c=0.5", "c=1"]
    assert {v.manifest["seed"] for v, _ in results} == {9}
    assert all(r.seed == 9 and r.expectation for _, r in results)
