import os
import time
from pathlib import Path

import numpy as np
import pytest

from unictrl.io import load_checkpoint
from unictrl.model import Denoiser, DenoiserConfig
from unictrl.train import TrainConfig, train

# small enough that one guided sampling step takes a few milliseconds
TINY = DenoiserConfig(
    frames=4, height=8, width=8, model_dim=16, head_count=2, block_count=2,
    cond_dim=16, text_tokens=8, vocab_size=64,
)


@pytest.fixture(scope="session")
def tiny_model():
    return Denoiser.init(TINY, seed=0, out_scale=1.0)


@pytest.fixture(scope="session")
def default_model():
    return Denoiser.init(DenoiserConfig(), seed=0)


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    """Model trained for 2000 steps at the default config, plus its checkpoint path.

    Set ``UNICTRL_CKPT`` to reuse an existing checkpoint instead of training.
    """
    existing = os.environ.get("UNICTRL_CKPT")
    if existing and Path(existing).exists():
        model = load_checkpoint(existing)
        return model, Path(existing), model.meta.get("manifest", {})
    path = tmp_path_factory.mktemp("ckpt") / "sprites.uctl"
    t0 = time.perf_counter()
    model, summary = train(TrainConfig(steps=2000, seed=0, out=str(path)))
    return model, path, {**summary, "seconds": time.perf_counter() - t0}


def pytest_report_header(config):
    return f"numpy {np.__version__}"


# (criterion number, passed, detail) appended by the acceptance tests
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {num:2d}: {detail}")
