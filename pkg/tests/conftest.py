import numpy as np
import pytest

from sslv3.backbone import BackboneConfig, ClipSpec
from sslv3.heads import HeadConfig
from sslv3.model import ModelConfig, init_model

TINY = ClipSpec(T=8, H=16, W=16, t=2, h=4, w=4, d=16)


def tiny_model(vqa_mode="full", **backbone):
    kw = dict(spatial_layers=1, temporal_layers=1, heads=2, mlp_ratio=2)
    kw.update(backbone)
    return ModelConfig(TINY, BackboneConfig(**kw), HeadConfig(vqa_mode=vqa_mode))


def perturbed(store, rng, scale=0.1):
    """Move every parameter off its neutral initialisation so all paths carry signal."""
    for _, t in store.items():
        t.data = t.data + scale * rng.standard_normal(t.shape)
    return store


@pytest.fixture
def cfg():
    return tiny_model()


@pytest.fixture
def store(cfg):
    return perturbed(init_model(cfg, 0), np.random.default_rng(1))


@pytest.fixture
def clips():
    return np.random.default_rng(2).random((3, TINY.T, TINY.H, TINY.W, 3))


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
