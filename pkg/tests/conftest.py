import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """A small 32 px dataset with train/ and test/ splits."""
    from seadate.synth import GenConfig, write_dataset

    root = tmp_path_factory.mktemp("tiny")
    cfg = GenConfig(image_size=32, min_size=6, max_size=12, max_objects=3, seed=3)
    write_dataset(cfg, 8, str(root / "train"))
    write_dataset(cfg, 4, str(root / "test"), start=8)
    return root


TINY_SETS = [
    "gen.image_size=32", "gen.min_size=6", "gen.max_size=12", "gen.max_objects=3", "gen.seed=3",
    "train_count=8", "test_count=4",
    "backbone.image_size=32", "backbone.widths=[4,4,8,8]", "backbone.embed_dim=8", "contrastive.embed_dim=8",
    "contrastive.queue_size=16", "train.epochs=1", "train.batch_size=4", "train.lr=0.003",
    "ablation.positions=[1,2]",
]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(mod.RESULTS):
            terminalreporter.write_line(mod.RESULTS[n])
