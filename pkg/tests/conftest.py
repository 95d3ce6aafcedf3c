from __future__ import annotations

import numpy as np
import pytest

from fatten.config import parse_config
from fatten.manifold import ManifoldParams, build_manifold, sample_dataset
from fatten.model import FattenModel
from fatten.training import (TrainConfig, pretrain_category_head, pretrain_pose_predictor,
                             train_fatten)

SMALL_INI = """
[experiment]
seed = 3
workdir = {workdir}

[manifold]
num_classes = 4
feature_dim = 32
appearance_dim = 8

[data]
train_objects = 8
test_objects = 4

[model]
pose_hidden = 16
appearance_hidden = 32
appearance_dim = 16
decoder_hidden = 32

[train]
pose_epochs = 20
category_epochs = 20
epochs = 3

[eval]
repetitions = 5
retrieval_queries = 50
"""

# results of the acceptance module, printed in the terminal summary
ACCEPTANCE = {}


def pytest_collection_modifyitems(items):
    # anything sharing the default benchmark run is slow; `-m "not slow"` skips it
    for item in items:
        if "default_run" in getattr(item, "fixturenames", ()):
            item.add_marker(pytest.mark.slow)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def small_ini(tmp_path):
    """Path of a tiny experiment config whose workdir lives under tmp_path."""
    path = tmp_path / "small.ini"
    path.write_text(SMALL_INI.format(workdir=tmp_path / "run"))
    return path


@pytest.fixture
def small_cfg(small_ini):
    return parse_config(small_ini.read_text(), str(small_ini))


@pytest.fixture(scope="session")
def tiny_data():
    spec = build_manifold(ManifoldParams(num_classes=3, feature_dim=16, appearance_dim=6,
                                         num_pose_bins=6, seed=5))
    return sample_dataset(spec, (6, 3), pose_mode="uniform", jitter=0.8, split_seed=1)


@pytest.fixture(scope="session")
def tiny_trained(tiny_data):
    """A small model with both heads pre-trained and a few transfer epochs."""
    train, test = tiny_data
    model = FattenModel.create(train.binning, train.feature_dim, train.num_classes, seed=2,
                               pose_hidden=16, appearance_hidden=24, appearance_dim=8,
                               decoder_hidden=24)
    cfg = TrainConfig(pose_epochs=40, category_epochs=40, epochs=4, seed=2)
    pretrain_pose_predictor(model, train, cfg, test)
    pretrain_category_head(model, train, cfg, test)
    train_fatten(model, train, cfg, test)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """The full default benchmark, run once through the command line.

    Returns ``(config, seconds)``; every artifact lives under the config's
    workdir.
    """
    import time

    from fatten.cli import main
    from fatten.config import default_config

    workdir = tmp_path_factory.mktemp("default") / "run"
    start = time.perf_counter()
    status = main(["pipeline", "--workdir", str(workdir)])
    seconds = time.perf_counter() - start
    assert status == 0
    return default_config(workdir=str(workdir)), seconds
