from __future__ import annotations

import pytest

from fatten.config import default_config, load_config, parse_config
from fatten.errors import ConfigError


def test_defaults_match_benchmark():
    cfg = default_config()
    assert (cfg.manifold.num_classes, cfg.manifold.feature_dim, cfg.manifold.num_pose_bins) == \
        (10, 256, 12)
    assert (cfg.data.train_objects, cfg.data.test_objects) == (40, 10)
    assert cfg.eval.lam == 1.0 and cfg.eval.repetitions == 100
    assert cfg.paths["model"].name == "model.fatc"


def test_parse_sections_and_seed_cascade(small_cfg):
    assert small_cfg.seed == 3
    assert small_cfg.manifold.seed == 3 and small_cfg.train.seed == 3
    assert small_cfg.manifold.num_classes == 4
    assert small_cfg.model.pose_hidden == 16
    assert small_cfg.train.epochs == 3
    assert small_cfg.eval.retrieval_queries == 50


def test_value_types():
    cfg = parse_config("[data]\nbalance = no\n[eval]\ntargets = 45, 75,105\nsvm_C = 2\n"
                       "oracle = off\n[train]\ntargets = 0,3\nseed = 9\n")
    assert cfg.data.balance is False
    assert cfg.eval.targets == [45.0, 75.0, 105.0]
    assert cfg.eval.svm_C == 2.0 and cfg.eval.oracle is False
    assert cfg.train.targets == [0, 3] and cfg.train.seed == 9
    assert parse_config("[eval]\ntargets =\n").eval.targets is None


@pytest.mark.parametrize("text,pattern", [
    ("[train]\nlr = 0.1\nepochs = 0\n", r"x\.ini:3: epochs must be >= 1"),
    ("[manifold]\n\nfeature_dim = abc\n", r"x\.ini:3: bad value for feature_dim"),
    ("[model]\nwidth = 3\n", r"x\.ini:2: unknown option 'width'"),
    ("[training]\nlr = 1\n", r"x\.ini:1: unknown section"),
    ("[data]\npose_mode = spiral\n", r"x\.ini:2: pose_mode"),
    ("[manifold]\nnum_classes = 1\n", r"x\.ini:2: num_classes must be >= 2"),
    ("[eval]\nrepetitions = 0\n", r"x\.ini:2: repetitions must be >= 1"),
    ("[experiment]\nseed = x\n", r"x\.ini:2:"),
    ("no section\n", r"x\.ini"),
])
def test_errors_name_file_and_line(text, pattern):
    with pytest.raises(ConfigError, match=pattern):
        parse_config(text, "x.ini")


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.ini")
