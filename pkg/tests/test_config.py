import json

import pytest

from seadate.config import RunConfig, apply_overrides, from_dict, load_config
from seadate.errors import ConfigError


def test_defaults_round_trip_through_json(tmp_path):
    cfg = RunConfig()
    cfg.save(tmp_path / "c.json")
    again = load_config(str(tmp_path / "c.json"), environ={})
    assert again == cfg
    assert again.to_dict() == json.loads(cfg.to_json())


def test_file_values_then_overrides_then_environment(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"seed": 3, "train": {"lr": 0.5}}))
    cfg = load_config(str(tmp_path / "c.json"), ["train.lr=0.25", "backbone.fusion_positions=[2,4]"], environ={})
    assert (cfg.seed, cfg.train.lr, cfg.backbone.fusion_positions) == (3, 0.25, (2, 4))
    assert cfg.train.seed == 3
    cfg = load_config(str(tmp_path / "c.json"), [], environ={"SEADATE_SEED": "9"})
    assert cfg.seed == 9 and cfg.gen.seed == 9 and cfg.train.seed == 9


def test_unknown_field_is_named():
    with pytest.raises(ConfigError, match="'train.learning_rate'"):
        from_dict({"train": {"learning_rate": 1}})
    with pytest.raises(ConfigError, match="'bogus'"):
        from_dict({"bogus": 1})


def test_out_of_range_value_names_section_and_field():
    with pytest.raises(ConfigError, match="gen.*complementarity"):
        from_dict({"gen": {"complementarity": 1.5}})


def test_cross_section_consistency():
    with pytest.raises(ConfigError, match="num_classes"):
        from_dict({"gen": {"num_classes": 2}})
    with pytest.raises(ConfigError, match="image_size"):
        from_dict({"backbone": {"image_size": 32}})
    with pytest.raises(ConfigError, match="embed_dim"):
        from_dict({"backbone": {"embed_dim": 16}})
    from_dict({"backbone": {"embed_dim": 16, "cl": False}})


def test_bad_scalars_and_environment():
    with pytest.raises(ConfigError):
        from_dict({"seed": "1"})
    with pytest.raises(ConfigError):
        from_dict({"train_count": 0})
    with pytest.raises(ConfigError, match="SEADATE_SEED"):
        load_config(None, [], environ={"SEADATE_SEED": "x"})


def test_override_syntax():
    assert apply_overrides({}, ["a.b=1", "a.c=text"]) == {"a": {"b": 1, "c": "text"}}
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])


def test_desk_config_is_valid():
    import os
    path = os.path.join(os.path.dirname(__file__), "..", "configs", "desk.json")
    cfg = load_config(path, environ={})
    assert cfg.train.epochs <= 15 and cfg.backbone.dtf and cfg.backbone.cl
