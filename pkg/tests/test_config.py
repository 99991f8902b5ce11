"""Config serialization, validation, and the hash used to stamp artifacts."""

import numpy as np
import pytest

from splatdistill.config import (
    TrainConfig,
    desk_preset,
    from_dict,
    load_config,
    save_config,
    to_dict,
)


def test_round_trip_through_dict():
    cfg = desk_preset()
    cfg.seed = 123
    cfg.distill.budget = 0.25
    cfg.perturb.sigma_rotation = 0.07
    back = from_dict(to_dict(cfg))
    assert back == cfg


def test_round_trip_through_yaml(tmp_path):
    cfg = desk_preset()
    cfg.dropout.r_init = 0.35
    path = tmp_path / "cfg.yaml"
    save_config(cfg, path)
    back = load_config(path)
    assert back == cfg


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown"):
        from_dict({"not_a_field": 1})
    with pytest.raises(ValueError, match="unknown"):
        from_dict({"distill": {"bogus": 2}})


def test_from_dict_partial_overrides_defaults():
    cfg = from_dict({"total_iters": 77, "lr": {"opacity": 0.5}})
    assert cfg.total_iters == 77
    assert cfg.lr.opacity == 0.5
    base = TrainConfig()
    assert cfg.lr.scale == base.lr.scale
    assert cfg.densify_interval == base.densify_interval


def test_config_hash_tracks_content():
    a = TrainConfig()
    b = TrainConfig()
    assert a.config_hash() == b.config_hash()
    b.seed = a.seed + 1
    assert a.config_hash() != b.config_hash()
    c = TrainConfig()
    c.distill.hist_grid_size = 64
    assert c.config_hash() != a.config_hash()
    assert len(a.config_hash()) == 16


def test_copy_is_deep():
    cfg = TrainConfig()
    dup = cfg.copy()
    dup.dropout.r_init = 0.9
    assert cfg.dropout.r_init != 0.9


def test_full_scale_defaults_match_published_schedule():
    cfg = TrainConfig()
    assert cfg.total_iters == 30000
    assert cfg.sh_degree == 3
    assert (cfg.perturb.t_start, cfg.perturb.t_end, cfg.perturb.interval) == \
        (500, 15000, 500)
    assert (cfg.dropout.r_init, cfg.dropout.t0, cfg.dropout.t1) == \
        (0.2, 500, 15000)
    assert cfg.distill.hist_grid_size == 128
    assert cfg.distill.hist_interval == 500
    assert cfg.distill.budget == 0.5
    assert cfg.loss.lambda_dssim == 0.2


def test_simplify_iterations_survive_yaml(tmp_path):
    cfg = TrainConfig()
    cfg.distill.simplify_iterations = (100, 200, 300)
    path = tmp_path / "cfg.yaml"
    save_config(cfg, path)
    back = load_config(path)
    assert back.distill.simplify_iterations == (100, 200, 300)
    assert isinstance(back.distill.simplify_iterations, tuple)


def test_background_survives_round_trip():
    cfg = TrainConfig()
    cfg.background = (0.5, 0.25, 1.0)
    back = from_dict(to_dict(cfg))
    assert np.allclose(back.background, (0.5, 0.25, 1.0))
