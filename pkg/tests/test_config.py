import json

import numpy as np
import pytest

from iclnav.config import (
    ParseError,
    ValidationError,
    default_config,
    default_dict,
    from_dict,
    load_config,
)


def write_config(tmp_path, mutate=None):
    d = default_dict()
    if mutate is not None:
        mutate(d)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(d), encoding="utf-8")
    return path


class TestLoadConfig:
    def test_default_round_trip(self, tmp_path):
        path = write_config(tmp_path)
        cfg = load_config(path)
        ref = default_config()
        assert cfg.dt == ref.dt
        assert cfg.t_end == ref.t_end
        assert np.array_equal(cfg.features_world, ref.features_world)
        assert np.array_equal(cfg.q_c, ref.q_c)
        assert cfg.seed == ref.seed

    def test_malformed_json_is_parse_error(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ParseError):
            load_config(path)

    def test_missing_dt_names_key(self, tmp_path):
        def drop_dt(d):
            del d["time"]["dt"]
        path = write_config(tmp_path, drop_dt)
        with pytest.raises(ValidationError) as exc:
            load_config(path)
        assert "dt" in str(exc.value)

    def test_zero_stack_size_rejected(self, tmp_path):
        def zero_n(d):
            d["observer"]["stack_size"] = 0
        path = write_config(tmp_path, zero_n)
        with pytest.raises(ValidationError) as exc:
            load_config(path)
        assert "stack_size" in str(exc.value)

    def test_unknown_key_rejected(self, tmp_path):
        def add_unknown(d):
            d["observer"]["mystery_knob"] = 3
        path = write_config(tmp_path, add_unknown)
        with pytest.raises(ValidationError) as exc:
            load_config(path)
        assert "mystery_knob" in str(exc.value)

    def test_unknown_section_rejected(self, tmp_path):
        path = write_config(tmp_path, lambda d: d.update(extra={"a": 1}))
        with pytest.raises(ValidationError) as exc:
            load_config(path)
        assert "extra" in str(exc.value)


class TestValidation:
    def test_window_must_cover_two_steps(self):
        d = default_dict()
        d["observer"]["window"] = d["time"]["dt"]
        with pytest.raises(ValidationError) as exc:
            from_dict(d)
        assert "window" in str(exc.value)

    def test_t_end_must_exceed_window(self):
        d = default_dict()
        d["time"]["t_end"] = 0.25
        with pytest.raises(ValidationError) as exc:
            from_dict(d)
        assert "t_end" in str(exc.value)

    def test_gain_positivity(self):
        for key in ("kappa1", "kappa2", "kappa3", "lambda_tau"):
            d = default_dict()
            d["observer"][key] = 0.0
            with pytest.raises(ValidationError) as exc:
                from_dict(d)
            assert key in str(exc.value)

    def test_q_c_must_be_spd(self):
        d = default_dict()
        d["planner"]["q_c"] = np.diag([1.0, -1.0, 1.0]).tolist()
        with pytest.raises(ValidationError):
            from_dict(d)

    def test_quaternion_must_be_unit(self):
        d = default_dict()
        d["scene"]["camera_quaternion_world"] = [1.0, 1.0, 0.0, 0.0]
        with pytest.raises(ValidationError) as exc:
            from_dict(d)
        assert "camera_quaternion_world" in str(exc.value)

    def test_needs_four_features(self):
        d = default_dict()
        d["scene"]["features_goal"] = d["scene"]["features_goal"][:3]
        del d["scene"]["features_world"]
        with pytest.raises(ValidationError) as exc:
            from_dict(d)
        assert "features_goal" in str(exc.value)

    def test_features_world_consistency_checked(self):
        d = default_dict()
        d["scene"]["features_world"][0][0] += 1e-3
        with pytest.raises(ValidationError) as exc:
            from_dict(d)
        assert "features_world" in str(exc.value)

    def test_features_world_derived_when_absent(self):
        d = default_dict()
        expected = d["scene"]["features_world"]
        del d["scene"]["features_world"]
        cfg = from_dict(d)
        assert np.abs(cfg.features_world - np.asarray(expected)).max() < 1e-12

    def test_bad_seed_rejected(self):
        d = default_dict()
        d["noise"]["seed"] = -1
        with pytest.raises(ValidationError) as exc:
            from_dict(d)
        assert "seed" in str(exc.value)

    def test_anchor_range_checked(self):
        d = default_dict()
        d["observer"]["anchor_feature"] = 4
        with pytest.raises(ValidationError) as exc:
            from_dict(d)
        assert "anchor_feature" in str(exc.value)

    def test_init_estimates_scalar_or_per_feature(self):
        d = default_dict()
        d["observer"]["init_d_c_s"] = 2.5
        cfg = from_dict(d)
        assert np.array_equal(cfg.init_d_c_s, np.full(4, 2.5))
        d["observer"]["init_d_c_s"] = [1.0, 2.0, 3.0, 4.0]
        cfg = from_dict(d)
        assert np.array_equal(cfg.init_d_c_s, [1.0, 2.0, 3.0, 4.0])
        d["observer"]["init_d_c_s"] = [1.0, 2.0]
        with pytest.raises(ValidationError):
            from_dict(d)
