"""Run-configuration document: defaults, validation, digest semantics."""

import json

import pytest

from aesgraph.config import DEFAULT_DOCUMENT, config_from_dict, load_config, save_config
from aesgraph.encoder import ConfigError


class TestParsing:
    def test_defaults_fill_in(self):
        rc = config_from_dict({})
        assert rc.model.variant == "FCN_A_G"
        assert rc.model.encoder.stem_channels == 16
        assert rc.model.aspp.rates == (3, 6, 12, 18)
        assert rc.model.r == 4.0
        assert rc.train.epochs == 80
        assert rc.train.batch_size == 32
        assert rc.train.lr0 == 1e-4
        assert rc.train.weight_decay == 1e-5
        assert rc.train.input_side == 300

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key 'bogus'"):
            config_from_dict({"bogus": 1})

    def test_unknown_nested_key_rejected(self):
        with pytest.raises(ConfigError, match="aspp.dilations"):
            config_from_dict({"aspp": {"dilations": [1, 2]}})

    def test_invalid_values_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"train": {"epochs": 0}})
        with pytest.raises(ConfigError):
            config_from_dict({"head": {"r": -1.0}})
        with pytest.raises(ConfigError):
            config_from_dict({"variant": "NOPE"})

    def test_mse_loss_builds_regression_head(self):
        rc = config_from_dict({"train": {"loss": "mse"}})
        assert rc.model.task == "regress"

    def test_file_round_trip(self, tmp_path):
        rc = config_from_dict({"variant": "FCN_G", "train": {"seed": 3}})
        path = tmp_path / "cfg.json"
        save_config(path, rc)
        back = load_config(path)
        assert back.document == rc.document
        assert back.digest() == rc.digest()

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="JSON"):
            load_config(path)


class TestDigest:
    def test_stable_across_key_order(self):
        a = config_from_dict({"train": {"epochs": 5, "seed": 1}})
        b = config_from_dict({"train": {"seed": 1, "epochs": 5}})
        assert a.digest() == b.digest()

    def test_model_changes_change_digest(self):
        base = config_from_dict({})
        assert base.digest() != config_from_dict({"variant": "FCN"}).digest()
        assert base.digest() != config_from_dict({"head": {"r": 2.0}}).digest()
        assert base.digest() != config_from_dict({"train": {"seed": 9}}).digest()

    def test_paths_do_not_change_digest(self):
        a = config_from_dict({"data": {"manifest": "x.jsonl"}, "out_dir": "a"})
        b = config_from_dict({"data": {"manifest": "y.jsonl"}, "out_dir": "b"})
        assert a.digest() == b.digest()

    def test_overrides(self):
        rc = config_from_dict({})
        seeded = rc.with_overrides(seed=5, out_dir="elsewhere", variant="FCN")
        assert seeded.seed == 5
        assert seeded.out_dir == "elsewhere"
        assert seeded.model.variant == "FCN"
        assert rc.seed == 0  # original untouched

    def test_default_document_is_valid(self):
        rc = config_from_dict(json.loads(json.dumps(DEFAULT_DOCUMENT)))
        rc.validate()
