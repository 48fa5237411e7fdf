"""Tests for config validation, per-command required keys and the config echo."""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

import pytest

from superinfo.config import (
    AugmentationConfig, ConfigError, LossWeights, RunConfig, SuperInfoConfig, SyntheticSpec,
)

PRETRAIN_TEXT = """
# recommended loss weights
seed = 7
train.epochs = 2
train.batch_size = 16
loss.lambda1 = 0.01
loss.lambda2 = 0.01
loss.lambda3 = 0.1
loss.lambda4 = 0.1
model.encoder_widths = 32, 32
model.repr_dim = 16
"""


class TestLossWeights:
    def test_recommended_weights(self):
        assert LossWeights.recommended().as_tuple() == (0.01, 0.01, 0.1, 0.1)

    def test_symmetric_mapping(self):
        w = LossWeights.symmetric(0.2, 0.3)
        assert w.as_tuple() == (0.2, 0.3, 0.3, 0.2)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(lambda1=-0.1)

    def test_tau_positive(self):
        with pytest.raises(ValueError):
            LossWeights(tau=0.0)


class TestSections:
    def test_zero_dim_spec_rejected(self):
        with pytest.raises(ValueError):
            SyntheticSpec(d_shared=0, d_specific=0, d_nuisance=0)

    def test_single_transfer_class_rejected(self):
        with pytest.raises(ValueError):
            SyntheticSpec(n_transfer_classes=1)

    def test_crop_fraction_bounds(self):
        with pytest.raises(ValueError):
            AugmentationConfig(crop_fraction=[0.9, 0.5])

    def test_list_from_text(self):
        aug = AugmentationConfig(channel_scale='0.5, 1.5')
        assert aug.channel_scale == [0.5, 1.5]


class TestRunConfig:
    def test_parse(self):
        cfg = RunConfig.from_text(PRETRAIN_TEXT)
        assert cfg.seed == 7
        assert cfg.train.epochs == 2
        assert cfg.model.encoder_widths == [32, 32]
        assert cfg.loss.as_tuple() == (0.01, 0.01, 0.1, 0.1)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match='unknown key'):
            RunConfig.from_text("train.epoch = 3")

    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            RunConfig.from_text("optimizer.lr = 3")

    def test_bad_value(self):
        with pytest.raises(ConfigError, match='train.batch_size'):
            RunConfig.from_text("train.batch_size = many")

    def test_parse_error_becomes_config_error(self):
        with pytest.raises(ConfigError):
            RunConfig.from_text("seed = 1\nseed = 2")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match='not found'):
            RunConfig.from_file(tmp_path / 'absent.cfg')

    def test_required_keys(self):
        cfg = RunConfig.from_text("seed = 1")
        with pytest.raises(ConfigError, match='train.epochs'):
            cfg.require('pretrain')
        RunConfig.from_text(PRETRAIN_TEXT).require('pretrain')

    def test_probe_needs_nothing(self):
        RunConfig.from_text("").require('probe')

    def test_superinfo_config_fills_input_dim(self):
        cfg = RunConfig.from_text(PRETRAIN_TEXT).superinfo_config(input_dim=12)
        assert cfg.model.input_dim == 12
        assert cfg.seed == 7
        assert cfg.epochs == 2

    def test_input_dim_conflict(self):
        cfg = RunConfig.from_text(PRETRAIN_TEXT + "model.input_dim = 5\n")
        with pytest.raises(ConfigError):
            cfg.superinfo_config(input_dim=12)

    def test_weight_and_seed_override(self):
        cfg = RunConfig.from_text(PRETRAIN_TEXT).superinfo_config(
            input_dim=4, weights=LossWeights.symmetric(0.0, 0.0), seed=11)
        assert cfg.weights.as_tuple() == (0.0, 0.0, 0.0, 0.0)
        assert cfg.seed == 11


class TestEcho:
    def test_echo_round_trip(self):
        cfg = RunConfig.from_text(PRETRAIN_TEXT).superinfo_config(input_dim=12)
        assert SuperInfoConfig.from_echo(cfg.echo()) == cfg

    def test_run_config_echo_parses(self):
        cfg = RunConfig.from_text(PRETRAIN_TEXT + "ablate.grid = '0,0,0,0; 1,1,1,1'\n")
        again = RunConfig.from_text(cfg.echo())
        assert again.ablate.grid == cfg.ablate.grid
        assert again.model == cfg.model

    def test_echo_is_sorted(self):
        lines = SuperInfoConfig().echo().splitlines()
        assert lines == sorted(lines)

    def test_run_id_ignores_epochs(self):
        a = SuperInfoConfig(epochs=1)
        b = SuperInfoConfig(epochs=5)
        assert a.run_id == b.run_id
        assert len(a.run_id) == 12

    def test_run_id_tracks_weights(self):
        a = SuperInfoConfig()
        b = SuperInfoConfig(weights=LossWeights.symmetric(0.0, 0.0))
        assert a.run_id != b.run_id
