"""Tests for Adam, the pretraining loop and checkpoints."""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

import io
import math

import numpy as np
import pytest

from superinfo.config import (
    AugmentationConfig, ConfigError, LossWeights, ModelSpec, SuperInfoConfig, SyntheticSpec,
)
from superinfo.data import DataError, batch_iter
from superinfo.formats import (
    BadText, FormatError, MagicMismatch, TruncatedPayload, VersionMismatch,
)
from superinfo.losses import nt_xent, superinfo_total
from superinfo.models import encode, init_bundle, project
from superinfo.rng import Rng
from superinfo.runtime.adapters import JsonlSink, MemorySink
from superinfo.runtime.pipeline import generate_datasets
from superinfo.runtime.trainer import (
    LOSS_FIELDS, NonFiniteLossError, adam_step, init_state, load_checkpoint, pretrain,
    save_checkpoint,
)
from superinfo.tensor import Tape, Tensor, backward

SPEC = SyntheticSpec(n_classes=3, d_shared=2, d_specific=2, d_nuisance=4, n_samples=32,
                     n_test=16)
MODEL = ModelSpec(encoder_widths=[16], repr_dim=8, proj_dim=4, decoder_widths=[16])


def make_config(**overrides):
    fields = dict(epochs=1, batch_size=8, seed=3, model=MODEL)
    fields.update(overrides)
    return SuperInfoConfig(**fields)


def make_train(seed=0):
    return generate_datasets(SPEC, seed)['train']


def arrays_equal(a, b):
    return a.keys() == b.keys() and all(a[k].tobytes() == b[k].tobytes() for k in a)


class TestAdam:
    def test_first_step(self):
        p, m, v = adam_step(np.array([0.0]), np.array([1.0]), np.zeros(1), np.zeros(1), 1)
        assert abs(p[0] + 3e-4) < 1e-10
        assert abs(m[0] - 0.1) < 1e-12
        assert abs(v[0] - 0.001) < 1e-12

    def test_zero_gradient(self):
        p0 = np.array([1.0, -2.0])
        p, m, v = adam_step(p0, np.zeros(2), np.array([0.5, 0.5]), np.array([0.2, 0.2]), 3)
        assert np.allclose(m, 0.45)
        assert np.allclose(v, 0.2 * 0.999)
        assert not np.array_equal(p, p0)  # momentum still moves the parameters

    def test_zero_gradient_from_rest(self):
        p0 = np.array([1.0, -2.0])
        p, _, _ = adam_step(p0, np.zeros(2), np.zeros(2), np.zeros(2), 1)
        assert np.array_equal(p, p0)

    def test_step_size_bounded(self):
        rng = Rng(0)
        p = np.zeros(100)
        m, v = np.zeros(100), np.zeros(100)
        for t in range(1, 51):
            g = rng.uniform(100, -5.0, 5.0)
            new, m, v = adam_step(p, g, m, v, t)
            assert np.all(np.abs(new - p) <= 3e-4 / (1 - 0.9) + 1e-12)
            p = new

    def test_dtype_preserved(self):
        p, m, v = adam_step(np.zeros(2, dtype=np.float32), np.ones(2, dtype=np.float32),
                            np.zeros(2, dtype=np.float32), np.zeros(2, dtype=np.float32), 1)
        assert p.dtype == m.dtype == v.dtype == np.float32

    def test_step_starts_at_one(self):
        with pytest.raises(ValueError):
            adam_step(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1), 0)


class TestPretrain:
    def test_zero_epochs_keeps_init(self):
        data = make_train()
        config = make_config(epochs=0, model=MODEL.model_copy(update={'input_dim': data.dim}))
        state = pretrain(config, data)
        init = init_bundle(Rng(3).substream('init'), config.model, 'f32')
        assert arrays_equal(state.bundle.to_arrays(), init.to_arrays())

    def test_one_epoch_records(self):
        sink = MemorySink()
        state = pretrain(make_config(), make_train(), sinks=[sink])
        steps = [r for r in sink.records if r.step >= 0]
        summaries = [r for r in sink.records if r.step == -1]
        assert len(steps) == 4
        assert [r.step for r in steps] == [1, 2, 3, 4]
        assert len(summaries) == 1
        assert state.epoch == 1
        assert state.adam.step == 4
        for r in steps:
            values = [getattr(r, k) for k in LOSS_FIELDS]
            assert all(math.isfinite(v) for v in values)
            again = superinfo_total(values[:5], LossWeights()).l_total
            assert abs(again - r.l_total) <= 1e-6 * max(1.0, abs(r.l_total))
            assert r.wall_ms == 0.0

    def test_summary_is_mean_of_steps(self):
        sink = MemorySink()
        pretrain(make_config(), make_train(), sinks=[sink])
        steps = [r for r in sink.records if r.step >= 0]
        summary = sink.records[-1]
        assert abs(summary.l_cl - np.mean([r.l_cl for r in steps])) < 1e-9

    def test_training_changes_parameters(self):
        data = make_train()
        before = init_state(make_config(model=MODEL.model_copy(
            update={'input_dim': data.dim}))).bundle.to_arrays()
        after = pretrain(make_config(), data).bundle.to_arrays()
        assert not arrays_equal(before, after)

    def test_frozen_heads_stay_fixed(self):
        data = make_train()
        config = make_config(freeze_heads=True)
        before = init_state(config.model_copy(update={'model': MODEL.model_copy(
            update={'input_dim': data.dim})})).bundle.to_arrays()
        after = pretrain(config, data).bundle.to_arrays()
        for name in after:
            if name.split('.')[0] in ('q_mu', 'q_logvar', 'r'):
                assert after[name].tobytes() == before[name].tobytes()
        assert after['f.0.weight'].tobytes() != before['f.0.weight'].tobytes()

    def test_identical_seeds_identical_metrics(self):
        streams = []
        for _ in range(2):
            buf = io.StringIO()
            pretrain(make_config(epochs=2), make_train(), sinks=[JsonlSink(buf)])
            streams.append(buf.getvalue())
        assert streams[0] == streams[1]
        assert streams[0].count('\n') == 10

    def test_l_total_falls_over_first_ten_steps(self):
        # full-batch steps on unaugmented views: only the parameters move between steps
        for seed in range(10):
            data = generate_datasets(SPEC, seed)['train']
            sink = MemorySink()
            config = make_config(epochs=10, batch_size=data.n, seed=seed, learning_rate=3e-3,
                                 augmentation=AugmentationConfig.identity())
            pretrain(config, data, sinks=[sink])
            totals = [r.l_total for r in sink.records if r.step >= 0]
            assert len(totals) == 10
            assert totals[-1] < totals[0], (seed, totals)

    def test_zero_weights_match_plain_infonce_loop(self):
        data = make_train()
        config = make_config(epochs=2, weights=LossWeights(lambda1=0, lambda2=0, lambda3=0,
                                                           lambda4=0),
                             model=MODEL.model_copy(update={'input_dim': data.dim}))
        trained = pretrain(config, data).bundle.to_arrays()

        plain = init_state(config)
        bundle = plain.bundle
        named = [(n, p) for n, p in bundle.named_parameters() if n.split('.')[0] in ('f', 'g')]
        params = [p for _, p in named]
        for _ in range(config.epochs):
            for batch in batch_iter(data, config.batch_size, plain.rng, config.augmentation):
                v1 = Tensor(batch.view1, dtype=bundle.dtype)
                v2 = Tensor(batch.view2, dtype=bundle.dtype)
                with Tape() as tape:
                    loss = nt_xent(project(bundle, encode(bundle, v1)),
                                   project(bundle, encode(bundle, v2)), config.weights.tau)
                plain.adam.update(named, backward(loss, tape, params), config)
        for name, p in named:
            assert trained[name].tobytes() == p.data.tobytes(), name

    def test_dim_mismatch(self):
        data = make_train()
        config = make_config(model=MODEL.model_copy(update={'input_dim': data.dim + 1}))
        with pytest.raises(DataError, match="input_dim"):
            pretrain(config, data)

    def test_non_finite_loss_flushes_and_raises(self):
        data = make_train()
        data.samples[:] = np.float32(1e30)
        sink = MemorySink()
        with pytest.raises(NonFiniteLossError) as exc:
            pretrain(make_config(), data, sinks=[sink])
        assert exc.value.epoch == 0
        assert exc.value.step == 1
        assert len(sink) == 1


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        state = pretrain(make_config(), make_train())
        path = tmp_path / 'run.ckpt'
        save_checkpoint(state, path)
        back = load_checkpoint(path)
        assert arrays_equal(back.bundle.to_arrays(), state.bundle.to_arrays())
        assert back.epoch == 1
        assert back.adam.step == state.adam.step
        assert arrays_equal(back.adam.m, state.adam.m)
        assert back.config == state.config
        assert back.rng.state_bytes() == state.rng.state_bytes()

    def test_resume_matches_continuous_run(self, tmp_path):
        data = make_train()
        full_sink = MemorySink()
        full = pretrain(make_config(epochs=2), data, sinks=[full_sink])

        path = tmp_path / 'half.ckpt'
        half = pretrain(make_config(epochs=1), data)
        save_checkpoint(half, path)
        resumed_sink = MemorySink()
        resumed = pretrain(make_config(epochs=2), data, sinks=[resumed_sink],
                           state=load_checkpoint(path))

        assert arrays_equal(full.bundle.to_arrays(), resumed.bundle.to_arrays())
        second_epoch = [r for r in full_sink.records if r.epoch == 1]
        assert second_epoch == resumed_sink.records

    def test_resume_rejects_other_config(self, tmp_path):
        data = make_train()
        state = pretrain(make_config(), data)
        with pytest.raises(ConfigError):
            pretrain(make_config(epochs=2, seed=9), data, state=state)

    def test_same_run_same_bytes(self, tmp_path):
        paths = []
        for i in range(2):
            path = tmp_path / f'{i}.ckpt'
            save_checkpoint(pretrain(make_config(), make_train()), path)
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / 'x.ckpt'
        path.write_bytes(b'NOPE' + b'\x00' * 8)
        with pytest.raises(MagicMismatch):
            load_checkpoint(path)

    def test_version_bump(self, tmp_path):
        path = tmp_path / 'x.ckpt'
        save_checkpoint(init_state(make_config(model=MODEL.model_copy(
            update={'input_dim': 8}))), path)
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with pytest.raises(VersionMismatch):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / 'x.ckpt'
        save_checkpoint(init_state(make_config(model=MODEL.model_copy(
            update={'input_dim': 8}))), path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(TruncatedPayload):
            load_checkpoint(path)

    def test_invalid_utf8_tensor_name(self, tmp_path):
        path = tmp_path / 'x.ckpt'
        save_checkpoint(init_state(make_config(model=MODEL.model_copy(
            update={'input_dim': 8}))), path)
        raw = bytearray(path.read_bytes())
        raw[14] = 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(BadText, match='offset 14'):
            load_checkpoint(path)

    def test_single_byte_corruption_is_a_format_error_or_loads(self, tmp_path):
        path = tmp_path / 'x.ckpt'
        save_checkpoint(init_state(make_config(model=MODEL.model_copy(
            update={'input_dim': 8}))), path)
        clean = path.read_bytes()
        rng = Rng(101)
        offsets = rng.integers(100, len(clean)).tolist()
        masks = (rng.integers(100, 255) + 1).tolist()
        for offset, mask in zip(offsets, masks):
            raw = bytearray(clean)
            raw[offset] ^= mask
            path.write_bytes(bytes(raw))
            try:
                load_checkpoint(path)
            except FormatError:
                pass

    def test_header_corruption_always_rejected(self, tmp_path):
        path = tmp_path / 'x.ckpt'
        save_checkpoint(init_state(make_config(model=MODEL.model_copy(
            update={'input_dim': 8}))), path)
        clean = path.read_bytes()
        for offset in range(12):
            raw = bytearray(clean)
            raw[offset] ^= 0x5A
            path.write_bytes(bytes(raw))
            with pytest.raises(FormatError):
                load_checkpoint(path)

    def test_periodic_checkpoint(self, tmp_path):
        path = tmp_path / 'periodic.ckpt'
        pretrain(make_config(epochs=2, checkpoint_every=1), make_train(), checkpoint_path=path)
        assert load_checkpoint(path).epoch == 2
