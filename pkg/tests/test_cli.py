"""End-to-end tests for the superinfo command line."""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

import json

import numpy as np
import pandas as pd
import pytest

from superinfo import __version__
from superinfo.cli import EXIT_CHECK_FAILED, EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, main
from superinfo.data import DatasetContainer, save_container

RUN_TEXT = """
seed = 1
train.epochs = 1
train.batch_size = 8
model.encoder_widths = 16
model.repr_dim = 8
model.proj_dim = 4
model.decoder_widths = 16
data.n_classes = 3
data.d_shared = 2
data.d_specific = 2
data.d_nuisance = 4
data.n_samples = 32
data.n_test = 16
probe.iterations = 50
"""


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / 'run.cfg').write_text(RUN_TEXT)
    return tmp_path


def gen_data(workdir, name='data'):
    assert main(['gen-data', '--spec', str(workdir / 'run.cfg'),
                 '--out', str(workdir / name)]) == EXIT_OK
    return workdir / name


def pretrain(workdir, data, name='run.ckpt', *extra):
    return main(['pretrain', '--config', str(workdir / 'run.cfg'),
                 '--data', str(data / 'train.sids'), '--out', str(workdir / name), *extra])


class TestTopLevel:
    def test_version(self, capsys):
        assert main(['--version']) == EXIT_OK
        assert __version__ in capsys.readouterr().out

    def test_no_command(self, capsys):
        assert main([]) == EXIT_INPUT


class TestGenData:
    def test_writes_identical_files(self, workdir):
        a = gen_data(workdir, 'a')
        b = gen_data(workdir, 'b')
        for name in ('train.sids', 'test.sids'):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_zero_dims(self, workdir, capsys):
        spec = workdir / 'zero.cfg'
        spec.write_text("data.n_classes = 2\ndata.d_shared = 0\ndata.d_specific = 0\n"
                        "data.d_nuisance = 0\ndata.n_samples = 10\n")
        assert main(['gen-data', '--spec', str(spec), '--out', str(workdir)]) == EXIT_INPUT
        assert '[error]' in capsys.readouterr().err

    def test_missing_keys(self, workdir):
        spec = workdir / 'partial.cfg'
        spec.write_text("data.n_classes = 2\n")
        assert main(['gen-data', '--spec', str(spec)]) == EXIT_INPUT


class TestMiCheck:
    def test_passes(self, capsys):
        assert main(['mi-check', '--trials', '1']) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines and all(line.startswith('[pass]') for line in lines)

    def test_bad_trials(self):
        assert main(['mi-check', '--trials', '0']) == EXIT_INPUT

    def test_corrupted_joint(self, tmp_path):
        path = tmp_path / 'joint.csv'
        path.write_text('var:a:2,var:b:2,p\n0,0,0.5\n1,1,0.7\n')
        assert main(['mi-check', '--trials', '1', '--joint', str(path)]) == EXIT_INPUT

    def test_non_integer_joint_index(self, tmp_path, capsys):
        path = tmp_path / 'joint.csv'
        path.write_text('var:a:2,p\nx,0.5\n1,0.5')
        assert main(['mi-check', '--trials', '1', '--joint', str(path)]) == EXIT_INPUT
        assert 'line 2' in capsys.readouterr().err

    def test_joint_checked(self, tmp_path, capsys):
        path = tmp_path / 'joint.csv'
        path.write_text('var:a:2,var:b:2,p\n0,0,0.4\n0,1,0.1\n1,0,0.1\n1,1,0.4\n')
        assert main(['mi-check', '--trials', '1', '--joint', str(path)]) == EXIT_OK
        assert 'joint_symmetry' in capsys.readouterr().out


class TestPretrainProbe:
    def test_pretrain_then_probe(self, workdir, capsys):
        data = gen_data(workdir)
        assert pretrain(workdir, data, 'run.ckpt', '--metrics',
                        str(workdir / 'm.jsonl')) == EXIT_OK
        assert (workdir / 'm.jsonl').read_text().count('\n') == 5
        capsys.readouterr()
        assert main(['probe', '--ckpt', str(workdir / 'run.ckpt'),
                     '--train', str(data / 'train.sids'),
                     '--test', str(data / 'test.sids')]) == EXIT_OK
        result = json.loads(capsys.readouterr().out)
        assert 0.0 <= result['accuracy'] <= 1.0

    def test_same_config_same_checkpoint(self, workdir):
        data = gen_data(workdir)
        assert pretrain(workdir, data, 'a.ckpt') == EXIT_OK
        assert pretrain(workdir, data, 'b.ckpt') == EXIT_OK
        assert (workdir / 'a.ckpt').read_bytes() == (workdir / 'b.ckpt').read_bytes()

    def test_probe_writes_file(self, workdir):
        data = gen_data(workdir)
        pretrain(workdir, data)
        out = workdir / 'probe.json'
        assert main(['probe', '--ckpt', str(workdir / 'run.ckpt'),
                     '--train', str(data / 'train.sids'), '--test', str(data / 'test.sids'),
                     '--out', str(out), '--config', str(workdir / 'run.cfg')]) == EXIT_OK
        assert json.loads(out.read_text())['n_test'] == 16

    def test_probe_missing_checkpoint(self, workdir):
        data = gen_data(workdir)
        assert main(['probe', '--ckpt', str(workdir / 'absent.ckpt'),
                     '--train', str(data / 'train.sids'),
                     '--test', str(data / 'test.sids')]) == EXIT_INPUT

    def test_probe_invalid_utf8_checkpoint(self, workdir, capsys):
        data = gen_data(workdir)
        assert pretrain(workdir, data) == EXIT_OK
        raw = bytearray((workdir / 'run.ckpt').read_bytes())
        raw[14] = 0xFF
        (workdir / 'run.ckpt').write_bytes(bytes(raw))
        assert main(['probe', '--ckpt', str(workdir / 'run.ckpt'),
                     '--train', str(data / 'train.sids'),
                     '--test', str(data / 'test.sids')]) == EXIT_INPUT
        assert 'offset 14' in capsys.readouterr().err

    def test_full_chain_probe_json_is_reproducible(self, tmp_path):
        outputs = []
        for name in ('first', 'second'):
            run_dir = tmp_path / name
            run_dir.mkdir()
            (run_dir / 'run.cfg').write_text(RUN_TEXT)
            data = gen_data(run_dir)
            assert pretrain(run_dir, data) == EXIT_OK
            out = run_dir / 'probe.json'
            assert main(['probe', '--ckpt', str(run_dir / 'run.ckpt'),
                         '--train', str(data / 'train.sids'),
                         '--test', str(data / 'test.sids'), '--out', str(out)]) == EXIT_OK
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]

    def test_missing_data(self, workdir):
        assert pretrain(workdir, workdir / 'nowhere') == EXIT_INPUT

    def test_non_finite_loss(self, workdir, capsys):
        data = workdir / 'hot'
        data.mkdir()
        save_container(DatasetContainer(np.full((16, 8), 1e30)), data / 'train.sids')
        assert pretrain(workdir, data) == EXIT_NUMERIC
        assert 'non-finite' in capsys.readouterr().err


class TestAblate:
    def test_rows(self, workdir):
        out = workdir / 'ablation.csv'
        assert main(['ablate', '--config', str(workdir / 'run.cfg'),
                     '--grid', '0.01,0.01,0.1,0.1; 0,0,0.1,0.1; 0.01,0.01,0,0',
                     '--seeds', '2', '--out', str(out)]) == EXIT_OK
        frame = pd.read_csv(out)
        assert len(frame) == 6
        assert frame['seed'].tolist() == [1, 2] * 3

    def test_malformed_grid(self, workdir):
        assert main(['ablate', '--config', str(workdir / 'run.cfg'), '--grid', '0.1,0.1',
                     '--out', str(workdir / 'a.csv')]) == EXIT_INPUT

    def test_no_grid(self, workdir):
        assert main(['ablate', '--config', str(workdir / 'run.cfg'),
                     '--out', str(workdir / 'a.csv')]) == EXIT_INPUT


class TestReport:
    def test_csv(self, workdir):
        data = gen_data(workdir)
        pretrain(workdir, data, 'run.ckpt', '--metrics', str(workdir / 'm.jsonl'))
        out = workdir / 'report.csv'
        assert main(['report', '--metrics', str(workdir / 'm.jsonl'),
                     '--out', str(out)]) == EXIT_OK
        assert len(pd.read_csv(out)) == 1

    def test_empty_metrics(self, workdir):
        (workdir / 'm.jsonl').write_text('')
        assert main(['report', '--metrics', str(workdir / 'm.jsonl'),
                     '--out', str(workdir / 'r.csv')]) == EXIT_INPUT

    def test_exit_codes_distinct(self):
        assert len({EXIT_OK, EXIT_CHECK_FAILED, EXIT_INPUT, EXIT_NUMERIC}) == 4
