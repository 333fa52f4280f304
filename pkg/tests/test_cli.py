import json

import numpy as np
import pytest
from click.testing import CliRunner

from app import cli
from services.checkpoint import load_checkpoint
from services.data_io import read_sparse

GIBBS_QUICK = ['--burn-in', '5', '--samples', '3', '--rank', '2', '--threads', '1', '--seed', '1']


def invoke(*args):
    return CliRunner().invoke(cli, [str(a) for a in args], catch_exceptions=False)


@pytest.fixture
def simulated(tmp_path):
    out = tmp_path / 'sim'
    result = invoke('simulate', '--shape', '6,5,4', '--rank', '2', '--missing', '0.3', '--seed', '3',
                    '--out', out)
    assert result.exit_code == 0, result.output
    return out


@pytest.fixture
def simulated_binary(tmp_path):
    out = tmp_path / 'bin'
    result = invoke('simulate', '--shape', '6,5,4', '--rank', '2', '--kind', 'binary', '--missing', '0.3',
                    '--seed', '4', '--out', out)
    assert result.exit_code == 0, result.output
    return out


class TestSimulate:

    def test_writes_train_test_and_truth(self, simulated):
        train, test = read_sparse(simulated / 'train.txt'), read_sparse(simulated / 'test.txt')
        assert train.nnz + test.nnz == 120
        truth = load_checkpoint(simulated / 'truth.npz')
        assert truth.engine == 'truth'
        assert truth.meta['true_ranks'] == [2, 2, 2]
        assert (simulated / 'simulate_manifest.json').exists()

    def test_shape_is_required(self, tmp_path):
        assert invoke('simulate', '--out', tmp_path).exit_code == 2

    def test_bad_shape(self, tmp_path):
        assert invoke('simulate', '--shape', '4,zero', '--out', tmp_path).exit_code == 2


class TestFit:

    def test_gibbs_outputs(self, simulated, tmp_path):
        out = tmp_path / 'fit'
        result = invoke('fit', simulated / 'train.txt', '--out', out, *GIBBS_QUICK)
        assert result.exit_code == 0, result.output
        trace = (out / 'rank_trace.txt').read_text().splitlines()
        assert len(trace) == 8
        assert trace[0].split()[0] == '1'
        records = [json.loads(line) for line in (out / 'train_log.jsonl').read_text().splitlines()]
        assert len(records) == 8
        assert 'residual_rms' in records[0]
        assert 'rmse=' in (out / 'train_metrics.txt').read_text()
        checkpoint = load_checkpoint(out / 'model.npz')
        assert len(checkpoint.models) == 3
        assert checkpoint.samples.state.iteration == 8

    def test_continuous_data_is_standardized_by_default(self, simulated, simulated_binary, tmp_path):
        for source, expected in ((simulated, True), (simulated_binary, False)):
            out = tmp_path / f'fit_{source.name}'
            assert invoke('fit', source / 'train.txt', '--out', out, *GIBBS_QUICK).exit_code == 0
            assert load_checkpoint(out / 'model.npz').meta['standardized'] is expected
        out = tmp_path / 'raw'
        result = invoke('fit', simulated / 'train.txt', '--no-standardize', '--out', out, *GIBBS_QUICK)
        assert result.exit_code == 0, result.output
        assert load_checkpoint(out / 'model.npz').meta['standardized'] is False

    def test_online_outputs(self, simulated, tmp_path):
        out = tmp_path / 'online'
        result = invoke('fit', simulated / 'train.txt', '--engine', 'online', '--rank', '2', '--epochs', '3',
                        '--batch-size', '16', '--out', out)
        assert result.exit_code == 0, result.output
        assert len((out / 'train_log.jsonl').read_text().splitlines()) > 0
        checkpoint = load_checkpoint(out / 'model.npz')
        assert checkpoint.engine == 'online'
        assert checkpoint.models[0].ranks == (2, 2, 2)

    def test_online_rank_selection(self, simulated, tmp_path):
        out = tmp_path / 'auto'
        result = invoke('fit', simulated / 'train.txt', '--engine', 'online', '--rank', 'auto', '--epochs', '2',
                        '--out', out)
        assert result.exit_code == 0, result.output
        meta = load_checkpoint(out / 'model.npz').meta
        assert set(meta['rank_scores']) == {'3', '5', '10'}
        assert meta['estimated_ranks'][0] in (3, 5, 10)

    def test_unknown_engine(self, simulated, tmp_path):
        assert invoke('fit', simulated / 'train.txt', '--engine', 'nonsense', '--out', tmp_path).exit_code == 2

    def test_option_for_the_other_engine(self, simulated, tmp_path):
        result = invoke('fit', simulated / 'train.txt', '--engine', 'online', '--epsilon', '0.1', '--out', tmp_path)
        assert result.exit_code == 2

    def test_unreadable_data(self, tmp_path):
        path = tmp_path / 'garbage.txt'
        path.write_text('hello\n')
        assert invoke('fit', path, '--out', tmp_path / 'x', *GIBBS_QUICK).exit_code == 3
        assert invoke('fit', tmp_path / 'absent.txt', '--out', tmp_path / 'y', *GIBBS_QUICK).exit_code == 3

    def test_flags_beat_the_config_file(self, simulated, tmp_path):
        config = tmp_path / 'gibbs.cfg'
        config.write_text('BURN_IN=3\nN_SAMPLES=2\nBETA0=0.5\n')
        out = tmp_path / 'fit'
        result = invoke('fit', simulated / 'train.txt', '--config', config, '--samples', '4', '--rank', '2',
                        '--threads', '1', '--out', out)
        assert result.exit_code == 0, result.output
        manifest = json.loads((out / 'fit_manifest.json').read_text())
        assert manifest['config']['burn_in'] == 3
        assert manifest['config']['n_samples'] == 4
        assert manifest['config']['beta0'] == 0.5

    def test_same_seed_same_outputs(self, simulated, tmp_path):
        first, second = tmp_path / 'a', tmp_path / 'b'
        for out in (first, second):
            assert invoke('fit', simulated / 'train.txt', '--out', out, *GIBBS_QUICK).exit_code == 0
            assert invoke('predict', out / 'model.npz', simulated / 'test.txt',
                          '--out', out / 'pred.txt').exit_code == 0
        assert (first / 'rank_trace.txt').read_text() == (second / 'rank_trace.txt').read_text()
        assert (first / 'pred.txt').read_text() == (second / 'pred.txt').read_text()

    def test_resume_extends_the_chain(self, simulated, tmp_path):
        out = tmp_path / 'fit'
        assert invoke('fit', simulated / 'train.txt', '--out', out, *GIBBS_QUICK).exit_code == 0
        more = tmp_path / 'more'
        result = invoke('fit', simulated / 'train.txt', '--resume', out / 'model.npz', '--samples', '6',
                        '--threads', '1', '--out', more)
        assert result.exit_code == 0, result.output
        assert len((more / 'rank_trace.txt').read_text().splitlines()) == 11
        assert len(load_checkpoint(more / 'model.npz').models) == 6


class TestPredictAndEval:

    def test_continuous_end_to_end(self, simulated, tmp_path):
        fit_dir = tmp_path / 'fit'
        assert invoke('fit', simulated / 'train.txt', '--out', fit_dir, *GIBBS_QUICK).exit_code == 0
        pred = tmp_path / 'pred.txt'
        assert invoke('predict', fit_dir / 'model.npz', simulated / 'test.txt', '--out', pred).exit_code == 0
        assert read_sparse(pred).nnz == read_sparse(simulated / 'test.txt').nnz

        result = invoke('eval', pred, simulated / 'test.txt', '--model', fit_dir / 'model.npz',
                        '--truth', simulated / 'truth.npz')
        assert result.exit_code == 0, result.output
        assert 'rmse=' in result.output
        assert 'psnr=' in result.output
        assert 'rank_err=' in result.output

    def test_binary_end_to_end(self, simulated_binary, tmp_path):
        fit_dir = tmp_path / 'fit'
        assert invoke('fit', simulated_binary / 'train.txt', '--out', fit_dir, *GIBBS_QUICK).exit_code == 0
        pred = tmp_path / 'pred.txt'
        assert invoke('predict', fit_dir / 'model.npz', simulated_binary / 'test.txt',
                      '--out', pred).exit_code == 0
        probs = read_sparse(str(pred) + '.prob').values
        assert np.all((probs > 0) & (probs < 1))

        from_logits = invoke('eval', pred, simulated_binary / 'test.txt')
        from_probs = invoke('eval', str(pred) + '.prob', simulated_binary / 'test.txt', '--probabilities')
        assert from_logits.exit_code == 0 and from_probs.exit_code == 0
        assert 'auc=' in from_logits.output
        assert 'acc=' in from_probs.output

    def test_predict_shape_mismatch(self, simulated, tmp_path):
        fit_dir = tmp_path / 'fit'
        assert invoke('fit', simulated / 'train.txt', '--out', fit_dir, *GIBBS_QUICK).exit_code == 0
        other = tmp_path / 'other.txt'
        other.write_text('shape 2 2\nkind continuous\n1 1 0\n')
        result = invoke('predict', fit_dir / 'model.npz', other, '--out', tmp_path / 'pred.txt')
        assert result.exit_code == 2

    def test_eval_needs_every_test_entry(self, simulated, tmp_path):
        fit_dir = tmp_path / 'fit'
        assert invoke('fit', simulated / 'train.txt', '--out', fit_dir, *GIBBS_QUICK).exit_code == 0
        pred = tmp_path / 'pred.txt'
        assert invoke('predict', fit_dir / 'model.npz', simulated / 'train.txt', '--out', pred).exit_code == 0
        assert invoke('eval', pred, simulated / 'test.txt').exit_code == 2

    def test_model_and_truth_go_together(self, simulated, tmp_path):
        result = invoke('eval', simulated / 'test.txt', simulated / 'test.txt', '--truth', simulated / 'truth.npz')
        assert result.exit_code == 2


class TestBench:

    def test_single_size(self, tmp_path):
        out = tmp_path / 'bench.tsv'
        result = invoke('bench', '--sizes', '5', '--order', '3', '--missing', '0.5', '--threads', '1',
                        '--out', out)
        assert result.exit_code == 0, result.output
        lines = out.read_text().splitlines()
        assert lines[0].split('\t') == ['I', 'nnz', 'gibbs_seconds', 'online_seconds', 'gibbs_marginal',
                                         'online_marginal']
        assert len(lines) == 2
        assert lines[1].split('\t')[:2] == ['5', '62']

    def test_slope_line_with_several_sizes(self):
        result = invoke('bench', '--sizes', '4,6', '--order', '2', '--missing', '0.5', '--threads', '1')
        assert result.exit_code == 0, result.output
        assert 'log-log slope' in result.output

    def test_bad_sizes(self):
        assert invoke('bench', '--sizes', 'ten').exit_code == 2


class TestRuns:

    def test_lists_recorded_commands_newest_first(self, simulated, tmp_path):
        assert invoke('fit', simulated / 'train.txt', '--out', tmp_path / 'fit', *GIBBS_QUICK).exit_code == 0
        result = invoke('runs')
        assert result.exit_code == 0, result.output
        lines = result.output.splitlines()
        assert [line.split('\t')[1:3] for line in lines] == [['fit', 'success'], ['simulate', 'success']]

    def test_json_and_command_filter(self, simulated):
        result = invoke('runs', '--json', '--command', 'simulate')
        assert result.exit_code == 0, result.output
        record, = [json.loads(line) for line in result.output.splitlines()]
        assert record['command'] == 'simulate'
        assert record['config']['true_rank'] == 2

    def test_empty_registry(self, monkeypatch):
        monkeypatch.setenv('DATABASE_URL', 'none')
        result = invoke('runs')
        assert result.exit_code == 0
        assert 'no recorded runs' in result.output
