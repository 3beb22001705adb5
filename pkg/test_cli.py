"""
End-to-end tests of the dpkd-lab command line and run configuration
"""
import csv
import json

import pytest

from exceptions import DomainError, ParseError
from main import run
from models.run_config import RunConfig


def _rows(path):
    with path.open(newline='', encoding='utf-8') as handle:
        return list(csv.DictReader(handle))


def _config(tmp_path, data, name='run.json'):
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding='utf-8')
    return str(path)


def test_verify_writes_oracle_table_and_manifest(tmp_path):
    out = tmp_path / 'verify'
    assert run(['verify', '--n-instances', '2', '--output-dir', str(out)]) == 0
    rows = _rows(out / 'oracles.csv')
    assert {r['name'] for r in rows} >= {'z_consistency', 'telescoping', 'gradient_check'}
    assert all(r['passed'] == 'True' for r in rows)
    manifest = json.loads((out / 'manifest.json').read_text(encoding='utf-8'))
    assert manifest['command'] == 'verify'
    assert manifest['seed'] == 0
    assert manifest['config']['n_instances'] == 2
    assert len(manifest['config_hash']) == 64


def test_gradcheck_writes_one_row_per_instance(tmp_path):
    out = tmp_path / 'gradcheck'
    assert run(['gradcheck', '--n-instances', '3', '--seed', '4', '--output-dir', str(out)]) == 0
    rows = _rows(out / 'gradcheck.csv')
    assert [r['instance'] for r in rows] == ['0', '1', '2']
    assert all(float(r['max_rel_err']) < 1e-5 for r in rows)


def test_usage_errors_exit_with_one(tmp_path):
    assert run(['no-such-command']) == 1
    assert run([]) == 1
    assert run(['verify', '--config', str(tmp_path / 'missing.json')]) == 1


def test_help_exits_cleanly():
    assert run(['--help']) == 0


def test_bad_config_files_exit_with_one(tmp_path):
    unknown = _config(tmp_path, {'epochs': 2, 'colour': 'blue'})
    assert run(['verify', '--config', unknown]) == 1
    bad_value = _config(tmp_path, {'lr': -1.0}, 'neg.json')
    assert run(['distill', '--config', bad_value]) == 1
    malformed = tmp_path / 'broken.json'
    malformed.write_text('{"epochs": ', encoding='utf-8')
    assert run(['distill', '--config', str(malformed)]) == 1


def test_missing_input_file_exits_with_one(tmp_path):
    cfg = _config(tmp_path, {'train_path': str(tmp_path / 'nope.jsonl')})
    assert run(['sft', '--config', cfg, '--output-dir', str(tmp_path / 'out')]) == 1


def test_file_runs_need_teacher_and_data(tmp_path):
    data = tmp_path / 'data'
    assert run(['gen-data', '--n-examples', '20', '--output-dir', str(data)]) == 0
    cfg = _config(tmp_path, {'train_path': str(data / 'train.jsonl')})
    assert run(['distill', '--config', cfg, '--output-dir', str(tmp_path / 'out')]) == 1


def test_gen_data_writes_splits(tmp_path):
    out = tmp_path / 'data'
    assert run(['gen-data', '--n-examples', '30', '--grammar-seed', '3', '--output-dir', str(out)]) == 0
    counts = [len((out / f"{name}.jsonl").read_text(encoding='utf-8').splitlines())
              for name in ('train', 'valid', 'test')]
    assert counts == [24, 3, 3]
    record = json.loads((out / 'train.jsonl').read_text(encoding='utf-8').splitlines()[0])
    assert set(record) == {'instruction', 'input', 'output'}


def test_distill_is_reproducible(tmp_path):
    first, second = tmp_path / 'first', tmp_path / 'second'
    for out in (first, second):
        assert run(['distill', '--epochs', '2', '--seed', '1', '--output-dir', str(out)]) == 0
    for name in ('metrics.csv', 'student.json', 'teacher.json'):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    rows = _rows(first / 'metrics.csv')
    assert [r['epoch'] for r in rows] == ['0', '1', '2']
    assert all(r['wall_ms'] == '0.0' for r in rows)


def test_distill_flags_reach_the_manifest(tmp_path):
    out = tmp_path / 'out'
    args = ['distill', '--method', 'minillm', '--epochs', '1', '--beta', '0.5', '--no-lm-loss',
            '--no-length-norm', '--output-dir', str(out)]
    assert run(args) == 0
    config = json.loads((out / 'manifest.json').read_text(encoding='utf-8'))['config']
    assert config['method'] == 'minillm'
    assert config['dpkd'] == {'beta': 0.5, 'lam': 0.0, 'length_norm': False}


def test_unknown_method_exits_with_one(tmp_path):
    assert run(['distill', '--method', 'ppo', '--output-dir', str(tmp_path / 'out')]) == 1


def test_ablation_table(tmp_path):
    out = tmp_path / 'ablation'
    assert run(['distill', '--ablation', '--epochs', '1', '--output-dir', str(out)]) == 0
    rows = _rows(out / 'ablation.csv')
    assert [r['setting'] for r in rows] == ['full', 'no_lm_loss', 'no_length_norm']
    for setting in ('full', 'no_lm_loss', 'no_length_norm'):
        assert (out / f"metrics_{setting}.csv").is_file()


def test_curves_reexport_metrics(tmp_path):
    out = tmp_path / 'run'
    assert run(['distill', '--epochs', '1', '--output-dir', str(out)]) == 0
    assert run(['curves', '--output-dir', str(out)]) == 0
    assert (out / 'curves.csv').read_bytes() == (out / 'metrics.csv').read_bytes()


def test_curves_without_metrics_exit_with_one(tmp_path):
    assert run(['curves', '--output-dir', str(tmp_path / 'empty')]) == 1


def test_sft_then_eval_from_files(tmp_path):
    data, model_dir, eval_dir = tmp_path / 'data', tmp_path / 'sft', tmp_path / 'eval'
    assert run(['gen-data', '--n-examples', '40', '--output-dir', str(data)]) == 0
    train_cfg = _config(tmp_path, {'train_path': str(data / 'train.jsonl'),
                                   'valid_path': str(data / 'valid.jsonl')}, 'train.json')
    assert run(['sft', '--config', train_cfg, '--epochs', '2', '--output-dir', str(model_dir)]) == 0
    assert (model_dir / 'student.json').is_file()

    eval_cfg = _config(tmp_path, {'test_path': str(data / 'test.jsonl'),
                                  'student_path': str(model_dir / 'student.json')}, 'eval.json')
    assert run(['eval', '--config', eval_cfg, '--output-dir', str(eval_dir)]) == 0
    report = json.loads((eval_dir / 'eval_report.json').read_text(encoding='utf-8'))
    assert report['aggregate']['n_examples'] == 4
    assert not (eval_dir / 'judge.jsonl').exists()


def test_eval_of_a_test_file_needs_a_student(tmp_path):
    data = tmp_path / 'data'
    assert run(['gen-data', '--n-examples', '20', '--output-dir', str(data)]) == 0
    assert run(['eval', '--test', str(data / 'test.jsonl'), '--output-dir', str(tmp_path / 'eval')]) == 1


def test_noise_sweep_table(tmp_path):
    out = tmp_path / 'sweep'
    assert run(['noise-sweep', '--n-per-scale', '2', '--output-dir', str(out)]) == 0
    rows = _rows(out / 'noise_sweep.csv')
    assert len(rows) == 8
    zero = [r for r in rows if float(r['scale']) == 0.0]
    assert all(float(r['rkld']) < 1e-9 for r in zero)


def test_run_config_overrides_and_validation():
    cfg = RunConfig.from_dict({'epochs': 5, 'dpkd': {'beta': 2.0}})
    updated = cfg.with_overrides(epochs=None, lr=0.3, lam=0.0)
    assert updated.epochs == 5
    assert updated.lr == 0.3
    assert updated.dpkd == {'beta': 2.0, 'lam': 0.0}
    assert updated.trainer_config().dpkd.beta == 2.0
    assert cfg.config_hash() == RunConfig.from_dict({'epochs': 5, 'dpkd': {'beta': 2.0}}).config_hash()
    assert cfg.config_hash() != updated.config_hash()


def test_run_config_selects_the_cpo_likelihood_sign():
    assert RunConfig.from_dict({'method': 'cpo'}).trainer_config().dpkd.cpo_nll_sign is False
    cfg = RunConfig.from_dict({'method': 'cpo', 'dpkd': {'cpo_literal': False, 'cpo_nll_sign': True}})
    dpkd = cfg.trainer_config().dpkd
    assert dpkd.cpo_nll_sign is True
    assert dpkd.cpo_literal is False


@pytest.mark.parametrize('data', [
    {'epoch': 3},
    {'dpkd': {'beta': 0.0}},
    {'optimizer': {'name': 'rmsprop'}},
    {'length_range': [2]},
    {'split_boundaries': [70, 30]},
    {'method': 'ppo'},
])
def test_run_config_rejects_bad_documents(data):
    with pytest.raises(DomainError):
        RunConfig.from_dict(data)


def test_run_config_load_errors(tmp_path):
    with pytest.raises(DomainError):
        RunConfig.load(tmp_path / 'missing.json')
    broken = tmp_path / 'broken.json'
    broken.write_text('{"epochs": 2,,}', encoding='utf-8')
    with pytest.raises(ParseError):
        RunConfig.load(broken)
