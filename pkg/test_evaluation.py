"""
Tests for Rouge-L, exact match, length-split reports, the noise sweep and curve files
"""
import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings as hypothesis_settings, strategies as st

from exceptions import DomainError
from models.evaluation import LengthSplit
from models.instruction import Corpus, InstructionExample
from models.training import MetricsRow
from services.evaluation_service import (
    evaluate,
    exact_match,
    export_curves,
    generate,
    lcs_length,
    load_curves,
    noise_sweep,
    rouge_l,
    save_eval_report,
)
from services.seqmodel_service import uniform_model


def test_rouge_l_by_hand():
    assert rouge_l('a b c d', 'a c d') == pytest.approx(6 / 7, abs=1e-12)
    assert rouge_l('a b', 'a b') == 1.0
    assert rouge_l('x y', 'a b') == 0.0
    assert rouge_l('', 'a b') == 0.0


def test_rouge_l_on_token_ids():
    assert rouge_l((2, 3, 4), (2, 4)) == pytest.approx(0.8, abs=1e-12)


def test_rouge_l_needs_a_reference():
    with pytest.raises(DomainError):
        rouge_l('a', '')


def _brute_force_lcs(a, b):
    for size in range(min(len(a), len(b)), 0, -1):
        subsequences = set(itertools.combinations(b, size))
        if any(c in subsequences for c in itertools.combinations(a, size)):
            return size
    return 0


@hypothesis_settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 3), max_size=7), st.lists(st.integers(0, 3), max_size=7))
def test_lcs_matches_brute_force(a, b):
    assert lcs_length(a, b) == _brute_force_lcs(a, b)


def test_exact_match_normalizes_whitespace():
    assert exact_match('  a  b ', 'a b') == 1
    assert exact_match('a b', 'A b') == 0
    assert exact_match((2, 3), (2, 3)) == 1


def test_length_split_buckets():
    split = LengthSplit((30, 70))
    assert split.ranges() == [(0, 30), (30, 70), (70, None)]
    assert [split.bucket_of(n) for n in (0, 29, 30, 69, 70, 500)] == [0, 0, 1, 1, 2, 2]


@pytest.mark.parametrize('boundaries', [(), (0, 5), (5, 5), (7, 3)])
def test_length_split_validation(boundaries):
    with pytest.raises(DomainError):
        LengthSplit(boundaries)


def _corpus(vocab, records):
    return Corpus(examples=[InstructionExample(instruction=i, output=o) for i, o in records], vocab=vocab)


def test_evaluate_reports_each_bucket(toy_world):
    report = evaluate(toy_world.teacher, toy_world.test, LengthSplit((3, 5)), max_len=8)
    assert report.n_examples == len(toy_world.test)
    assert sum(s.n for s in report.splits) == len(toy_world.test)
    for score in report.splits:
        if score.n:
            assert 0.0 <= score.rouge_l_mean <= 1.0
            assert 0.0 <= score.exact_match_pct <= 100.0
        else:
            assert score.rouge_l_mean is None


def test_evaluate_by_hand(vocab):
    model = uniform_model(vocab, 2)
    logits = np.array(model.logits)
    logits[:, 2] = 50.0
    logits[model.context_index([2, 2]), :] = 0.0
    logits[model.context_index([2, 2]), vocab.eos_id] = 50.0
    model = model.with_logits(logits)
    test_set = _corpus(vocab, [('b', 'a a'), ('c', 'a b'), ('b c', 'b')])
    report = evaluate(model, test_set, LengthSplit((2,)), max_len=4)
    # every prompt generates "a a"
    assert report.exact_match_pct == pytest.approx(100 / 3)
    assert report.rouge_l_mean == pytest.approx((1.0 + 0.5 + 0.0) / 3)
    assert [s.n for s in report.splits] == [1, 2]
    assert report.splits[0].rouge_l_mean == 0.0


def test_evaluate_needs_examples(toy_world):
    with pytest.raises(DomainError):
        evaluate(toy_world.teacher, toy_world.test.with_examples([]))


def test_eval_report_is_json(toy_world, tmp_path):
    path = save_eval_report(evaluate(toy_world.teacher, toy_world.test), tmp_path / 'eval_report.json')
    data = json.loads(path.read_text(encoding='utf-8'))
    assert set(data) == {'aggregate', 'splits'}
    assert [s['range'] for s in data['splits']] == ['[0,30)', '[30,70)', '>=70']


def test_generation_threads_keep_order(toy_world):
    prompts = toy_world.train.prompts()[:12]
    serial = generate(toy_world.student_init, prompts, 8, temperature=1.0, rng_seed=2, max_workers=1)
    threaded = generate(toy_world.student_init, prompts, 8, temperature=1.0, rng_seed=2, max_workers=4)
    assert serial == threaded


def test_noise_sweep_zero_scale_reproduces_the_base(toy_world):
    rows = noise_sweep(toy_world.teacher, toy_world.teacher, toy_world.valid, [0.0], 3, beta=1.0)
    assert len(rows) == 3
    for row in rows:
        assert row.rkld < 1e-9
        assert abs(row.mean_implicit_reward) < 1e-9


def test_noise_sweep_divergence_grows_with_scale(toy_world):
    scales = [0.0, 0.05, 0.1, 0.2]
    rows = noise_sweep(toy_world.student_init, toy_world.teacher, toy_world.valid, scales, 10, beta=1.0)
    assert len(rows) == 40
    assert all(r.rkld < 1e-9 for r in rows if r.scale == 0.0)
    means = [np.mean([r.rkld for r in rows if r.scale == s]) for s in scales]
    assert all(later >= earlier for earlier, later in zip(means, means[1:]))
    assert means[-1] > 0.0
    assert [r.seed for r in rows[:10]] == list(range(10))


def test_noise_sweep_validation(toy_world):
    with pytest.raises(DomainError):
        noise_sweep(toy_world.teacher, toy_world.teacher, toy_world.valid, [-0.1], 1, beta=1.0)
    with pytest.raises(DomainError):
        noise_sweep(toy_world.teacher, toy_world.teacher, toy_world.valid, [0.1], 0, beta=1.0)


def test_curves_file_round_trip(tmp_path):
    rows = [
        MetricsRow(epoch=0, kd_loss=0.69, lm_loss=1.5, total_loss=0.84, first_token_rkld=0.2, rouge_l=0.1),
        MetricsRow(epoch=1, kd_loss=0.6, lm_loss=1.2, total_loss=0.72),
    ]
    path = export_curves(rows, tmp_path / 'curves.csv')
    lines = path.read_text(encoding='utf-8').splitlines()
    assert lines[0] == 'epoch,kd_loss,lm_loss,total_loss,mean_implicit_reward,first_token_kld,first_token_rkld,rouge_l,wall_ms'
    assert lines[2] == '1,0.6,1.2,0.72,,,,,0.0'
    assert load_curves(path) == rows


def test_curves_need_rows(tmp_path):
    with pytest.raises(DomainError):
        export_curves([], tmp_path / 'curves.csv')
