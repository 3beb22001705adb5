"""
Tests for preference, likelihood and divergence objectives
"""
import numpy as np
import pytest
from hypothesis import given, settings as hypothesis_settings
from hypothesis import strategies as st

from exceptions import DomainError
from models.objective import DPKDConfig, PairExample
from models.seq_model import SeqModel
from models.vocab import Prompt, Trajectory, Vocab
from services.objective_service import (
    FORWARD,
    REVERSE,
    bt_preference,
    dpkd_loss,
    dpkd_pair_terms,
    dpkd_preference_prob,
    effective_beta,
    first_token_divergence,
    forward_kld,
    implicit_reward,
    lm_loss,
    reverse_kld,
    total_loss,
    variant_loss,
    word_kd_loss,
)
from services.seqmodel_service import enumerate_trajectories, random_model, sample, seq_logprob, uniform_model


def _batch(student, teacher, n=8, seed=0, max_len=4):
    rng = np.random.default_rng(seed)
    batch = []
    for _ in range(n):
        x = Prompt(tuple(int(t) for t in rng.choice(teacher.vocab.content_ids(), size=2)))
        batch.append(PairExample(x, sample(teacher, x, max_len, rng=rng), sample(student, x, max_len, rng=rng)))
    return batch


def _single_step_pair(q_first, p_first):
    """Order-1 models over <bos> <eos> a whose first step is (eos, a) = q_first / p_first"""
    vocab = Vocab.build(['a'])

    def model(first):
        logits = np.zeros((3, 3))
        logits[0] = [-30.0, np.log(first[0]), np.log(first[1])]
        return SeqModel(vocab=vocab, order=1, logits=logits)
    return model(q_first), model(p_first)


@pytest.mark.parametrize('r1, r2, expected', [
    (0.3, 0.3, 0.5),
    (np.log(3.0), 0.0, 0.75),
    (1.7, -0.4, np.exp(1.7) / (np.exp(1.7) + np.exp(-0.4))),
])
def test_bt_preference_values(r1, r2, expected):
    assert bt_preference(r1, r2) == pytest.approx(expected, abs=1e-15)


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_bt_preference_is_symmetric(a, b):
    assert abs(bt_preference(a, b) + bt_preference(b, a) - 1.0) < 1e-12


def test_bt_preference_rejects_non_finite():
    with pytest.raises(DomainError):
        bt_preference(np.inf, 0.0)


def test_implicit_reward_vanishes_for_identical_models(teacher):
    y = sample(teacher, Prompt((2,)), 5, rng_seed=1)
    assert implicit_reward(teacher, teacher, Prompt((2,)), y, 2.0) == 0.0


def test_implicit_reward_is_linear_in_beta(student, teacher):
    x = Prompt((3,))
    y = sample(teacher, x, 5, rng_seed=2)
    once = implicit_reward(student, teacher, x, y, 1.5)
    assert implicit_reward(student, teacher, x, y, 3.0) == pytest.approx(2 * once, rel=1e-14)


def test_implicit_reward_matches_enumerated_probabilities(student, teacher):
    x = Prompt((4,))
    q = dict(enumerate_trajectories(student, x, 3))
    p = dict(enumerate_trajectories(teacher, x, 3))
    for y in list(q)[::11]:
        expected = 0.7 * (np.log(q[y]) - np.log(p[y]))
        assert implicit_reward(student, teacher, x, y, 0.7) == pytest.approx(expected, abs=1e-10)


def test_preference_prob_is_half_for_equal_arguments(student, teacher):
    x = Prompt((2,))
    y = sample(teacher, x, 4, rng_seed=3)
    assert dpkd_preference_prob(student, teacher, x, y, y, 1.0) == 0.5
    y_s = sample(student, x, 4, rng_seed=4)
    assert dpkd_preference_prob(teacher, teacher, x, y, y_s, 1.0) == 0.5


def test_preference_prob_on_constructed_models():
    student, teacher = _single_step_pair((0.2, 0.8), (0.5, 0.5))
    eos = Trajectory((1,), True)
    a = Trajectory((2,), False)
    expected = 1.0 / (1.0 + np.exp(-(np.log(0.2 / 0.5) - np.log(0.8 / 0.5))))
    assert dpkd_preference_prob(student, teacher, Prompt(), eos, a, 1.0) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize('length_norm', [False, True])
def test_dpkd_loss_floor_for_identical_models(teacher, length_norm):
    batch = _batch(teacher, teacher)
    assert dpkd_loss(batch, teacher, teacher, DPKDConfig(beta=2.5, length_norm=length_norm)) == pytest.approx(
        np.log(2.0), abs=1e-12)


def test_dpkd_loss_closed_form_for_one_pair():
    student, teacher = _single_step_pair((0.75, 0.25), (0.5, 0.5))
    pair = PairExample(Prompt(), Trajectory((1,), True), Trajectory((2,), False))
    cfg = DPKDConfig(beta=1.0, length_norm=False)
    # inner term is log(1.5) - log(0.5) = ln 3
    assert dpkd_loss([pair], student, teacher, cfg) == pytest.approx(-np.log(0.75), abs=1e-12)


@pytest.mark.parametrize('length_norm', [False, True])
def test_dpkd_loss_matches_four_log_terms(student, teacher, length_norm):
    cfg = DPKDConfig(beta=1.3, length_norm=length_norm)
    batch = _batch(student, teacher)
    expected = []
    for pair in batch:
        beta_t = cfg.beta / len(pair.y_t) if length_norm else cfg.beta
        beta_s = cfg.beta / len(pair.y_s) if length_norm else cfg.beta
        u = (beta_t * (seq_logprob(student, pair.x, pair.y_t) - seq_logprob(teacher, pair.x, pair.y_t))
             - beta_s * (seq_logprob(student, pair.x, pair.y_s) - seq_logprob(teacher, pair.x, pair.y_s)))
        expected.append(np.log1p(np.exp(-u)))
    assert dpkd_loss(batch, student, teacher, cfg) == pytest.approx(np.mean(expected), abs=1e-10)


def test_pair_terms_expose_inner_term(student, teacher):
    cfg = DPKDConfig(beta=0.9)
    pair = _batch(student, teacher, n=1, seed=5)[0]
    terms = dpkd_pair_terms(pair, student, teacher, cfg)
    assert terms.beta_t == effective_beta(pair.y_t, cfg)
    assert terms.logq_t == pytest.approx(seq_logprob(student, pair.x, pair.y_t), abs=1e-12)
    assert terms.inner == pytest.approx(terms.reward_t - terms.reward_s, abs=1e-15)


def test_effective_beta_counts_eos():
    y = Trajectory((3, 4, 1), True)
    assert effective_beta(y, DPKDConfig(beta=1.5, length_norm=True)) == 0.5
    assert effective_beta(y, DPKDConfig(beta=1.5, length_norm=False)) == 1.5


def test_dpkd_config_validation():
    with pytest.raises(DomainError):
        DPKDConfig(beta=0.0)
    with pytest.raises(DomainError):
        DPKDConfig(lam=-0.1)
    with pytest.raises(DomainError):
        DPKDConfig(variant='orpo')


def test_lm_loss_of_uniform_model():
    vocab = Vocab.build(['a', 'b'])
    pairs = [(Prompt((2,)), Trajectory((3, 2, 1), True)), (Prompt(), Trajectory((1,), True))]
    assert lm_loss(uniform_model(vocab, 2), pairs) == pytest.approx(np.log(4.0), abs=1e-12)


def test_lm_loss_is_mean_per_token_nll(student):
    pairs = [(Prompt((2,)), sample(student, Prompt((2,)), 5, rng_seed=s)) for s in range(6)]
    expected = np.mean([-seq_logprob(student, x, y) / len(y) for x, y in pairs])
    assert lm_loss(student, pairs) == pytest.approx(expected, abs=1e-12)


def test_lm_loss_needs_data(student):
    with pytest.raises(DomainError):
        lm_loss(student, [])


def test_total_loss_components(student, teacher):
    batch = _batch(student, teacher, n=4)
    corpus = [(p.x, p.y_t) for p in batch]
    zero = total_loss(batch, corpus, student, teacher, DPKDConfig(lam=0.0))
    assert zero.total == zero.kd_loss
    breakdown = total_loss(batch, corpus, student, teacher, DPKDConfig(lam=0.3))
    assert breakdown.total == pytest.approx(breakdown.kd_loss + 0.3 * breakdown.lm_loss, abs=1e-12)


def test_kld_of_identical_models_is_zero(teacher):
    assert forward_kld(teacher, teacher, Prompt((2,)), 3) == 0.0
    assert reverse_kld(teacher, teacher, Prompt((2,)), 3) == 0.0


def test_single_step_kld_by_hand():
    student, teacher = _single_step_pair((0.9, 0.1), (0.5, 0.5))
    forward = 0.5 * np.log(0.5 / 0.9) + 0.5 * np.log(0.5 / 0.1)
    reverse = 0.9 * np.log(0.9 / 0.5) + 0.1 * np.log(0.1 / 0.5)
    assert forward_kld(student, teacher, Prompt(), 1) == pytest.approx(forward, abs=1e-9)
    assert reverse_kld(student, teacher, Prompt(), 1) == pytest.approx(reverse, abs=1e-9)
    assert first_token_divergence(student, teacher, [Prompt()], FORWARD) == pytest.approx(forward, abs=1e-9)
    assert first_token_divergence(student, teacher, [Prompt()], REVERSE) == pytest.approx(reverse, abs=1e-9)


def test_first_token_divergence_of_identical_models(teacher):
    prompts = [Prompt((2,)), Prompt((3, 4)), Prompt()]
    assert first_token_divergence(teacher, teacher, prompts, REVERSE) == 0.0


def test_first_token_divergence_rejects_unknown_direction(student, teacher):
    with pytest.raises(DomainError):
        first_token_divergence(student, teacher, [Prompt()], 'sideways')


def test_simpo_equal_responses_without_margin(student, teacher):
    pair = _batch(student, teacher, n=1, seed=8)[0]
    same = PairExample(pair.x, pair.y_t, pair.y_t)
    cfg = DPKDConfig(variant='simpo', gamma_margin=0.0)
    assert variant_loss([same], student, teacher, cfg) == pytest.approx(np.log(2.0), abs=1e-12)


def test_ipo_identical_models_and_responses(teacher):
    pair = _batch(teacher, teacher, n=1, seed=9)[0]
    same = PairExample(pair.x, pair.y_t, pair.y_t)
    assert variant_loss([same], teacher, teacher, DPKDConfig(variant='ipo', tau=0.5)) == pytest.approx(1.0, abs=1e-12)


def test_variants_match_raw_log_probabilities(student, teacher):
    batch = _batch(student, teacher, n=5, seed=10)
    beta, tau, gamma = 0.8, 0.25, 0.4

    def logq(x, y):
        return seq_logprob(student, x, y)

    def logp(x, y):
        return seq_logprob(teacher, x, y)

    simpo = np.mean([np.log1p(np.exp(-(beta / len(p.y_t) * logq(p.x, p.y_t)
                                       - beta / len(p.y_s) * logq(p.x, p.y_s) - gamma))) for p in batch])
    ipo = np.mean([((logq(p.x, p.y_t) - logq(p.x, p.y_s)) - (logp(p.x, p.y_t) - logp(p.x, p.y_s))
                    - 1 / (2 * tau)) ** 2 for p in batch])
    cpo_ratio = [np.log1p(np.exp(-beta * (logq(p.x, p.y_t) - logq(p.x, p.y_s)))) for p in batch]
    assert variant_loss(batch, student, teacher, DPKDConfig(beta=beta, variant='simpo', gamma_margin=gamma)) == \
        pytest.approx(simpo, abs=1e-10)
    assert variant_loss(batch, student, teacher, DPKDConfig(variant='ipo', tau=tau)) == pytest.approx(ipo, abs=1e-10)
    default_sign = np.mean([c + logq(p.x, p.y_t) for c, p in zip(cpo_ratio, batch)])
    assert variant_loss(batch, student, teacher, DPKDConfig(beta=beta, variant='cpo', cpo_literal=False)) == \
        pytest.approx(default_sign, abs=1e-10)
    nll = np.mean([c - logq(p.x, p.y_t) for c, p in zip(cpo_ratio, batch)])
    cfg = DPKDConfig(beta=beta, variant='cpo', cpo_literal=False, cpo_nll_sign=True)
    assert variant_loss(batch, student, teacher, cfg) == pytest.approx(nll, abs=1e-10)


def test_literal_cpo_keeps_only_the_constant_sigmoid(student, teacher):
    batch = _batch(student, teacher, n=3, seed=12)
    logq_t = [seq_logprob(student, p.x, p.y_t) for p in batch]
    default_sign = np.mean([np.log(2.0) + v for v in logq_t])
    nll = np.mean([np.log(2.0) - v for v in logq_t])
    assert variant_loss(batch, student, teacher, DPKDConfig(variant='cpo')) == pytest.approx(default_sign, abs=1e-10)
    cfg = DPKDConfig(variant='cpo', cpo_nll_sign=True)
    assert variant_loss(batch, student, teacher, cfg) == pytest.approx(nll, abs=1e-10)


def test_word_kd_loss_vanishes_for_identical_models(teacher):
    pairs = [(p.x, p.y_t) for p in _batch(teacher, teacher, n=4)]
    assert word_kd_loss(teacher, teacher, pairs) == pytest.approx(0.0, abs=1e-15)


@hypothesis_settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_kld_is_nonnegative(seed):
    vocab = Vocab.build(['a', 'b'])
    student = random_model(vocab, 1, seed=seed)
    teacher = random_model(vocab, 1, seed=seed + 1)
    assert forward_kld(student, teacher, Prompt((2,)), 3) >= 0.0
    assert reverse_kld(student, teacher, Prompt((2,)), 3) >= 0.0
