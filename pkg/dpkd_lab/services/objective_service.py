"""
Scalar objectives: preference loss, implicit reward, KL divergences, LM loss and variants
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, log_expit, logsumexp, softmax

from exceptions import DomainError
from models.objective import DPKDConfig, LossBreakdown, PairExample, PairTerms, Variant
from models.seq_model import SeqModel
from models.vocab import Prompt, Trajectory
from services.seqmodel_service import (
    enumerate_trajectories,
    log_prob_table,
    logprob_grad,
    score_with_table,
    step_indices,
)

logger = logging.getLogger(__name__)

FORWARD = 'forward'
REVERSE = 'reverse'


def _require_same_space(student: SeqModel, teacher: SeqModel):
    if student.vocab != teacher.vocab:
        raise DomainError("Student and teacher must share a vocabulary")


def bt_preference(r1: float, r2: float) -> float:
    """Bradley-Terry probability of choosing the first option: sigma(r1 - r2)"""
    if not (np.isfinite(r1) and np.isfinite(r2)):
        raise DomainError("Rewards must be finite")
    return float(expit(r1 - r2))


def implicit_reward(student: SeqModel, teacher: SeqModel, x: Prompt, y: Trajectory, beta: float) -> float:
    """beta * (log q(y|x) - log p(y|x))"""
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta}")
    logq = score_with_table(log_prob_table(student), student, x, y)
    logp = score_with_table(log_prob_table(teacher), teacher, x, y)
    return beta * (logq - logp)


def dpkd_preference_prob(student: SeqModel, teacher: SeqModel, x: Prompt,
                         y_t: Trajectory, y_s: Trajectory, beta: float) -> float:
    return bt_preference(
        implicit_reward(student, teacher, x, y_t, beta),
        implicit_reward(student, teacher, x, y_s, beta),
    )


def effective_beta(y: Trajectory, cfg: DPKDConfig) -> float:
    """beta, or beta/|y| with |y| counting EOS when length normalization is on"""
    return cfg.beta / len(y.tokens) if cfg.length_norm else cfg.beta


def dpkd_pair_terms(pair: PairExample, student: SeqModel, teacher: SeqModel, cfg: DPKDConfig,
                    student_logp: Optional[np.ndarray] = None,
                    teacher_logp: Optional[np.ndarray] = None) -> PairTerms:
    """The four log items of one pair"""
    if student_logp is None:
        student_logp = log_prob_table(student)
    if teacher_logp is None:
        teacher_logp = log_prob_table(teacher)
    return PairTerms(
        logq_t=score_with_table(student_logp, student, pair.x, pair.y_t),
        logp_t=score_with_table(teacher_logp, teacher, pair.x, pair.y_t),
        logq_s=score_with_table(student_logp, student, pair.x, pair.y_s),
        logp_s=score_with_table(teacher_logp, teacher, pair.x, pair.y_s),
        beta_t=effective_beta(pair.y_t, cfg),
        beta_s=effective_beta(pair.y_s, cfg),
    )


def contrast_coefficients(model: SeqModel, x: Prompt, y_a: Trajectory, y_b: Trajectory,
                          coef_a: float, coef_b: float) -> np.ndarray:
    """Table C with coef_a * log q(y_a|x) - coef_b * log q(y_b|x) = sum C*log_softmax(logits)"""
    table = np.zeros_like(model.logits)
    if coef_a:
        np.add.at(table, step_indices(model, x, y_a), coef_a)
    if coef_b:
        np.add.at(table, step_indices(model, x, y_b), -coef_b)
    return table


def contrast_value(model: SeqModel, coefficients: np.ndarray, lse: Optional[np.ndarray] = None) -> float:
    """sum C*logits - sum_row (sum_tok C) * logsumexp(row).

    Rows visited equally often by both sides carry a zero row weight, so their
    normalizers cancel exactly rather than up to rounding.
    """
    if lse is None:
        lse = logsumexp(model.logits, axis=1)
    return float(np.sum(coefficients * model.logits) - np.sum(coefficients.sum(axis=1) * lse))


def preference_inners(batch: Sequence[PairExample], student: SeqModel, teacher: SeqModel,
                      cfg: DPKDConfig) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Inner terms u of every pair and the student coefficient tables behind them"""
    if not batch:
        raise DomainError("Batch must be nonempty")
    _require_same_space(student, teacher)
    student_lse = logsumexp(student.logits, axis=1)
    teacher_lse = logsumexp(teacher.logits, axis=1)
    inners, tables = [], []
    for pair in batch:
        beta_t, beta_s = effective_beta(pair.y_t, cfg), effective_beta(pair.y_s, cfg)
        q_table = contrast_coefficients(student, pair.x, pair.y_t, pair.y_s, beta_t, beta_s)
        p_table = contrast_coefficients(teacher, pair.x, pair.y_t, pair.y_s, beta_t, beta_s)
        inners.append(contrast_value(student, q_table, student_lse) - contrast_value(teacher, p_table, teacher_lse))
        tables.append(q_table)
    return np.array(inners), tables


def dpkd_pair_losses(batch: Sequence[PairExample], student: SeqModel, teacher: SeqModel,
                     cfg: DPKDConfig) -> np.ndarray:
    """-log sigma(beta_t log q/p(y_t) - beta_s log q/p(y_s)) for every pair"""
    inner, _ = preference_inners(batch, student, teacher, cfg)
    return -log_expit(inner)


def dpkd_loss(batch: Sequence[PairExample], student: SeqModel, teacher: SeqModel, cfg: DPKDConfig) -> float:
    return float(np.mean(dpkd_pair_losses(batch, student, teacher, cfg)))


def lm_loss(student: SeqModel, corpus_batch: Sequence[Tuple[Prompt, Trajectory]]) -> float:
    """Mean over sequences of the per-token negative log-likelihood"""
    if not corpus_batch:
        raise DomainError("LM batch must be nonempty")
    log_probs = log_prob_table(student)
    losses = [-score_with_table(log_probs, student, x, y) / len(y.tokens) for x, y in corpus_batch]
    return float(np.mean(losses))


def lm_loss_grad(student: SeqModel, corpus_batch: Sequence[Tuple[Prompt, Trajectory]]) -> np.ndarray:
    if not corpus_batch:
        raise DomainError("LM batch must be nonempty")
    probs = softmax(student.logits, axis=1)
    grad = np.zeros_like(student.logits)
    for x, y in corpus_batch:
        grad -= logprob_grad(student, x, y, probs) / len(y.tokens)
    return grad / len(corpus_batch)


def total_loss(batch: Sequence[PairExample], corpus_batch: Sequence[Tuple[Prompt, Trajectory]],
               student: SeqModel, teacher: SeqModel, cfg: DPKDConfig) -> LossBreakdown:
    """L = L_kd + lambda * L_pt, with L_kd the configured preference form"""
    kd = variant_loss(batch, student, teacher, cfg)
    lm = lm_loss(student, corpus_batch)
    return LossBreakdown(kd_loss=kd, lm_loss=lm, total=kd + cfg.lam * lm)


def _aligned_support(student: SeqModel, teacher: SeqModel, x: Prompt, max_len: int,
                     budget: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    _require_same_space(student, teacher)
    q_support = enumerate_trajectories(student, x, max_len, budget)
    p_support = enumerate_trajectories(teacher, x, max_len, budget)
    # both enumerations walk the same tree in the same order
    q = np.array([prob for _, prob in q_support])
    p = np.array([prob for _, prob in p_support])
    return q, p


def forward_kld(student: SeqModel, teacher: SeqModel, x: Prompt, max_len: int,
                budget: Optional[int] = None) -> float:
    """Exact sum_y p(y|x) log(p/q) over the enumerated space"""
    q, p = _aligned_support(student, teacher, x, max_len, budget)
    return max(float(np.sum(p * (np.log(p) - np.log(q)))), 0.0)


def reverse_kld(student: SeqModel, teacher: SeqModel, x: Prompt, max_len: int,
                budget: Optional[int] = None) -> float:
    """Exact sum_y q(y|x) log(q/p) over the enumerated space"""
    q, p = _aligned_support(student, teacher, x, max_len, budget)
    return max(float(np.sum(q * (np.log(q) - np.log(p)))), 0.0)


def row_kl(log_a: np.ndarray, log_b: np.ndarray) -> np.ndarray:
    """KL(a || b) for each pair of log-distribution rows"""
    return np.sum(np.exp(log_a) * (log_a - log_b), axis=-1)


def first_token_divergence(student: SeqModel, teacher: SeqModel, prompts: Sequence[Prompt],
                           direction: str = REVERSE) -> float:
    """KL between first-step next-token distributions, averaged over prompts"""
    if not prompts:
        raise DomainError("Prompt list must be nonempty")
    if direction not in (FORWARD, REVERSE):
        raise DomainError(f"Unknown divergence direction '{direction}'")
    _require_same_space(student, teacher)
    log_q = log_prob_table(student)
    log_p = log_prob_table(teacher)
    q_rows = log_q[[student.context_index(x.tokens) for x in prompts]]
    p_rows = log_p[[teacher.context_index(x.tokens) for x in prompts]]
    if direction == FORWARD:
        values = row_kl(p_rows, q_rows)
    else:
        values = row_kl(q_rows, p_rows)
    return max(float(np.mean(values)), 0.0)


def variant_loss(batch: Sequence[PairExample], student: SeqModel, teacher: SeqModel, cfg: DPKDConfig) -> float:
    """Preference loss in the form selected by cfg.variant"""
    variant = Variant.parse(cfg.variant)
    if variant == Variant.DPKD:
        return dpkd_loss(batch, student, teacher, cfg)
    if not batch:
        raise DomainError("Batch must be nonempty")
    _require_same_space(student, teacher)
    student_lse = logsumexp(student.logits, axis=1)
    teacher_lse = logsumexp(teacher.logits, axis=1)

    def student_contrast(pair: PairExample, coef_t: float, coef_s: float) -> float:
        table = contrast_coefficients(student, pair.x, pair.y_t, pair.y_s, coef_t, coef_s)
        return contrast_value(student, table, student_lse)

    def teacher_contrast(pair: PairExample, coef_t: float, coef_s: float) -> float:
        table = contrast_coefficients(teacher, pair.x, pair.y_t, pair.y_s, coef_t, coef_s)
        return contrast_value(teacher, table, teacher_lse)

    if variant == Variant.SIMPO:
        margin = np.array([
            student_contrast(p, cfg.beta / len(p.y_t.tokens), cfg.beta / len(p.y_s.tokens)) - cfg.gamma_margin
            for p in batch
        ])
        return float(np.mean(-log_expit(margin)))
    if variant == Variant.CPO:
        # -[log σ(β·ratio) - log q(y_t)] by default; cpo_nll_sign flips the likelihood term
        sign = -1.0 if cfg.cpo_nll_sign else 1.0
        losses = []
        for p in batch:
            # the literal form compares y_t with itself, so its sigmoid term is constant
            ratio = 0.0 if cfg.cpo_literal else student_contrast(p, 1.0, 1.0)
            logq_t = student_contrast(p, 1.0, 0.0)
            losses.append(-log_expit(cfg.beta * ratio) + sign * logq_t)
        return float(np.mean(losses))
    if variant == Variant.IPO:
        gap = np.array([
            student_contrast(p, 1.0, 1.0) - teacher_contrast(p, 1.0, 1.0) - 1.0 / (2.0 * cfg.tau)
            for p in batch
        ])
        return float(np.mean(gap ** 2))
    raise DomainError(f"Unknown preference variant '{cfg.variant}'")


def word_kd_loss(student: SeqModel, teacher: SeqModel,
                 corpus_batch: Sequence[Tuple[Prompt, Trajectory]]) -> float:
    """Mean per-step KL(p(.|s_t) || q(.|s_t)) over the data contexts"""
    rows_q, rows_p = _data_rows(student, teacher, corpus_batch)
    return float(np.mean(row_kl(log_prob_table(teacher)[rows_p], log_prob_table(student)[rows_q])))


def word_kd_grad(student: SeqModel, teacher: SeqModel,
                 corpus_batch: Sequence[Tuple[Prompt, Trajectory]]) -> np.ndarray:
    rows_q, rows_p = _data_rows(student, teacher, corpus_batch)
    q = softmax(student.logits, axis=1)[rows_q]
    p = softmax(teacher.logits, axis=1)[rows_p]
    grad = np.zeros_like(student.logits)
    np.add.at(grad, rows_q, (q - p) / len(rows_q))
    return grad


def _data_rows(student: SeqModel, teacher: SeqModel,
               corpus_batch: Sequence[Tuple[Prompt, Trajectory]]) -> Tuple[np.ndarray, np.ndarray]:
    if not corpus_batch:
        raise DomainError("Batch must be nonempty")
    _require_same_space(student, teacher)
    rows_q, rows_p = [], []
    for x, y in corpus_batch:
        rows_q.append(step_indices(student, x, y)[0])
        rows_p.append(step_indices(teacher, x, y)[0])
    return np.concatenate(rows_q), np.concatenate(rows_p)


def context_rkld(student_logits: np.ndarray, teacher_logp: np.ndarray,
                 student_rows: np.ndarray, teacher_rows: np.ndarray) -> float:
    """Mean per-context KL(q(.|s) || p(.|s)) on fixed visited contexts"""
    rows = np.asarray(student_logits)[student_rows]
    log_q = rows - np.logaddexp.reduce(rows, axis=1, keepdims=True)
    return float(np.mean(row_kl(log_q, teacher_logp[teacher_rows])))
