"""
Analytic DPKD gradient and a central finite-difference checker
"""
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, softmax

from exceptions import DomainError, NumericError
from models.gradient import GradCheckReport, GradTable
from models.objective import DPKDConfig, PairExample, Variant
from models.seq_model import SeqModel
from models.vocab import Prompt, Trajectory, Vocab
from services.objective_service import dpkd_pair_losses, lm_loss_grad, preference_inners
from services.seqmodel_service import random_model, sample, step_indices

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-4


def dpkd_pair_weights(batch: Sequence[PairExample], student: SeqModel, teacher: SeqModel,
                      cfg: DPKDConfig) -> np.ndarray:
    """beta * sigma(-u) per pair, i.e. beta * (1 - preference probability of y_t)"""
    inner, _ = preference_inners(batch, student, teacher, cfg)
    return cfg.beta * expit(-inner)


def score_difference_grad(student: SeqModel, coefficients: np.ndarray,
                          probs: Optional[np.ndarray] = None) -> GradTable:
    """Gradient of sum C*log_softmax(logits): C minus row weight times probabilities"""
    if probs is None:
        probs = softmax(student.logits, axis=1)
    return coefficients - coefficients.sum(axis=1, keepdims=True) * probs


def dpkd_grad(batch: Sequence[PairExample], student: SeqModel, teacher: SeqModel,
              cfg: DPKDConfig) -> GradTable:
    """Gradient of dpkd_loss with respect to the student logits.

    Each pair contributes -sigma(-u) * (beta_t grad log q(y_t) - beta_s grad log q(y_s))
    where u is the inner term; the batch mean is returned.
    """
    if Variant.parse(cfg.variant) != Variant.DPKD:
        raise DomainError(f"Analytic gradient is only defined for dpkd, not {cfg.variant}")
    inner, tables = preference_inners(batch, student, teacher, cfg)
    probs = softmax(student.logits, axis=1)
    grad = np.zeros_like(student.logits)
    for u, table in zip(inner, tables):
        weight = expit(-u)
        if weight == 0.0:
            continue
        grad -= weight * score_difference_grad(student, table, probs)
    return grad / len(batch)


def total_grad(batch: Sequence[PairExample], corpus_batch: Sequence[Tuple[Prompt, Trajectory]],
               student: SeqModel, teacher: SeqModel, cfg: DPKDConfig) -> GradTable:
    """Gradient of L_kd + lambda * L_pt"""
    grad = dpkd_grad(batch, student, teacher, cfg)
    if cfg.lam:
        grad = grad + cfg.lam * lm_loss_grad(student, corpus_batch)
    return grad


def touched_rows(model: SeqModel, sequences: Iterable[Tuple[Prompt, Trajectory]]) -> np.ndarray:
    """Context rows an objective over these (prompt, trajectory) pairs can depend on"""
    rows = set()
    for x, y in sequences:
        rows.update(int(r) for r in step_indices(model, x, y)[0])
    return np.array(sorted(rows), dtype=np.int64)


def pair_sequences(batch: Sequence[PairExample]):
    for pair in batch:
        yield pair.x, pair.y_t
        yield pair.x, pair.y_s


def numeric_grad(objective: Callable[[SeqModel], Union[float, np.ndarray]], student: SeqModel,
                 h: float = DEFAULT_STEP, rows: Optional[Sequence[int]] = None,
                 max_workers: int = 1) -> GradTable:
    """Central differences (f(theta+h) - f(theta-h)) / 2h on every coordinate.

    An objective may return a vector of per-example terms; the gradient is then
    that of their mean, differenced term by term before averaging.
    `rows` limits the sweep to context rows the objective can touch; the other
    coordinates are reported as exactly zero.
    """
    if not h > 0:
        raise DomainError(f"Finite-difference step must be positive, got {h}")
    base = student.logits
    row_list = range(base.shape[0]) if rows is None else [int(r) for r in rows]

    def evaluate(theta: np.ndarray) -> np.ndarray:
        value = np.asarray(objective(student.with_logits(theta)), dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NumericError(f"Objective returned non-finite value {value}")
        return value

    def row_grad(row: int) -> np.ndarray:
        out = np.zeros(base.shape[1])
        theta = base.copy()
        for col in range(base.shape[1]):
            theta[row, col] = base[row, col] + h
            plus = evaluate(theta)
            theta[row, col] = base[row, col] - h
            minus = evaluate(theta)
            theta[row, col] = base[row, col]
            out[col] = float(np.mean(plus - minus)) / (2.0 * h)
        return out

    grad = np.zeros_like(base)
    if max_workers <= 1:
        for row in row_list:
            grad[row] = row_grad(row)
        return grad

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        future_to_row = {executor.submit(row_grad, row): row for row in row_list}
        for future in as_completed(future_to_row):
            grad[future_to_row[future]] = future.result()
    return grad


def grad_check(analytic: GradTable, numeric: GradTable) -> GradCheckReport:
    """Max absolute and relative error; relative uses max(|a|, |n|, 1e-8)"""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise DomainError(f"Gradient shapes differ: {a.shape} vs {n.shape}")
    abs_err = np.abs(a - n)
    rel_err = abs_err / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    worst = np.unravel_index(int(np.argmax(rel_err)), rel_err.shape)
    report = GradCheckReport(
        max_abs_err=float(abs_err.max()),
        max_rel_err=float(rel_err.max()),
        worst=(int(worst[0]), int(worst[1])),
    )
    logger.debug(f"Gradient check: abs={report.max_abs_err:.3e} rel={report.max_rel_err:.3e} at {report.worst}")
    return report


def random_instance(rng: np.random.Generator, max_batch: int = 8, max_len: int = 4):
    """Random (student, teacher, batch, cfg) with |V| <= 5, order <= 2, beta in [0.1, 5]"""
    vocab = Vocab.build([f"w{i}" for i in range(int(rng.integers(1, 4)))])
    order = int(rng.integers(1, 3))
    length = int(rng.integers(1, max_len + 1))
    teacher = random_model(vocab, order, seed=int(rng.integers(2 ** 31)))
    student = random_model(vocab, order, seed=int(rng.integers(2 ** 31)))
    batch = []
    for _ in range(int(rng.integers(1, max_batch + 1))):
        x = Prompt(tuple(int(t) for t in rng.choice(vocab.content_ids(), size=int(rng.integers(0, 3)))))
        batch.append(PairExample(x, sample(teacher, x, length, rng=rng), sample(student, x, length, rng=rng)))
    cfg = DPKDConfig(beta=float(rng.uniform(0.1, 5.0)), lam=0.0, length_norm=bool(rng.integers(2)))
    return student, teacher, batch, cfg


def check_instance(student: SeqModel, teacher: SeqModel, batch: Sequence[PairExample],
                   cfg: DPKDConfig, max_workers: int = 1) -> GradCheckReport:
    analytic = dpkd_grad(batch, student, teacher, cfg)
    numeric = numeric_grad(
        lambda s: dpkd_pair_losses(batch, s, teacher, cfg),
        student,
        rows=touched_rows(student, pair_sequences(batch)),
        max_workers=max_workers,
    )
    return grad_check(analytic, numeric)


def run_gradcheck(seed: int = 0, n_instances: int = 100, max_workers: int = 1) -> List[GradCheckReport]:
    reports = []
    for i in range(n_instances):
        student, teacher, batch, cfg = random_instance(np.random.default_rng([seed, i]))
        reports.append(check_instance(student, teacher, batch, cfg, max_workers))
    worst = max(r.max_rel_err for r in reports) if reports else 0.0
    logger.info(f"Gradient check over {n_instances} instances: worst relative error {worst:.3e}")
    return reports
