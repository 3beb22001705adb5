"""
Training loops for DPKD and the baselines (SFT, word-level KD, SeqKD, reverse KLD)
"""
import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import settings
from exceptions import DomainError
from models.gradient import GradTable
from models.instruction import Corpus
from models.objective import DPKDConfig, PairExample, Variant
from models.seq_model import SeqModel
from models.training import Method, MetricsRow, TrainerConfig
from models.vocab import Prompt, Trajectory
from services.evaluation_service import mean_implicit_reward, mean_rouge_l, teacher_samples
from services.gradient_service import numeric_grad, pair_sequences, total_grad, touched_rows
from services.objective_service import (
    FORWARD,
    REVERSE,
    context_rkld,
    first_token_divergence,
    lm_loss,
    lm_loss_grad,
    total_loss,
    variant_loss,
    word_kd_grad,
    word_kd_loss,
)
from services.optimizer_service import build_optimizer
from services.seqmodel_service import log_prob_table, sample, step_indices

logger = logging.getLogger(__name__)

SequencePair = Tuple[Prompt, Trajectory]


class TrainingObjective(ABC):
    """Per-batch losses and gradient of one training method.

    `lam` weights lm_loss in the reported total; losses are batch means.
    """
    lam: float = 0.0

    @property
    @abstractmethod
    def n_examples(self) -> int:
        pass

    @abstractmethod
    def batch(self, student: SeqModel, indices: Sequence[int],
              with_grad: bool) -> Tuple[float, float, Optional[GradTable]]:
        """(kd_loss, lm_loss, gradient or None)"""
        pass


def _lm_batch(lm_pairs: Sequence[SequencePair], indices: Sequence[int]) -> List[SequencePair]:
    return [lm_pairs[int(i) % len(lm_pairs)] for i in indices]


class LikelihoodObjective(TrainingObjective):
    """Maximum likelihood on fixed responses; reported with kd_loss = 0 and lam = 1"""
    lam = 1.0

    def __init__(self, pairs: Sequence[SequencePair]):
        self.pairs = list(pairs)

    @property
    def n_examples(self) -> int:
        return len(self.pairs)

    def batch(self, student, indices, with_grad):
        batch = [self.pairs[int(i)] for i in indices]
        grad = lm_loss_grad(student, batch) if with_grad else None
        return 0.0, lm_loss(student, batch), grad


class WordKDObjective(TrainingObjective):
    """Per-step forward KL to the teacher's next-token distribution on data contexts"""

    def __init__(self, teacher: SeqModel, pairs: Sequence[SequencePair],
                 lm_pairs: Sequence[SequencePair], lam: float):
        self.teacher = teacher
        self.pairs = list(pairs)
        self.lm_pairs = list(lm_pairs)
        self.lam = lam

    @property
    def n_examples(self) -> int:
        return len(self.pairs)

    def batch(self, student, indices, with_grad):
        batch = [self.pairs[int(i)] for i in indices]
        lm_batch = _lm_batch(self.lm_pairs, indices)
        grad = None
        if with_grad:
            grad = word_kd_grad(student, self.teacher, batch)
            if self.lam:
                grad = grad + self.lam * lm_loss_grad(student, lm_batch)
        return word_kd_loss(student, self.teacher, batch), lm_loss(student, lm_batch), grad


class PreferenceObjective(TrainingObjective):
    """Preference distillation on freshly sampled (y_t, y_s) pairs.

    Responses for example i are drawn from rng (seed, i), so a frozen student
    sees the same pairs every epoch.
    """

    def __init__(self, teacher: SeqModel, prompts: Sequence[Prompt], lm_pairs: Sequence[SequencePair],
                 cfg: DPKDConfig, seed: int, max_len: int, temperature: float = 1.0):
        self.teacher = teacher
        self.prompts = list(prompts)
        self.lm_pairs = list(lm_pairs)
        self.cfg = cfg
        self.lam = cfg.lam
        self.seed = seed
        self.max_len = max_len
        self.temperature = temperature

    @property
    def n_examples(self) -> int:
        return len(self.prompts)

    def sample_pairs(self, student: SeqModel, indices: Sequence[int]) -> List[PairExample]:
        pairs = []
        for i in indices:
            x = self.prompts[int(i)]
            y_t = sample(self.teacher, x, self.max_len, rng_seed=[self.seed, int(i), 0],
                         temperature=self.temperature)
            y_s = sample(student, x, self.max_len, rng_seed=[self.seed, int(i), 1],
                         temperature=self.temperature)
            pairs.append(PairExample(x, y_t, y_s))
        return pairs

    def batch(self, student, indices, with_grad):
        pairs = self.sample_pairs(student, indices)
        lm_batch = _lm_batch(self.lm_pairs, indices)
        losses = total_loss(pairs, lm_batch, student, self.teacher, self.cfg)
        grad = None
        if with_grad:
            if self.cfg.variant == Variant.DPKD:
                grad = total_grad(pairs, lm_batch, student, self.teacher, self.cfg)
            else:
                grad = numeric_grad(
                    lambda s: variant_loss(pairs, s, self.teacher, self.cfg),
                    student,
                    rows=touched_rows(student, pair_sequences(pairs)),
                )
                if self.lam:
                    grad = grad + self.lam * lm_loss_grad(student, lm_batch)
        return losses.kd_loss, losses.lm_loss, grad


class ReverseKLObjective(TrainingObjective):
    """Per-context KL(q || p) on contexts the student visits while sampling"""

    def __init__(self, teacher: SeqModel, prompts: Sequence[Prompt], seed: int, max_len: int,
                 temperature: float = 1.0, lm_pairs: Sequence[SequencePair] = (), lam: float = 0.0):
        self.teacher = teacher
        self.teacher_logp = log_prob_table(teacher)
        self.prompts = list(prompts)
        self.seed = seed
        self.max_len = max_len
        self.temperature = temperature
        self.lm_pairs = list(lm_pairs)
        self.lam = lam if self.lm_pairs else 0.0

    @property
    def n_examples(self) -> int:
        return len(self.prompts)

    def visited_rows(self, student: SeqModel, indices: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        student_rows, teacher_rows = [], []
        for i in indices:
            x = self.prompts[int(i)]
            y = sample(student, x, self.max_len, rng_seed=[self.seed, int(i), 1], temperature=self.temperature)
            student_rows.append(step_indices(student, x, y)[0])
            teacher_rows.append(step_indices(self.teacher, x, y)[0])
        return np.concatenate(student_rows), np.concatenate(teacher_rows)

    def batch(self, student, indices, with_grad):
        s_rows, t_rows = self.visited_rows(student, indices)
        kd = context_rkld(student.logits, self.teacher_logp, s_rows, t_rows)
        lm_batch = _lm_batch(self.lm_pairs, indices) if self.lm_pairs else []
        lm = lm_loss(student, lm_batch) if lm_batch else 0.0
        grad = None
        if with_grad:
            grad = numeric_grad(
                lambda s: context_rkld(s.logits, self.teacher_logp, s_rows, t_rows),
                student,
                rows=np.unique(s_rows),
            )
            if self.lam:
                grad = grad + self.lam * lm_loss_grad(student, lm_batch)
        return kd, lm, grad


@dataclass
class EvalContext:
    """Held-out prompts and fixed teacher samples scored after every epoch"""
    prompts: List[Prompt]
    references: Optional[List[Tuple[int, ...]]]
    teacher: Optional[SeqModel]
    beta: float
    max_len: int
    samples: Optional[List[SequencePair]] = None

    @classmethod
    def build(cls, cfg: TrainerConfig, prompts: Sequence[Prompt], references=None,
              teacher: Optional[SeqModel] = None) -> 'EvalContext':
        prompts = list(prompts)
        samples = None
        if teacher is not None and prompts:
            samples = teacher_samples(teacher, prompts, cfg.max_len, cfg.seed, cfg.temperature)
        return cls(prompts=prompts, references=references, teacher=teacher,
                   beta=cfg.dpkd.beta, max_len=cfg.max_len, samples=samples)

    @classmethod
    def from_corpus(cls, cfg: TrainerConfig, corpus: Optional[Corpus],
                    teacher: Optional[SeqModel] = None) -> 'EvalContext':
        if corpus is None or not len(corpus):
            return cls.build(cfg, [], None, teacher)
        return cls.build(cfg, corpus.prompts(), corpus.references(), teacher)

    def score(self, student: SeqModel) -> dict:
        metrics = {'mean_implicit_reward': None, 'first_token_kld': None,
                   'first_token_rkld': None, 'rouge_l': None}
        if not self.prompts:
            return metrics
        if self.teacher is not None:
            metrics['mean_implicit_reward'] = mean_implicit_reward(student, self.teacher, self.samples, self.beta)
            metrics['first_token_kld'] = first_token_divergence(student, self.teacher, self.prompts, FORWARD)
            metrics['first_token_rkld'] = first_token_divergence(student, self.teacher, self.prompts, REVERSE)
        if self.references is not None:
            metrics['rouge_l'] = mean_rouge_l(student, self.prompts, self.references, self.max_len)
        return metrics


def _batches(order: Sequence[int], batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def _row(epoch: int, kd_sum: float, lm_sum: float, n: int, lam: float, student: SeqModel,
         ctx: EvalContext, started: float) -> MetricsRow:
    kd, lm = kd_sum / n, lm_sum / n
    wall_ms = 1000.0 * (time.perf_counter() - started) if settings.record_wall_time else 0.0
    return MetricsRow(epoch=epoch, kd_loss=kd, lm_loss=lm, total_loss=kd + lam * lm,
                      wall_ms=wall_ms, **ctx.score(student))


def train(cfg: TrainerConfig, objective: TrainingObjective, student: SeqModel,
          ctx: EvalContext) -> Tuple[SeqModel, List[MetricsRow]]:
    """Shared epoch/batch loop: epoch 0 scores the initial student, then one row per epoch"""
    n = objective.n_examples
    if n == 0:
        raise DomainError("Training set must be nonempty")
    optimizer = build_optimizer(cfg.optimizer, cfg.lr)

    started = time.perf_counter()
    kd_sum = lm_sum = 0.0
    for indices in _batches(np.arange(n), cfg.batch_size):
        kd, lm, _ = objective.batch(student, indices, with_grad=False)
        kd_sum += kd * len(indices)
        lm_sum += lm * len(indices)
    metrics = [_row(0, kd_sum, lm_sum, n, objective.lam, student, ctx, started)]

    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        kd_sum = lm_sum = 0.0
        for indices in _batches(order, cfg.batch_size):
            kd, lm, grad = objective.batch(student, indices, with_grad=True)
            kd_sum += kd * len(indices)
            lm_sum += lm * len(indices)
            student = optimizer.step(student, grad)
        row = _row(epoch, kd_sum, lm_sum, n, objective.lam, student, ctx, started)
        metrics.append(row)
        logger.info(f"[{cfg.method.value}] epoch {epoch}/{cfg.epochs}: kd={row.kd_loss:.4f} "
                    f"lm={row.lm_loss:.4f} total={row.total_loss:.4f}")
    return student, metrics


def _require_same_space(student: SeqModel, teacher: SeqModel):
    if not student.same_space(teacher):
        raise DomainError("Teacher and student must share vocabulary and order")


def _eval_corpus(valid: Optional[Corpus], fallback: Corpus) -> Corpus:
    return valid if valid is not None and len(valid) else fallback


def run_distillation(cfg: TrainerConfig, train_set: Corpus, pretrain: Optional[Corpus], teacher: SeqModel,
                     student_init: SeqModel, valid: Optional[Corpus] = None) -> Tuple[SeqModel, List[MetricsRow]]:
    """Sample teacher and student responses, score the four log items, take a gradient step.

    The LM term runs on `pretrain` when given, otherwise on the training responses.
    """
    _require_same_space(student_init, teacher)
    if not cfg.method.is_preference:
        raise DomainError(f"run_distillation needs a preference method, got '{cfg.method.value}'")
    lm_source = pretrain if pretrain is not None and len(pretrain) else train_set
    objective = PreferenceObjective(
        teacher, train_set.prompts(), lm_source.pairs(), cfg.preference_config(),
        cfg.seed, cfg.max_len, cfg.temperature,
    )
    ctx = EvalContext.from_corpus(cfg, _eval_corpus(valid, train_set), teacher)
    return train(cfg, objective, student_init, ctx)


def run_sft_on_pairs(cfg: TrainerConfig, pairs: Sequence[SequencePair], student_init: SeqModel,
                     ctx: EvalContext) -> Tuple[SeqModel, List[MetricsRow]]:
    return train(cfg, LikelihoodObjective(pairs), student_init, ctx)


def run_sft(cfg: TrainerConfig, train_set: Corpus, student_init: SeqModel, valid: Optional[Corpus] = None,
            teacher: Optional[SeqModel] = None) -> Tuple[SeqModel, List[MetricsRow]]:
    """Fine-tune on dataset responses; the teacher, if given, only feeds the metrics"""
    if teacher is not None:
        _require_same_space(student_init, teacher)
    ctx = EvalContext.from_corpus(cfg, _eval_corpus(valid, train_set), teacher)
    return run_sft_on_pairs(cfg, train_set.pairs(), student_init, ctx)


def run_word_kd(cfg: TrainerConfig, train_set: Corpus, teacher: SeqModel, student_init: SeqModel,
                pretrain: Optional[Corpus] = None,
                valid: Optional[Corpus] = None) -> Tuple[SeqModel, List[MetricsRow]]:
    _require_same_space(student_init, teacher)
    lm_source = pretrain if pretrain is not None and len(pretrain) else train_set
    objective = WordKDObjective(teacher, train_set.pairs(), lm_source.pairs(), cfg.dpkd.lam)
    ctx = EvalContext.from_corpus(cfg, _eval_corpus(valid, train_set), teacher)
    return train(cfg, objective, student_init, ctx)


def run_seqkd(cfg: TrainerConfig, teacher: SeqModel, student_init: SeqModel, n_samples: int,
              prompts: Sequence[Prompt], valid: Optional[Corpus] = None) -> Tuple[SeqModel, List[MetricsRow]]:
    """Sample a synthetic corpus from the teacher, then maximum likelihood on it"""
    _require_same_space(student_init, teacher)
    if n_samples < 0:
        raise DomainError(f"n_samples must be nonnegative, got {n_samples}")
    if n_samples == 0:
        logger.warning("SeqKD called with no teacher samples; student left unchanged")
        return student_init, []
    if not prompts:
        raise DomainError("SeqKD needs prompts to condition teacher sampling")
    pairs = []
    for j in range(n_samples):
        x = prompts[j % len(prompts)]
        pairs.append((x, sample(teacher, x, cfg.max_len, rng_seed=[cfg.seed, j, 3], temperature=cfg.temperature)))
    if valid is not None and len(valid):
        ctx = EvalContext.from_corpus(cfg, valid, teacher)
    else:
        ctx = EvalContext.build(cfg, prompts, None, teacher)
    return run_sft_on_pairs(cfg, pairs, student_init, ctx)


def run_rkld(cfg: TrainerConfig, prompts: Sequence[Prompt], teacher: SeqModel, student_init: SeqModel,
             pretrain: Optional[Corpus] = None,
             valid: Optional[Corpus] = None) -> Tuple[SeqModel, List[MetricsRow]]:
    """Reverse-KL distillation on student-sampled contexts (numeric gradient of the exact KL terms)"""
    _require_same_space(student_init, teacher)
    lm_pairs = pretrain.pairs() if pretrain is not None else ()
    objective = ReverseKLObjective(teacher, prompts, cfg.seed, cfg.max_len, cfg.temperature,
                                   lm_pairs=lm_pairs, lam=cfg.dpkd.lam)
    if valid is not None and len(valid):
        ctx = EvalContext.from_corpus(cfg, valid, teacher)
    else:
        ctx = EvalContext.build(cfg, prompts, None, teacher)
    return train(cfg, objective, student_init, ctx)


def run_method(cfg: TrainerConfig, train_set: Corpus, teacher: SeqModel, student_init: SeqModel,
               pretrain: Optional[Corpus] = None, valid: Optional[Corpus] = None,
               n_samples: Optional[int] = None) -> Tuple[SeqModel, List[MetricsRow]]:
    """Dispatch on cfg.method"""
    if cfg.method == Method.SFT:
        return run_sft(cfg, train_set, student_init, valid, teacher)
    if cfg.method == Method.KD:
        return run_word_kd(cfg, train_set, teacher, student_init, pretrain, valid)
    if cfg.method == Method.SEQKD:
        count = len(train_set) if n_samples is None else n_samples
        return run_seqkd(cfg, teacher, student_init, count, train_set.prompts(), valid)
    if cfg.method == Method.RKLD:
        return run_rkld(cfg, train_set.prompts(), teacher, student_init, pretrain, valid)
    return run_distillation(cfg, train_set, pretrain, teacher, student_init, valid)


def kd_loss_descent_fraction(metrics: Sequence[MetricsRow], window: int = 5) -> float:
    """Share of consecutive epoch windows whose mean kd_loss does not increase"""
    losses = [row.kd_loss for row in metrics if row.epoch >= 1]
    means = [float(np.mean(losses[i:i + window])) for i in range(0, len(losses) - window + 1, window)]
    if len(means) < 2:
        return 1.0
    steps = [later <= earlier for earlier, later in zip(means, means[1:])]
    return sum(steps) / len(steps)
