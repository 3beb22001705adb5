"""
Toy benchmark setup and the multi-run experiments built on the trainer
"""
import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

from models.instruction import Corpus
from models.seq_model import SeqModel
from models.training import AblationRow, Method, MetricsRow, OptimizerConfig, TrainerConfig
from models.vocab import Vocab
from services.data_service import filter_by_max_len, split, synth_toy_corpus
from services.seqmodel_service import uniform_model
from services.trainer_service import run_method, run_sft

logger = logging.getLogger(__name__)

TOY_TOKENS = ('a', 'b', 'c')


@dataclass
class World:
    """Splits plus an SFT teacher and a weakly SFT-initialised student"""
    vocab: Vocab
    corpus: Corpus
    train: Corpus
    valid: Corpus
    test: Corpus
    teacher: SeqModel
    student_init: SeqModel
    max_len: int


def sft_from_uniform(train_set: Corpus, vocab: Vocab, order: int, seed: int, max_len: int,
                     lr: float, epochs: int, valid: Optional[Corpus] = None) -> Tuple[SeqModel, List[MetricsRow]]:
    cfg = TrainerConfig(method=Method.SFT, lr=lr, epochs=epochs, batch_size=8, seed=seed, max_len=max_len)
    return run_sft(cfg, train_set, uniform_model(vocab, order), valid)


def build_toy_world(seed: int = 0, n_examples: int = 200, grammar_seed: Optional[int] = None,
                    order: int = 2, max_len: int = 8, length_range: Tuple[int, int] = (2, 6),
                    teacher_epochs: int = 10, student_epochs: int = 1,
                    content_tokens: Sequence[str] = TOY_TOKENS) -> World:
    """Synthetic corpus, 80/10/10 split, SFT teacher and a one-epoch SFT student"""
    vocab = Vocab.build(list(content_tokens))
    corpus = synth_toy_corpus(vocab, seed if grammar_seed is None else grammar_seed, n_examples, length_range)
    corpus = filter_by_max_len(corpus, max_len)
    train_set, valid, test = split(corpus, (0.8, 0.1, 0.1), seed)

    teacher, teacher_metrics = sft_from_uniform(train_set, vocab, order, seed, max_len, 1.0, teacher_epochs, valid)
    student, _ = sft_from_uniform(train_set, vocab, order, seed, max_len, 0.5, student_epochs, valid)
    logger.info(f"Toy world seed={seed}: {len(train_set)}/{len(valid)}/{len(test)} examples, "
                f"teacher lm_loss={teacher_metrics[-1].lm_loss:.4f}")
    return World(vocab=vocab, corpus=corpus, train=train_set, valid=valid, test=test,
                 teacher=teacher, student_init=student, max_len=max_len)


def world_from_corpora(teacher: SeqModel, train_set: Corpus, valid: Optional[Corpus] = None,
                       test: Optional[Corpus] = None, student_init: Optional[SeqModel] = None,
                       seed: int = 0, max_len: int = 8) -> World:
    """World around a given teacher; without a student checkpoint one SFT epoch initialises it"""
    if student_init is None:
        logger.info("No student checkpoint given; running one SFT epoch from a uniform model")
        student_init, _ = sft_from_uniform(train_set, teacher.vocab, teacher.order, seed, max_len, 0.5, 1)
    empty = train_set.with_examples([])
    return World(vocab=teacher.vocab, corpus=train_set, train=train_set,
                 valid=valid if valid is not None else empty, test=test if test is not None else empty,
                 teacher=teacher, student_init=student_init, max_len=max_len)


def ablation_settings(cfg: TrainerConfig) -> List[Tuple[str, TrainerConfig]]:
    """Full objective, without the LM loss, and without length normalization"""
    return [
        ('full', cfg),
        ('no_lm_loss', replace(cfg, dpkd=replace(cfg.dpkd, lam=0.0))),
        ('no_length_norm', replace(cfg, dpkd=replace(cfg.dpkd, length_norm=False))),
    ]


def summarize(setting: str, cfg: TrainerConfig, metrics: Sequence[MetricsRow]) -> AblationRow:
    rklds = [m.first_token_rkld for m in metrics if m.first_token_rkld is not None]
    rewards = [m.mean_implicit_reward for m in metrics if m.mean_implicit_reward is not None]
    return AblationRow(
        setting=setting,
        lam=cfg.dpkd.lam,
        length_norm=cfg.dpkd.length_norm,
        min_first_token_rkld=min(rklds) if rklds else None,
        max_mean_implicit_reward=max(rewards) if rewards else None,
        final_rouge_l=metrics[-1].rouge_l if metrics else None,
    )


def run_ablation(world: World, cfg: TrainerConfig,
                 pretrain: Optional[Corpus] = None) -> List[Tuple[AblationRow, List[MetricsRow]]]:
    results = []
    for setting, run_cfg in ablation_settings(cfg):
        _, metrics = run_method(run_cfg, world.train, world.teacher, world.student_init,
                                pretrain=pretrain, valid=world.valid)
        row = summarize(setting, run_cfg, metrics)
        logger.info(f"Ablation {setting}: min rkld={row.min_first_token_rkld} "
                    f"max reward={row.max_mean_implicit_reward} rouge_l={row.final_rouge_l}")
        results.append((row, metrics))
    return results


def compare_methods(world: World, cfg: TrainerConfig,
                    methods: Sequence[str] = ('dpkd', 'kd')) -> Dict[str, Optional[float]]:
    """Final validation Rouge-L per method from the same starting student"""
    scores = {}
    for method in methods:
        run_cfg = replace(cfg, method=Method.parse(method))
        _, metrics = run_method(run_cfg, world.train, world.teacher, world.student_init, valid=world.valid)
        scores[run_cfg.method.value] = metrics[-1].rouge_l if metrics else None
    return scores


def default_trainer_config(seed: int = 0, method: str = 'dpkd') -> TrainerConfig:
    """Standard toy-task settings: sgd lr 0.1, beta 1, lambda 0.1, 30 epochs"""
    return TrainerConfig(method=Method.parse(method), lr=0.1, epochs=30, batch_size=8, seed=seed,
                         max_len=8, optimizer=OptimizerConfig('sgd'))
