"""
Run bookkeeping shared by the command controllers: config resolution, manifests and inputs
"""
import json
import logging
from pathlib import Path
from typing import Optional

from exceptions import DomainError
from models.instruction import Corpus
from models.run_config import RunConfig
from models.seq_model import SeqModel
from models.vocab import Vocab
from services.checkpoint_service import CheckpointRepository
from services.data_service import CorpusRepository, filter_by_length, filter_by_max_len
from services.experiment_service import World, build_toy_world, world_from_corpora

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'


def resolve_config(args) -> RunConfig:
    """Config file (if any) with command-line flags layered on top"""
    cfg = RunConfig.load(args.config) if getattr(args, 'config', None) else RunConfig()
    overrides = {k: v for k, v in vars(args).items() if k not in ('config', 'command', 'handler')}
    if overrides.pop('no_lm_loss', False):
        overrides['lam'] = 0.0
    if overrides.pop('no_length_norm', False):
        overrides['length_norm'] = False
    return cfg.with_overrides(**overrides)


def write_manifest(cfg: RunConfig, command: str) -> Path:
    """Record the resolved config, its hash and the seed before any computation"""
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        'command': command,
        'seed': cfg.seed,
        'config_hash': cfg.config_hash(),
        'config': cfg.to_dict(),
    }
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    logger.info(f"Manifest for '{command}' written to {path} (config {manifest['config_hash'][:12]})")
    return path


def start_run(args, command: str) -> RunConfig:
    cfg = resolve_config(args)
    cfg.check_inputs()
    write_manifest(cfg, command)
    return cfg


def checkpoints(cfg: RunConfig) -> CheckpointRepository:
    return CheckpointRepository(cfg.output_dir)


def dataset_vocab(cfg: RunConfig, teacher: Optional[SeqModel] = None) -> Vocab:
    if teacher is not None:
        return teacher.vocab
    return Vocab.build(cfg.content_tokens(), with_unk=True)


def load_corpus(cfg: RunConfig, path: Optional[str], vocab: Vocab) -> Optional[Corpus]:
    """Load a JSONL corpus and apply the length filters"""
    if path is None:
        return None
    corpus = CorpusRepository(vocab).load_jsonl(path)
    if cfg.min_words:
        corpus = filter_by_length(corpus, cfg.min_words)
    return filter_by_max_len(corpus, cfg.max_len)


def load_world(cfg: RunConfig) -> World:
    """Toy benchmark unless a teacher checkpoint and training data are configured"""
    if cfg.teacher_path is None and cfg.train_path is None:
        return build_toy_world(
            seed=cfg.seed,
            n_examples=cfg.n_examples,
            grammar_seed=cfg.grammar_seed,
            order=cfg.order,
            max_len=cfg.max_len,
            length_range=cfg.length_range,
            content_tokens=cfg.content_tokens(),
        )
    if cfg.teacher_path is None or cfg.train_path is None:
        raise DomainError("File-based runs need both teacher_path and train_path")
    repo = CheckpointRepository()
    teacher = repo.load(cfg.teacher_path)
    student = repo.load(cfg.student_path) if cfg.student_path else None
    vocab = teacher.vocab
    return world_from_corpora(
        teacher,
        load_corpus(cfg, cfg.train_path, vocab),
        valid=load_corpus(cfg, cfg.valid_path, vocab),
        test=load_corpus(cfg, cfg.test_path, vocab),
        student_init=student,
        seed=cfg.seed,
        max_len=cfg.max_len,
    )
