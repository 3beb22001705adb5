"""
Run configuration document for the command-line entry point.

A run config is one JSON object. Every key is optional; unknown keys are rejected.

    method          sft | kd | seqkd | rkld (alias minillm) | dpkd | ipo | cpo | simpo
    lr, epochs, batch_size, seed, max_len, temperature
    optimizer       {"name": "sgd" | "adam", "beta1", "beta2", "eps"}
    dpkd            {"beta", "lam", "length_norm", "variant", "tau", "gamma_margin", "cpo_literal",
                     "cpo_nll_sign"}
    split_boundaries  ascending response-length bucket edges for eval
    train_path, valid_path, test_path, pretrain_path   JSONL corpora
    teacher_path, student_path                          checkpoints
    metrics_path    metrics.csv read back by the curves command
    vocab_tokens    content tokens; specials are added in front
    order           context length k of the tabular models
    output_dir      where every artifact and the manifest go
    n_examples, grammar_seed, length_range              toy corpus generation
    scales, n_per_scale                                  noise sweep
    n_samples       SeqKD sample count
    n_instances     oracle / gradient-check instance count (20 and 100 when unset)
    min_words       response length filter applied on load
    ablation        run full / no-LM-loss / no-length-norm side by side
"""
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional, Tuple, Union

from config import settings
from exceptions import DomainError, ParseError
from models.evaluation import LengthSplit
from models.objective import DPKDConfig
from models.training import Method, OptimizerConfig, TrainerConfig

PATH_KEYS = ('train_path', 'valid_path', 'test_path', 'pretrain_path', 'teacher_path', 'student_path',
             'metrics_path')


@dataclass(frozen=True)
class RunConfig:
    method: str = 'dpkd'
    lr: float = 0.1
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    max_len: int = 8
    temperature: float = 1.0
    optimizer: dict = field(default_factory=dict)
    dpkd: dict = field(default_factory=dict)
    split_boundaries: Tuple[int, ...] = (30, 70)
    train_path: Optional[str] = None
    valid_path: Optional[str] = None
    test_path: Optional[str] = None
    pretrain_path: Optional[str] = None
    teacher_path: Optional[str] = None
    student_path: Optional[str] = None
    metrics_path: Optional[str] = None
    vocab_tokens: Tuple[str, ...] = ('a', 'b', 'c')
    order: int = 2
    output_dir: str = field(default_factory=lambda: settings.output_dir)
    n_examples: int = 200
    grammar_seed: Optional[int] = None
    length_range: Tuple[int, int] = (2, 6)
    scales: Tuple[float, ...] = (0.0, 0.05, 0.1, 0.2)
    n_per_scale: int = 10
    n_samples: Optional[int] = None
    n_instances: Optional[int] = None
    min_words: int = 0
    ablation: bool = False

    def __post_init__(self):
        for name in ('split_boundaries', 'vocab_tokens', 'length_range', 'scales'):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        Method.parse(self.method)
        if len(self.length_range) != 2:
            raise DomainError(f"length_range needs two values, got {list(self.length_range)}")
        # build the nested configs once so bad values fail at load time
        self.trainer_config()
        self.length_split()

    @classmethod
    def from_dict(cls, data: dict) -> 'RunConfig':
        if not isinstance(data, dict):
            raise DomainError("Run config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise DomainError(f"Unknown run config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as e:
            raise DomainError(f"Invalid run config: {e}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'RunConfig':
        path = Path(path)
        if not path.is_file():
            raise DomainError(f"Config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise ParseError(f"Malformed config {path}: {e.msg}", line=e.lineno)
        return cls.from_dict(data)

    def with_overrides(self, **overrides) -> 'RunConfig':
        """Flag values win over file values; None means the flag was not given"""
        flat = {k: v for k, v in overrides.items() if v is not None and k in {f.name for f in fields(self)}}
        dpkd_keys = {k: overrides[k] for k in ('beta', 'lam', 'length_norm') if overrides.get(k) is not None}
        if dpkd_keys:
            flat['dpkd'] = {**self.dpkd, **dpkd_keys}
        return replace(self, **flat)

    def check_inputs(self):
        for key in PATH_KEYS:
            value = getattr(self, key)
            if value is not None and not Path(value).exists():
                raise DomainError(f"Input file not found for {key}: {value}")

    def trainer_config(self) -> TrainerConfig:
        try:
            return TrainerConfig(
                method=Method.parse(self.method),
                lr=self.lr,
                epochs=self.epochs,
                batch_size=self.batch_size,
                seed=self.seed,
                max_len=self.max_len,
                optimizer=OptimizerConfig(**self.optimizer),
                dpkd=DPKDConfig(**self.dpkd),
                temperature=self.temperature,
            )
        except TypeError as e:
            raise DomainError(f"Invalid nested config: {e}")

    def length_split(self) -> LengthSplit:
        return LengthSplit(self.split_boundaries)

    def to_dict(self) -> dict:
        data = asdict(self)
        for name in ('split_boundaries', 'vocab_tokens', 'length_range', 'scales'):
            data[name] = list(data[name])
        return data

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form"""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    def content_tokens(self) -> List[str]:
        return list(self.vocab_tokens)
