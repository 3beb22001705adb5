"""
Trainer configuration and per-epoch metrics models
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from exceptions import DomainError
from models.objective import DPKDConfig, Variant

METRICS_FIELDS = [
    'epoch', 'kd_loss', 'lm_loss', 'total_loss', 'mean_implicit_reward',
    'first_token_kld', 'first_token_rkld', 'rouge_l', 'wall_ms',
]


class Method(str, Enum):
    SFT = 'sft'
    KD = 'kd'
    SEQKD = 'seqkd'
    RKLD = 'rkld'
    DPKD = 'dpkd'
    IPO = 'ipo'
    CPO = 'cpo'
    SIMPO = 'simpo'

    @classmethod
    def parse(cls, value) -> 'Method':
        if value == 'minillm':
            return cls.RKLD
        try:
            return cls(value)
        except ValueError:
            raise DomainError(f"Unknown training method '{value}'")

    @property
    def is_preference(self) -> bool:
        return self in (Method.DPKD, Method.IPO, Method.CPO, Method.SIMPO)

    def variant(self) -> Variant:
        if not self.is_preference:
            raise DomainError(f"Method '{self.value}' has no preference variant")
        return Variant(self.value)


@dataclass(frozen=True)
class OptimizerConfig:
    name: str = 'sgd'
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.name not in ('sgd', 'adam'):
            raise DomainError(f"Unknown optimizer '{self.name}'")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise DomainError("Adam moment decay rates must lie in [0, 1)")
        if not self.eps > 0:
            raise DomainError(f"eps must be positive, got {self.eps}")

    def to_dict(self) -> dict:
        return {'name': self.name, 'beta1': self.beta1, 'beta2': self.beta2, 'eps': self.eps}

    @classmethod
    def from_dict(cls, data: dict) -> 'OptimizerConfig':
        return cls(**data)


@dataclass(frozen=True)
class TrainerConfig:
    """Training hyperparameters; lr is the step size alpha of the update rule"""
    method: Method = Method.DPKD
    lr: float = 0.1
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    max_len: int = 8
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    dpkd: DPKDConfig = field(default_factory=DPKDConfig)
    temperature: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'method', Method.parse(self.method))
        if self.lr < 0:
            raise DomainError(f"lr must be nonnegative, got {self.lr}")
        if self.epochs < 1:
            raise DomainError(f"epochs must be at least 1, got {self.epochs}")
        if self.seed < 0:
            raise DomainError(f"seed must be nonnegative, got {self.seed}")
        if self.batch_size < 1:
            raise DomainError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.max_len < 1:
            raise DomainError(f"max_len must be at least 1, got {self.max_len}")
        if not self.temperature > 0:
            raise DomainError(f"temperature must be positive, got {self.temperature}")

    def preference_config(self) -> DPKDConfig:
        """DPKD settings with the variant taken from the method"""
        return DPKDConfig(**{**self.dpkd.to_dict(), 'variant': self.method.variant()})

    def to_dict(self) -> dict:
        return {
            'method': self.method.value,
            'lr': self.lr,
            'epochs': self.epochs,
            'batch_size': self.batch_size,
            'seed': self.seed,
            'max_len': self.max_len,
            'optimizer': self.optimizer.to_dict(),
            'dpkd': self.dpkd.to_dict(),
            'temperature': self.temperature,
        }


@dataclass
class MetricsRow:
    """One epoch of a training run; epoch 0 describes the initial student"""
    epoch: int
    kd_loss: float
    lm_loss: float
    total_loss: float
    mean_implicit_reward: Optional[float] = None
    first_token_kld: Optional[float] = None
    first_token_rkld: Optional[float] = None
    rouge_l: Optional[float] = None
    wall_ms: float = 0.0

    def satisfies_identity(self, lam: float, tol: float = 1e-9) -> bool:
        return abs(self.total_loss - (self.kd_loss + lam * self.lm_loss)) <= tol

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRICS_FIELDS}

    @classmethod
    def from_dict(cls, data: dict) -> 'MetricsRow':
        def optional(key):
            value = data.get(key)
            return None if value in (None, '') else float(value)

        return cls(
            epoch=int(data['epoch']),
            kd_loss=float(data['kd_loss']),
            lm_loss=float(data['lm_loss']),
            total_loss=float(data['total_loss']),
            mean_implicit_reward=optional('mean_implicit_reward'),
            first_token_kld=optional('first_token_kld'),
            first_token_rkld=optional('first_token_rkld'),
            rouge_l=optional('rouge_l'),
            wall_ms=float(data.get('wall_ms') or 0.0),
        )


ABLATION_FIELDS = ['setting', 'lam', 'length_norm', 'min_first_token_rkld', 'max_mean_implicit_reward', 'final_rouge_l']


@dataclass(frozen=True)
class AblationRow:
    """Best rKLD and reward seen during one ablation run, plus its final Rouge-L"""
    setting: str
    lam: float
    length_norm: bool
    min_first_token_rkld: Optional[float]
    max_mean_implicit_reward: Optional[float]
    final_rouge_l: Optional[float]

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in ABLATION_FIELDS}
