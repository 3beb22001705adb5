"""
Configuration and record types for the preference-distillation objectives
"""
from dataclasses import dataclass, asdict
from enum import Enum

from exceptions import DomainError
from models.vocab import Prompt, Trajectory


class Variant(str, Enum):
    DPKD = 'dpkd'
    IPO = 'ipo'
    CPO = 'cpo'
    SIMPO = 'simpo'

    @classmethod
    def parse(cls, value) -> 'Variant':
        try:
            return cls(value)
        except ValueError:
            raise DomainError(f"Unknown preference variant '{value}'")


@dataclass(frozen=True)
class DPKDConfig:
    """beta scales the log-ratios, lam weights the LM loss"""
    beta: float = 1.0
    lam: float = 0.1
    length_norm: bool = True
    variant: Variant = Variant.DPKD
    tau: float = 0.5
    gamma_margin: float = 1.0
    cpo_literal: bool = True
    cpo_nll_sign: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'variant', Variant.parse(self.variant))
        if not self.beta > 0:
            raise DomainError(f"beta must be positive, got {self.beta}")
        if not self.tau > 0:
            raise DomainError(f"tau must be positive, got {self.tau}")
        if self.lam < 0:
            raise DomainError(f"lam must be nonnegative, got {self.lam}")
        if self.gamma_margin < 0:
            raise DomainError(f"gamma_margin must be nonnegative, got {self.gamma_margin}")

    def to_dict(self) -> dict:
        data = asdict(self)
        data['variant'] = self.variant.value
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'DPKDConfig':
        return cls(**data)


@dataclass(frozen=True)
class PairExample:
    """Prompt with a teacher response y_t and a student response y_s"""
    x: Prompt
    y_t: Trajectory
    y_s: Trajectory

    def __post_init__(self):
        if not self.y_t.tokens or not self.y_s.tokens:
            raise DomainError("Both trajectories of a pair must be nonempty")


@dataclass(frozen=True)
class LossBreakdown:
    kd_loss: float
    lm_loss: float
    total: float


@dataclass(frozen=True)
class PairTerms:
    """The four log items of one pair plus the inner term of the sigmoid"""
    logq_t: float
    logp_t: float
    logq_s: float
    logp_s: float
    beta_t: float
    beta_s: float

    @property
    def reward_t(self) -> float:
        return self.beta_t * (self.logq_t - self.logp_t)

    @property
    def reward_s(self) -> float:
        return self.beta_s * (self.logq_s - self.logp_s)

    @property
    def inner(self) -> float:
        return self.reward_t - self.reward_s
