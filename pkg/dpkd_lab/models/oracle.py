"""
Reward and Q-function tables for the exact theory oracles
"""
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from exceptions import DomainError
from models.vocab import Prompt, Trajectory

State = Tuple[int, ...]


@dataclass
class RewardTable:
    """r(x, y) over the enumerated trajectory space of one prompt"""
    prompt: Prompt
    max_len: int
    rewards: Dict[Trajectory, float] = field(default_factory=dict)

    def __post_init__(self):
        for y, r in self.rewards.items():
            if not np.isfinite(r):
                raise DomainError(f"Reward for {y.tokens} is not finite")

    def value(self, y: Trajectory) -> float:
        try:
            return self.rewards[y]
        except KeyError:
            raise DomainError(f"Reward table does not cover trajectory {y.tokens}")

    def values_for(self, support: List[Trajectory]) -> np.ndarray:
        return np.array([self.value(y) for y in support])


@dataclass
class TrajectoryDistribution:
    """Explicit distribution over an enumerated trajectory support"""
    prompt: Prompt
    max_len: int
    trajectories: List[Trajectory]
    probs: np.ndarray

    def prob_of(self, y: Trajectory) -> float:
        return float(self.probs[self.trajectories.index(y)])


@dataclass
class QTable:
    """Soft Q*/V* over generated-prefix states of one prompt; V* is 0 at terminal states"""
    prompt: Prompt
    beta: float
    Q: Dict[Tuple[State, int], float] = field(default_factory=dict)
    V: Dict[State, float] = field(default_factory=dict)
    gamma: float = 1.0

    def policy(self, state: State, action: int) -> float:
        """Induced policy exp((Q*(s, a) - V*(s)) / beta)"""
        return float(np.exp((self.Q[(state, action)] - self.V[state]) / self.beta))

    def log_policy(self, state: State, action: int) -> float:
        return (self.Q[(state, action)] - self.V[state]) / self.beta


ORACLE_FIELDS = ['name', 'passed', 'residual', 'tolerance']


@dataclass(frozen=True)
class OracleResult:
    name: str
    passed: bool
    residual: float
    tolerance: float

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'passed': self.passed,
            'residual': self.residual,
            'tolerance': self.tolerance,
        }
