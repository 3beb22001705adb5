"""
Evaluation report, length split, noise-sweep and judge models
"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from exceptions import DomainError

NOISE_SWEEP_FIELDS = ['scale', 'seed', 'rkld', 'mean_implicit_reward', 'rouge_l']


@dataclass(frozen=True)
class LengthSplit:
    """Boundaries between golden-response length buckets"""
    boundaries: Tuple[int, ...] = (30, 70)

    def __post_init__(self):
        bounds = tuple(int(b) for b in self.boundaries)
        object.__setattr__(self, 'boundaries', bounds)
        if not bounds:
            raise DomainError("LengthSplit needs at least one boundary")
        if any(b <= 0 for b in bounds):
            raise DomainError(f"Boundaries must be positive, got {bounds}")
        if any(b >= c for b, c in zip(bounds, bounds[1:])):
            raise DomainError(f"Boundaries must be strictly ascending, got {bounds}")

    def ranges(self) -> List[Tuple[int, Optional[int]]]:
        """[low, high) per bucket; the last bucket is open-ended"""
        lows = (0,) + self.boundaries
        highs = self.boundaries + (None,)
        return list(zip(lows, highs))

    def bucket_of(self, length: int) -> int:
        for i, b in enumerate(self.boundaries):
            if length < b:
                return i
        return len(self.boundaries)


@dataclass
class SplitScore:
    low: int
    high: Optional[int]
    n: int
    rouge_l_mean: Optional[float] = None
    exact_match_pct: Optional[float] = None

    @property
    def label(self) -> str:
        if self.high is None:
            return f">={self.low}"
        return f"[{self.low},{self.high})"

    def to_dict(self) -> dict:
        return {
            'range': self.label,
            'low': self.low,
            'high': self.high,
            'n': self.n,
            'rouge_l_mean': self.rouge_l_mean,
            'exact_match_pct': self.exact_match_pct,
        }


@dataclass
class EvalReport:
    rouge_l_mean: float
    exact_match_pct: float
    n_examples: int
    splits: List[SplitScore] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            'aggregate': {
                'rouge_l_mean': self.rouge_l_mean,
                'exact_match_pct': self.exact_match_pct,
                'n_examples': self.n_examples,
            },
            'splits': [s.to_dict() for s in self.splits],
        }


@dataclass(frozen=True)
class NoiseSweepRow:
    scale: float
    seed: int
    rkld: float
    mean_implicit_reward: float
    rouge_l: float

    def to_dict(self) -> dict:
        return {
            'scale': self.scale,
            'seed': self.seed,
            'rkld': self.rkld,
            'mean_implicit_reward': self.mean_implicit_reward,
            'rouge_l': self.rouge_l,
        }


@dataclass(frozen=True)
class JudgeVerdict:
    """Score from an external judge, or unavailable with the reason"""
    score: Optional[float] = None
    reason: str = ''

    @property
    def available(self) -> bool:
        return self.score is not None

    @classmethod
    def unavailable(cls, reason: str) -> 'JudgeVerdict':
        return cls(score=None, reason=reason)

    def to_dict(self) -> dict:
        return {'available': self.available, 'score': self.score, 'reason': self.reason}
