"""
Optimizer service using Strategy pattern for different update rules
"""
import logging
from abc import ABC, abstractmethod
from typing import Optional

import numpy as np

from models.seq_model import SeqModel
from models.training import OptimizerConfig

logger = logging.getLogger(__name__)


class OptimizerStrategy(ABC):
    """Abstract strategy for one parameter update on a logits table"""

    def __init__(self, lr: float):
        self.lr = lr

    @abstractmethod
    def direction(self, grad: np.ndarray) -> np.ndarray:
        """Descent direction scaled to one unit of learning rate"""
        pass

    def step(self, model: SeqModel, grad: np.ndarray) -> SeqModel:
        """theta <- theta - lr * direction(grad)"""
        if self.lr == 0:
            return model
        return model.with_logits(model.logits - self.lr * self.direction(grad))


class SGDOptimizer(OptimizerStrategy):
    """Plain gradient step"""

    def direction(self, grad: np.ndarray) -> np.ndarray:
        return grad


class AdamOptimizer(OptimizerStrategy):
    """Adam with bias-corrected first and second moments"""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: Optional[np.ndarray] = None
        self.v: Optional[np.ndarray] = None
        self.t = 0

    def direction(self, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return m_hat / (np.sqrt(v_hat) + self.eps)


def build_optimizer(cfg: OptimizerConfig, lr: float) -> OptimizerStrategy:
    """Create the optimizer strategy named by the config"""
    if cfg.name == 'adam':
        return AdamOptimizer(lr, cfg.beta1, cfg.beta2, cfg.eps)
    return SGDOptimizer(lr)
