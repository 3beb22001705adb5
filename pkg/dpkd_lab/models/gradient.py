"""
Gradient-check report model
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

# dL/dtheta with the same (context row, token) layout as SeqModel.logits
GradTable = np.ndarray

GRADCHECK_FIELDS = ['instance', 'max_abs_err', 'max_rel_err', 'worst_row', 'worst_token', 'passed']


@dataclass(frozen=True)
class GradCheckReport:
    max_abs_err: float
    max_rel_err: float
    worst: Tuple[int, int]

    def passed(self, tolerance: float = 1e-5) -> bool:
        return self.max_rel_err < tolerance

    def to_dict(self) -> dict:
        return {
            'max_abs_err': self.max_abs_err,
            'max_rel_err': self.max_rel_err,
            'worst_row': self.worst[0],
            'worst_token': self.worst[1],
        }
