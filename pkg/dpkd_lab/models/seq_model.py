"""
Tabular order-k autoregressive model used for both teacher and student
"""
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from exceptions import DomainError
from models.vocab import Vocab


@dataclass(frozen=True)
class SeqModel:
    """Logits table indexed by (context of `order` token ids, next token id).

    Row index of a context (c_0, ..., c_{k-1}) is its base-|V| encoding with
    c_0 most significant. Contexts shorter than k are left-padded with BOS.
    """
    vocab: Vocab
    order: int
    logits: np.ndarray

    def __post_init__(self):
        if self.order < 1:
            raise DomainError(f"Model order must be positive, got {self.order}")
        table = np.array(self.logits, dtype=np.float64)
        expected = (self.vocab.size ** self.order, self.vocab.size)
        if table.shape != expected:
            raise DomainError(f"Logits table shape {table.shape} does not match {expected}")
        if not np.all(np.isfinite(table)):
            raise DomainError("Logits table must be finite everywhere")
        table.setflags(write=False)
        object.__setattr__(self, 'logits', table)

    @property
    def n_contexts(self) -> int:
        return self.logits.shape[0]

    def context_index(self, context: Sequence[int]) -> int:
        """Row index of the last `order` tokens of `context`, BOS-padded on the left"""
        size = self.vocab.size
        window = list(context[-self.order:]) if len(context) else []
        window = [self.vocab.bos_id] * (self.order - len(window)) + window
        index = 0
        for token in window:
            if not 0 <= token < size:
                raise DomainError(f"Token id {token} outside vocabulary of size {size}")
            index = index * size + int(token)
        return index

    def context_tokens(self, index: int) -> tuple:
        size = self.vocab.size
        tokens = []
        for _ in range(self.order):
            index, rem = divmod(index, size)
            tokens.append(rem)
        return tuple(reversed(tokens))

    def with_logits(self, logits: np.ndarray) -> 'SeqModel':
        return SeqModel(vocab=self.vocab, order=self.order, logits=logits)

    def same_space(self, other: 'SeqModel') -> bool:
        return self.vocab == other.vocab and self.order == other.order

    def __eq__(self, other) -> bool:
        if not isinstance(other, SeqModel):
            return NotImplemented
        return self.same_space(other) and np.array_equal(self.logits, other.logits)

    def __hash__(self) -> int:
        return hash((self.vocab, self.order, self.logits.tobytes()))

    def to_dict(self) -> dict:
        """Checkpoint body; logits rows are 17-significant-digit decimals"""
        return {
            'vocab': self.vocab.to_dict(),
            'order': self.order,
            'logits': [' '.join(format(v, '.17g') for v in row) for row in self.logits],
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'SeqModel':
        vocab = Vocab.from_dict(data['vocab'])
        rows = [[float(v) for v in row.split()] for row in data['logits']]
        return cls(vocab=vocab, order=int(data['order']), logits=np.array(rows, dtype=np.float64))
