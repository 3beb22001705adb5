"""
Vocabulary, prompt and trajectory models shared by teacher and student
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from exceptions import DomainError

BOS_TOKEN = '<bos>'
EOS_TOKEN = '<eos>'
UNK_TOKEN = '<unk>'


@dataclass(frozen=True)
class Vocab:
    """Ordered token list with reserved begin/end (and optional unknown) ids"""
    tokens: Tuple[str, ...]
    bos_id: int
    eos_id: int
    unk_id: Optional[int] = None
    _index: Dict[str, int] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        object.__setattr__(self, 'tokens', tokens)
        if len(tokens) < 3:
            raise DomainError(f"Vocabulary needs at least 3 tokens, got {len(tokens)}")
        if len(set(tokens)) != len(tokens):
            raise DomainError("Vocabulary tokens must be unique")
        for name, idx in (('bos_id', self.bos_id), ('eos_id', self.eos_id), ('unk_id', self.unk_id)):
            if idx is not None and not 0 <= idx < len(tokens):
                raise DomainError(f"{name}={idx} is not a valid index")
        if self.bos_id == self.eos_id:
            raise DomainError("bos_id and eos_id must differ")
        object.__setattr__(self, '_index', {tok: i for i, tok in enumerate(tokens)})

    @classmethod
    def build(cls, content_tokens: Sequence[str], with_unk: bool = False) -> 'Vocab':
        """Create a vocabulary with specials first, then the content tokens"""
        specials = [BOS_TOKEN, EOS_TOKEN] + ([UNK_TOKEN] if with_unk else [])
        return cls(
            tokens=tuple(specials + list(content_tokens)),
            bos_id=0,
            eos_id=1,
            unk_id=2 if with_unk else None,
        )

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def is_special(self, token_id: int) -> bool:
        return token_id in (self.bos_id, self.eos_id, self.unk_id)

    def content_ids(self) -> List[int]:
        return [i for i in range(self.size) if not self.is_special(i)]

    def check_id(self, token_id: int):
        if not 0 <= int(token_id) < self.size:
            raise DomainError(f"Token id {token_id} outside vocabulary of size {self.size}")

    def id_of(self, token: str) -> int:
        """Map a token string to its id, falling back to UNK when available"""
        idx = self._index.get(token)
        if idx is not None:
            return idx
        if self.unk_id is None:
            raise DomainError(f"Token '{token}' is not in the vocabulary and no UNK is reserved")
        return self.unk_id

    def encode(self, text: str) -> Tuple[int, ...]:
        return tuple(self.id_of(tok) for tok in text.split())

    def decode(self, ids: Sequence[int], strip_specials: bool = True) -> List[str]:
        out = []
        for i in ids:
            if strip_specials and i in (self.bos_id, self.eos_id):
                continue
            out.append(self.tokens[i])
        return out

    def to_dict(self) -> dict:
        return {
            'tokens': list(self.tokens),
            'bos_id': self.bos_id,
            'eos_id': self.eos_id,
            'unk_id': self.unk_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'Vocab':
        return cls(
            tokens=tuple(data['tokens']),
            bos_id=data['bos_id'],
            eos_id=data['eos_id'],
            unk_id=data.get('unk_id'),
        )


@dataclass(frozen=True)
class Prompt:
    """Prompt x = (x_0, ..., x_{l-1}); never contains EOS"""
    tokens: Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'tokens', tuple(int(t) for t in self.tokens))

    def validate(self, vocab: Vocab):
        for t in self.tokens:
            vocab.check_id(t)
        if vocab.eos_id in self.tokens:
            raise DomainError("Prompt must not contain EOS")


@dataclass(frozen=True)
class Trajectory:
    """Generated response; terminated trajectories end with their only EOS"""
    tokens: Tuple[int, ...]
    terminated: bool

    def __post_init__(self):
        object.__setattr__(self, 'tokens', tuple(int(t) for t in self.tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def validate(self, vocab: Vocab, max_len: Optional[int] = None):
        if not self.tokens:
            raise DomainError("Trajectory must be nonempty")
        for t in self.tokens:
            vocab.check_id(t)
        eos_count = self.tokens.count(vocab.eos_id)
        if self.terminated and (self.tokens[-1] != vocab.eos_id or eos_count != 1):
            raise DomainError("Terminated trajectory must end with its only EOS")
        if not self.terminated and eos_count:
            raise DomainError("Truncated trajectory must not contain EOS")
        if max_len is not None and len(self.tokens) > max_len:
            raise DomainError(f"Trajectory length {len(self.tokens)} exceeds max_len {max_len}")

    def content(self, vocab: Vocab) -> Tuple[int, ...]:
        """Tokens without the trailing EOS"""
        if self.terminated:
            return self.tokens[:-1]
        return self.tokens

    @classmethod
    def from_content(cls, content: Sequence[int], vocab: Vocab) -> 'Trajectory':
        return cls(tokens=tuple(content) + (vocab.eos_id,), terminated=True)
