"""
Instruction example and corpus models
"""
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

from exceptions import DomainError
from models.vocab import Prompt, Trajectory, Vocab


@dataclass(frozen=True)
class InstructionExample:
    """Instruction/response record; `input` may be empty"""
    instruction: str
    output: str
    input: str = ''

    def __post_init__(self):
        if not self.instruction.strip():
            raise DomainError("Instruction must be nonempty")
        if not self.output.strip():
            raise DomainError("Output must be nonempty")

    @property
    def prompt_text(self) -> str:
        if self.input.strip():
            return f"{self.instruction} {self.input}"
        return self.instruction

    def output_words(self) -> int:
        return len(self.output.split())

    def instruction_words(self) -> int:
        return len(self.prompt_text.split())

    def to_dict(self) -> dict:
        return {
            'instruction': self.instruction,
            'input': self.input,
            'output': self.output,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'InstructionExample':
        return cls(
            instruction=data['instruction'],
            input=data.get('input', ''),
            output=data['output'],
        )


@dataclass
class Corpus:
    """Ordered examples with a tokenization cache against `vocab`"""
    examples: List[InstructionExample] = field(default_factory=list)
    vocab: Optional[Vocab] = None
    _pairs: Optional[List[Tuple[Prompt, Trajectory]]] = field(default=None, init=False, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[InstructionExample]:
        return iter(self.examples)

    def with_examples(self, examples: Sequence[InstructionExample]) -> 'Corpus':
        return Corpus(examples=list(examples), vocab=self.vocab)

    def pairs(self) -> List[Tuple[Prompt, Trajectory]]:
        """(prompt, EOS-terminated response) per example"""
        if self.vocab is None:
            raise DomainError("Corpus has no vocabulary to tokenize against")
        if self._pairs is None:
            pairs = []
            for example in self.examples:
                prompt = Prompt(self.vocab.encode(example.prompt_text))
                prompt.validate(self.vocab)
                response = Trajectory.from_content(self.vocab.encode(example.output), self.vocab)
                pairs.append((prompt, response))
            self._pairs = pairs
        return self._pairs

    def prompts(self) -> List[Prompt]:
        return [x for x, _ in self.pairs()]

    def references(self) -> List[Tuple[int, ...]]:
        """Response token ids without EOS"""
        return [y.content(self.vocab) for _, y in self.pairs()]
