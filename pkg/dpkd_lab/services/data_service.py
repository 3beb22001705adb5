"""
Data service for instruction corpora: JSONL persistence, filtering, splitting and the toy generator
"""
import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from exceptions import DomainError, ParseError, SchemaError
from models.instruction import Corpus, InstructionExample
from models.vocab import Vocab

logger = logging.getLogger(__name__)

# Dolly publishes `context`/`response` instead of `input`/`output`
KEY_ALIASES = {'context': 'input', 'response': 'output'}


class CorpusRepository:
    """Repository pattern for JSONL instruction files"""

    def __init__(self, vocab: Optional[Vocab] = None):
        self.vocab = vocab

    def _record_to_example(self, record, line: int) -> InstructionExample:
        if not isinstance(record, dict):
            raise ParseError("record is not a JSON object", line=line)
        fields = {}
        for key, value in record.items():
            fields[KEY_ALIASES.get(key, key)] = value
        for key in ('instruction', 'output'):
            if key not in fields:
                raise SchemaError(key, line=line)
        for key in ('instruction', 'input', 'output'):
            value = fields.get(key, '')
            if not isinstance(value, str):
                raise SchemaError(key, line=line, message=f"'{key}' must be a string")
        try:
            return InstructionExample(
                instruction=fields['instruction'],
                input=fields.get('input', ''),
                output=fields['output'],
            )
        except DomainError as e:
            key = 'instruction' if not fields['instruction'].strip() else 'output'
            raise SchemaError(key, line=line, message=str(e))

    def load_jsonl(self, path: Union[str, Path]) -> Corpus:
        """One record per line; blank lines are skipped"""
        path = Path(path)
        examples = []
        with path.open(encoding='utf-8') as handle:
            for line_no, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ParseError(f"malformed JSON ({e.msg})", line=line_no)
                examples.append(self._record_to_example(record, line_no))
        logger.info(f"Loaded {len(examples)} examples from {path}")
        return Corpus(examples=examples, vocab=self.vocab)

    def save_jsonl(self, corpus: Corpus, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open('w', encoding='utf-8') as handle:
            for example in corpus:
                handle.write(json.dumps(example.to_dict(), ensure_ascii=False) + '\n')
        logger.debug(f"Saved {len(corpus)} examples to {path}")
        return path


def load_jsonl(path: Union[str, Path], vocab: Optional[Vocab] = None) -> Corpus:
    return CorpusRepository(vocab).load_jsonl(path)


def save_jsonl(corpus: Corpus, path: Union[str, Path]) -> Path:
    return CorpusRepository(corpus.vocab).save_jsonl(corpus, path)


def filter_by_length(corpus: Corpus, min_words: int, min_instruction_words: int = 0) -> Corpus:
    """Keep examples whose output has at least `min_words` whitespace words"""
    if min_words < 0 or min_instruction_words < 0:
        raise DomainError("Word thresholds must be nonnegative")
    kept = [
        e for e in corpus
        if e.output_words() >= min_words and e.instruction_words() >= min_instruction_words
    ]
    logger.debug(f"Length filter kept {len(kept)} of {len(corpus)} examples")
    return corpus.with_examples(kept)


def filter_by_max_len(corpus: Corpus, max_len: int) -> Corpus:
    """Drop examples whose tokenized response plus EOS exceeds max_len"""
    if max_len < 1:
        raise DomainError(f"max_len must be at least 1, got {max_len}")
    kept = [e for e, (_, y) in zip(corpus.examples, corpus.pairs()) if len(y) <= max_len]
    if len(kept) < len(corpus):
        logger.info(f"Dropped {len(corpus) - len(kept)} examples longer than {max_len} tokens")
    return corpus.with_examples(kept)


def split_sizes(n: int, fractions: Sequence[float]) -> List[int]:
    """Floor of each target, remainder handed out by largest fractional part"""
    targets = [f * n for f in fractions]
    sizes = [int(np.floor(t)) for t in targets]
    order = sorted(range(len(targets)), key=lambda i: (-(targets[i] - sizes[i]), i))
    for i in order[:n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split(corpus: Corpus, fractions: Sequence[float] = (0.8, 0.1, 0.1),
          seed: int = 0) -> Tuple[Corpus, Corpus, Corpus]:
    fractions = [float(f) for f in fractions]
    if len(fractions) != 3:
        raise DomainError(f"Expected three split fractions, got {len(fractions)}")
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise DomainError(f"Split fractions must be nonnegative and sum to 1, got {fractions}")
    order = np.random.default_rng(seed).permutation(len(corpus))
    sizes = split_sizes(len(corpus), fractions)
    pieces = []
    start = 0
    for size in sizes:
        pieces.append(corpus.with_examples([corpus.examples[i] for i in order[start:start + size]]))
        start += size
    return pieces[0], pieces[1], pieces[2]


def de_bruijn(n: int) -> List[int]:
    """Cyclic order-2 de Bruijn sequence over n symbols"""
    sequence: List[int] = []
    a = [0] * (2 * n)

    def db(t: int, p: int):
        if t > 2:
            if 2 % p == 0:
                sequence.extend(a[1:p + 1])
            return
        a[t] = a[t - p]
        db(t + 1, p)
        for j in range(a[t - p] + 1, n):
            a[t] = j
            db(t + 1, t)

    db(1, 1)
    return sequence


def toy_path(vocab: Vocab, grammar_seed: int) -> List[int]:
    """Token path in which every ordered pair of content tokens occurs once"""
    content = vocab.content_ids()
    if len(content) < 2:
        raise DomainError("Toy corpus needs at least two content tokens")
    rng = np.random.default_rng(grammar_seed)
    cycle = de_bruijn(len(content))
    shift = int(rng.integers(len(cycle)))
    cycle = cycle[shift:] + cycle[:shift]
    symbols = rng.permutation(content)
    return [int(symbols[s]) for s in cycle + cycle[:1]]


def synth_toy_corpus(vocab: Vocab, grammar_seed: int = 0, n_examples: int = 200,
                     length_range: Tuple[int, int] = (2, 6)) -> Corpus:
    """Prompts are consecutive path pairs; responses continue the path to its end.

    An order-2 model can represent the generator exactly since every context
    pair has a single successor (EOS after the final pair).
    """
    if n_examples < 1:
        raise DomainError(f"n_examples must be at least 1, got {n_examples}")
    low, high = length_range
    if low < 1 or high < low:
        raise DomainError(f"Invalid length range {length_range}")
    path = toy_path(vocab, grammar_seed)
    starts = [i for i in range(1, len(path) - 1) if low <= len(path) - 1 - i <= high]
    if not starts:
        raise DomainError(f"No toy response fits the length range {length_range}")
    rng = np.random.default_rng([grammar_seed, n_examples])
    examples = []
    for i in rng.choice(starts, size=n_examples):
        examples.append(InstructionExample(
            instruction=' '.join(vocab.tokens[t] for t in path[i - 1:i + 1]),
            output=' '.join(vocab.tokens[t] for t in path[i + 1:]),
        ))
    logger.info(f"Generated {n_examples} toy examples from a path of {len(path)} tokens")
    return Corpus(examples=examples, vocab=vocab)
