"""
Exact distributions, scoring, sampling and enumeration for tabular sequence models
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from config import settings
from exceptions import CapacityError, DomainError
from models.seq_model import SeqModel
from models.vocab import Prompt, Trajectory, Vocab

logger = logging.getLogger(__name__)


def uniform_model(vocab: Vocab, order: int = 2) -> SeqModel:
    """All-zero logits, i.e. uniform next-token distributions"""
    return SeqModel(vocab=vocab, order=order, logits=np.zeros((vocab.size ** order, vocab.size)))


def random_model(vocab: Vocab, order: int, seed: int, scale: float = 1.0) -> SeqModel:
    rng = np.random.default_rng(seed)
    logits = rng.normal(0.0, scale, size=(vocab.size ** order, vocab.size))
    return SeqModel(vocab=vocab, order=order, logits=logits)


def log_prob_table(model: SeqModel) -> np.ndarray:
    """Row-wise log-softmax of the whole logits table"""
    return log_softmax(model.logits, axis=1)


def next_token_dist(model: SeqModel, context: Sequence[int]) -> np.ndarray:
    for token in context:
        model.vocab.check_id(token)
    return softmax(model.logits[model.context_index(context)])


def step_indices(model: SeqModel, x: Prompt, y: Trajectory) -> Tuple[np.ndarray, np.ndarray]:
    """Row index of every scored step s_t together with the emitted token y_t"""
    history = list(x.tokens)
    rows = np.empty(len(y.tokens), dtype=np.int64)
    for t, token in enumerate(y.tokens):
        rows[t] = model.context_index(history)
        history.append(token)
    return rows, np.asarray(y.tokens, dtype=np.int64)


def score_with_table(log_probs: np.ndarray, model: SeqModel, x: Prompt, y: Trajectory) -> float:
    rows, tokens = step_indices(model, x, y)
    return float(log_probs[rows, tokens].sum())


def seq_logprob(model: SeqModel, x: Prompt, y: Trajectory) -> float:
    """log q(y|x): per-step next-token log-probabilities summed, EOS step included"""
    if not y.tokens:
        raise DomainError("Cannot score an empty trajectory")
    for token in y.tokens:
        model.vocab.check_id(token)
    return score_with_table(log_prob_table(model), model, x, y)


def logprob_grad(model: SeqModel, x: Prompt, y: Trajectory,
                 probs: Optional[np.ndarray] = None) -> np.ndarray:
    """Gradient of log q(y|x) with respect to the logits table.

    Each scored step contributes one-hot(y_t) - softmax(row) to its context row,
    so every row of the result sums to zero.
    """
    if probs is None:
        probs = softmax(model.logits, axis=1)
    grad = np.zeros_like(model.logits)
    rows, tokens = step_indices(model, x, y)
    np.add.at(grad, (rows, tokens), 1.0)
    np.subtract.at(grad, rows, probs[rows])
    return grad


def _draw(rng: np.random.Generator, dist: np.ndarray) -> int:
    cumulative = np.cumsum(dist)
    idx = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side='right'))
    return min(idx, len(dist) - 1)


def sample(model: SeqModel, x: Prompt, max_len: int, rng_seed=None,
           temperature: float = 1.0, rng: Optional[np.random.Generator] = None) -> Trajectory:
    """Ancestral sampling until EOS or `max_len` tokens; temperature 0 is greedy"""
    if max_len < 1:
        raise DomainError(f"max_len must be at least 1, got {max_len}")
    if temperature < 0:
        raise DomainError(f"temperature must be nonnegative, got {temperature}")
    if rng is None:
        rng = np.random.default_rng(rng_seed)
    eos = model.vocab.eos_id
    history = list(x.tokens)
    generated = []
    while len(generated) < max_len:
        row = model.logits[model.context_index(history)]
        if temperature == 0:
            token = int(np.argmax(row))
        else:
            token = _draw(rng, softmax(row / temperature))
        generated.append(token)
        history.append(token)
        if token == eos:
            return Trajectory(tokens=tuple(generated), terminated=True)
    return Trajectory(tokens=tuple(generated), terminated=False)


def greedy_decode(model: SeqModel, x: Prompt, max_len: int) -> Trajectory:
    return sample(model, x, max_len, temperature=0.0)


def enumerate_trajectories(model: SeqModel, x: Prompt, max_len: int,
                           budget: Optional[int] = None) -> List[Tuple[Trajectory, float]]:
    """Every terminated trajectory plus every truncated length-m one, with probabilities.

    Entries come in depth-first order with token ids ascending.
    """
    budget = settings.enum_budget if budget is None else budget
    if max_len < 1:
        raise DomainError(f"max_len must be at least 1, got {max_len}")
    if model.vocab.size ** max_len > budget:
        raise CapacityError(
            f"Enumeration of |V|^m = {model.vocab.size}^{max_len} leaves exceeds budget {budget}"
        )
    log_probs = log_prob_table(model)
    eos = model.vocab.eos_id
    results: List[Tuple[Trajectory, float]] = []

    def expand(history: List[int], generated: List[int], logp: float):
        row = log_probs[model.context_index(history)]
        for token in range(model.vocab.size):
            total = logp + row[token]
            if token == eos:
                results.append((Trajectory(tuple(generated) + (eos,), True), float(np.exp(total))))
            elif len(generated) + 1 == max_len:
                results.append((Trajectory(tuple(generated) + (token,), False), float(np.exp(total))))
            else:
                history.append(token)
                generated.append(token)
                expand(history, generated, total)
                history.pop()
                generated.pop()

    expand(list(x.tokens), [], 0.0)
    logger.debug(f"Enumerated {len(results)} trajectories for prompt {x.tokens} up to length {max_len}")
    return results


def perturb(model: SeqModel, scale: float, rng_seed=None) -> SeqModel:
    """Add i.i.d. N(0, scale^2) noise to every logit"""
    if scale < 0:
        raise DomainError(f"Noise scale must be nonnegative, got {scale}")
    if scale == 0:
        return model.with_logits(model.logits.copy())
    rng = np.random.default_rng(rng_seed)
    noise = rng.normal(0.0, scale, size=model.logits.shape)
    return model.with_logits(model.logits + noise)
