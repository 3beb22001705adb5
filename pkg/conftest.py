"""
Shared pytest fixtures; puts dpkd_lab/ on the import path like the application does
"""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), 'dpkd_lab'))

from config import settings  # noqa: E402
from models.seq_model import SeqModel  # noqa: E402
from models.vocab import Vocab  # noqa: E402
from services.experiment_service import build_toy_world  # noqa: E402
from services.seqmodel_service import random_model  # noqa: E402


@pytest.fixture
def vocab():
    """<bos> <eos> a b c"""
    return Vocab.build(['a', 'b', 'c'])


@pytest.fixture
def teacher(vocab):
    return random_model(vocab, 2, seed=11)


@pytest.fixture
def student(vocab):
    return random_model(vocab, 2, seed=12)


@pytest.fixture
def tiny_vocab():
    """<bos> <eos> a"""
    return Vocab.build(['a'])


def one_hot_model(vocab: Vocab, order: int, next_token, scale: float = 100.0) -> SeqModel:
    """Near-deterministic model; next_token(context_tokens) picks the favoured token of each row"""
    logits = np.zeros((vocab.size ** order, vocab.size))
    probe = SeqModel(vocab=vocab, order=order, logits=logits)
    for row in range(probe.n_contexts):
        logits[row, next_token(probe.context_tokens(row))] = scale
    return probe.with_logits(logits)


@pytest.fixture(scope='session')
def toy_world():
    return build_toy_world(seed=0)


@pytest.fixture(autouse=True)
def isolated_output(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, 'output_dir', str(tmp_path / 'runs'))
    monkeypatch.setattr(settings, 'record_wall_time', False)
    monkeypatch.setattr(settings, 'judge_url', None)
    return tmp_path
