"""
Tests for instruction corpora: JSONL loading, filters, splits and the toy generator
"""
import json

import pytest

from exceptions import DomainError, ParseError, SchemaError
from models.instruction import Corpus, InstructionExample
from models.vocab import Prompt, Trajectory, Vocab
from services.data_service import (
    filter_by_length,
    filter_by_max_len,
    load_jsonl,
    save_jsonl,
    split,
    split_sizes,
    synth_toy_corpus,
    toy_path,
)
from services.experiment_service import sft_from_uniform


def _write(tmp_path, lines, name='data.jsonl'):
    path = tmp_path / name
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


def _corpus(vocab, outputs):
    return Corpus(examples=[InstructionExample(instruction='a', output=o) for o in outputs], vocab=vocab)


def test_load_jsonl_reads_records_and_aliases(tmp_path, vocab):
    path = _write(tmp_path, [
        json.dumps({'instruction': 'a b', 'input': 'c', 'output': 'b c'}),
        '',
        json.dumps({'instruction': 'c', 'context': '', 'response': 'a'}),
    ])
    corpus = load_jsonl(path, vocab)
    assert len(corpus) == 2
    assert corpus.examples[0].prompt_text == 'a b c'
    assert corpus.examples[1].output == 'a'
    x, y = corpus.pairs()[0]
    assert x == Prompt((2, 3, 4))
    assert y == Trajectory((3, 4, vocab.eos_id), True)
    assert corpus.references() == [(3, 4), (2,)]


def test_load_jsonl_reports_malformed_line(tmp_path):
    path = _write(tmp_path, [json.dumps({'instruction': 'a', 'output': 'b'}), '{"instruction": "a",'])
    with pytest.raises(ParseError) as info:
        load_jsonl(path)
    assert info.value.line == 2


def test_load_jsonl_rejects_non_objects(tmp_path):
    with pytest.raises(ParseError):
        load_jsonl(_write(tmp_path, ['[1, 2]']))


@pytest.mark.parametrize('record, key', [
    ({'instruction': 'a'}, 'output'),
    ({'output': 'a'}, 'instruction'),
    ({'instruction': 'a', 'output': 3}, 'output'),
    ({'instruction': ' ', 'output': 'a'}, 'instruction'),
])
def test_load_jsonl_schema_errors(tmp_path, record, key):
    with pytest.raises(SchemaError) as info:
        load_jsonl(_write(tmp_path, [json.dumps(record)]))
    assert info.value.key == key
    assert info.value.line == 1


def test_jsonl_save_then_load(tmp_path, vocab):
    corpus = _corpus(vocab, ['a b', 'c'])
    path = save_jsonl(corpus, tmp_path / 'nested' / 'out.jsonl')
    assert load_jsonl(path, vocab).examples == corpus.examples


def test_unknown_words_need_an_unk_token(vocab):
    corpus = _corpus(vocab, ['a zz'])
    with pytest.raises(DomainError):
        corpus.pairs()
    with_unk = _corpus(Vocab.build(['a'], with_unk=True), ['a zz'])
    assert with_unk.references() == [(3, 2)]


def test_filter_by_length(vocab):
    corpus = _corpus(vocab, ['a', 'a b', 'a b c'])
    assert [e.output for e in filter_by_length(corpus, 2)] == ['a b', 'a b c']
    assert len(filter_by_length(corpus, 0)) == 3
    with pytest.raises(DomainError):
        filter_by_length(corpus, -1)


def test_filter_by_max_len_counts_eos(vocab):
    corpus = _corpus(vocab, ['a', 'a b', 'a b c'])
    assert [e.output for e in filter_by_max_len(corpus, 3)] == ['a', 'a b']


@pytest.mark.parametrize('n, expected', [
    (10, [8, 1, 1]),
    (0, [0, 0, 0]),
    (7, [5, 1, 1]),
    (3, [3, 0, 0]),
])
def test_split_sizes(n, expected):
    sizes = split_sizes(n, [0.8, 0.1, 0.1])
    assert sizes == expected
    assert sum(sizes) == n


def test_split_is_a_seeded_partition(vocab):
    corpus = _corpus(vocab, [' '.join(['a'] * (i + 1)) for i in range(20)])
    train, valid, test = split(corpus, seed=5)
    assert (len(train), len(valid), len(test)) == (16, 2, 2)
    outputs = [e.output for part in (train, valid, test) for e in part]
    assert sorted(outputs) == sorted(e.output for e in corpus)
    again = split(corpus, seed=5)
    assert [e.output for e in again[0]] == [e.output for e in train]


@pytest.mark.parametrize('fractions', [(0.5, 0.5), (0.9, 0.2, -0.1), (0.5, 0.3, 0.1)])
def test_split_rejects_bad_fractions(vocab, fractions):
    with pytest.raises(DomainError):
        split(_corpus(vocab, ['a']), fractions)


def test_toy_path_covers_every_pair(vocab):
    path = toy_path(vocab, grammar_seed=1)
    pairs = list(zip(path, path[1:]))
    content = vocab.content_ids()
    assert sorted(pairs) == sorted((a, b) for a in content for b in content)


def test_toy_corpus_is_order_two_deterministic(vocab):
    corpus = synth_toy_corpus(vocab, grammar_seed=2, n_examples=50)
    assert len(corpus) == 50
    successor = {}
    for x, y in corpus.pairs():
        tokens = list(x.tokens) + list(y.tokens)
        for i in range(2, len(tokens)):
            context = tuple(tokens[i - 2:i])
            assert successor.setdefault(context, tokens[i]) == tokens[i]
    for example in corpus:
        assert 2 <= example.output_words() <= 6
    assert synth_toy_corpus(vocab, grammar_seed=2, n_examples=50).examples == corpus.examples


def test_toy_corpus_validation(vocab, tiny_vocab):
    with pytest.raises(DomainError):
        synth_toy_corpus(tiny_vocab)
    with pytest.raises(DomainError):
        synth_toy_corpus(vocab, n_examples=0)
    with pytest.raises(DomainError):
        synth_toy_corpus(vocab, length_range=(20, 30))


def test_toy_corpus_is_learnable_by_sft(vocab):
    corpus = filter_by_max_len(synth_toy_corpus(vocab, grammar_seed=0, n_examples=1000), 8)
    assert len(corpus) == 1000
    _, metrics = sft_from_uniform(corpus, vocab, 2, 0, 8, 1.0, 10)
    assert metrics[-1].lm_loss < 0.2
