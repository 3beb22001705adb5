"""
Data controller: synthetic corpus generation
"""
import argparse
import logging
from pathlib import Path

from models.vocab import Vocab
from services.data_service import CorpusRepository, filter_by_max_len, split, synth_toy_corpus
from services.run_service import start_run

logger = logging.getLogger(__name__)

SPLIT_NAMES = ('train', 'valid', 'test')


class DataController:
    """Controller for the gen-data subcommand"""

    def __init__(self, subparsers, common: argparse.ArgumentParser):
        self._register_commands(subparsers, common)

    def _register_commands(self, subparsers, common):
        parser = subparsers.add_parser('gen-data', parents=[common],
                                       help='Write the synthetic toy corpus as train/valid/test JSONL')
        parser.add_argument('--n-examples', dest='n_examples', type=int, default=None)
        parser.add_argument('--grammar-seed', dest='grammar_seed', type=int, default=None)
        parser.set_defaults(handler=self.gen_data)

    def gen_data(self, args) -> int:
        cfg = start_run(args, 'gen-data')
        vocab = Vocab.build(cfg.content_tokens())
        grammar_seed = cfg.seed if cfg.grammar_seed is None else cfg.grammar_seed
        corpus = synth_toy_corpus(vocab, grammar_seed, cfg.n_examples, cfg.length_range)
        corpus = filter_by_max_len(corpus, cfg.max_len)
        repo = CorpusRepository(vocab)
        for name, part in zip(SPLIT_NAMES, split(corpus, (0.8, 0.1, 0.1), cfg.seed)):
            path = repo.save_jsonl(part, Path(cfg.output_dir) / f"{name}.jsonl")
            logger.info(f"Wrote {len(part)} {name} examples to {path}")
        return 0
