"""
Evaluation controller: test-set reports, the noise sweep and curve export
"""
import argparse
import json
import logging
from pathlib import Path

from exceptions import DomainError
from services.checkpoint_service import load_checkpoint
from services.evaluation_service import (
    evaluate, export_curves, generate, load_curves, noise_sweep, save_eval_report, write_noise_sweep,
)
from services.judge_service import JudgeEndpoint, build_judge
from services.run_service import load_corpus, load_world, start_run
from services.trainer_service import kd_loss_descent_fraction

logger = logging.getLogger(__name__)


class EvaluationController:
    """Controller for eval, noise-sweep and curves"""

    def __init__(self, subparsers, common: argparse.ArgumentParser):
        self._register_commands(subparsers, common)

    def _register_commands(self, subparsers, common):
        evaluate_parser = subparsers.add_parser('eval', parents=[common],
                                                help='Rouge-L and exact match per response-length bucket')
        evaluate_parser.add_argument('--student', dest='student_path', default=None,
                                     help='Checkpoint to evaluate (default: the toy initial student)')
        evaluate_parser.add_argument('--test', dest='test_path', default=None)
        evaluate_parser.set_defaults(handler=self.evaluate)

        sweep = subparsers.add_parser('noise-sweep', parents=[common],
                                      help='Score Gaussian-perturbed copies of the student')
        sweep.add_argument('--student', dest='student_path', default=None)
        sweep.add_argument('--n-per-scale', dest='n_per_scale', type=int, default=None)
        sweep.set_defaults(handler=self.noise_sweep)

        curves = subparsers.add_parser('curves', parents=[common],
                                       help='Re-export a metrics CSV as training curves')
        curves.add_argument('--metrics', dest='metrics_path', default=None,
                            help='metrics.csv to read (default: <output-dir>/metrics.csv)')
        curves.set_defaults(handler=self.curves)

    def evaluate(self, args) -> int:
        cfg = start_run(args, 'eval')
        if cfg.test_path is not None:
            if cfg.student_path is None:
                raise DomainError("Evaluating a test file needs a student checkpoint")
            model = load_checkpoint(cfg.student_path)
            test_set = load_corpus(cfg, cfg.test_path, model.vocab)
        else:
            world = load_world(cfg)
            model = load_checkpoint(cfg.student_path) if cfg.student_path else world.student_init
            test_set = world.test

        report = evaluate(model, test_set, cfg.length_split(), max_len=cfg.max_len, rng_seed=cfg.seed)
        path = save_eval_report(report, Path(cfg.output_dir) / 'eval_report.json')
        logger.info(f"Eval report written to {path}")

        endpoint = JudgeEndpoint.from_settings()
        if endpoint is not None:
            self._judge(cfg, model, test_set, endpoint)
        return 0

    def _judge(self, cfg, model, test_set, endpoint: JudgeEndpoint):
        judge = build_judge(endpoint)
        outputs = generate(model, test_set.prompts(), cfg.max_len)
        path = Path(cfg.output_dir) / 'judge.jsonl'
        available = 0
        with path.open('w', encoding='utf-8') as handle:
            for example, y in zip(test_set, outputs):
                candidate = ' '.join(model.vocab.decode(y.content(model.vocab)))
                verdict = judge.score(example.prompt_text, candidate, example.output)
                available += verdict.available
                record = {'prompt': example.prompt_text, 'candidate': candidate, **verdict.to_dict()}
                handle.write(json.dumps(record, ensure_ascii=False) + '\n')
        logger.info(f"Judge scored {available} of {len(test_set)} responses ({path})")

    def noise_sweep(self, args) -> int:
        cfg = start_run(args, 'noise-sweep')
        world = load_world(cfg)
        base = load_checkpoint(cfg.student_path) if cfg.student_path else world.student_init
        eval_set = world.valid if len(world.valid) else world.train
        rows = noise_sweep(base, world.teacher, eval_set, cfg.scales, cfg.n_per_scale,
                           beta=cfg.trainer_config().dpkd.beta, rng_seed=cfg.seed, max_len=cfg.max_len)
        path = write_noise_sweep(rows, Path(cfg.output_dir) / 'noise_sweep.csv')
        logger.info(f"Noise sweep over {len(cfg.scales)} scales written to {path}")
        return 0

    def curves(self, args) -> int:
        cfg = start_run(args, 'curves')
        source = Path(cfg.metrics_path) if cfg.metrics_path else Path(cfg.output_dir) / 'metrics.csv'
        if not source.is_file():
            raise DomainError(f"Metrics file not found: {source}")
        metrics = load_curves(source)
        path = export_curves(metrics, Path(cfg.output_dir) / 'curves.csv')
        logger.info(f"{len(metrics)} epochs exported to {path}; kd_loss window descent "
                    f"{kd_loss_descent_fraction(metrics):.2f}")
        return 0
