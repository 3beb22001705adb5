"""
Training controller: supervised fine-tuning and distillation runs
"""
import argparse
import logging
from dataclasses import replace
from pathlib import Path

from models.run_config import RunConfig
from models.training import ABLATION_FIELDS, Method
from services.checkpoint_service import load_checkpoint
from services.evaluation_service import export_curves, write_csv
from services.experiment_service import run_ablation
from services.run_service import checkpoints, dataset_vocab, load_corpus, load_world, start_run
from services.seqmodel_service import uniform_model
from services.trainer_service import kd_loss_descent_fraction, run_method, run_sft

logger = logging.getLogger(__name__)


class TrainingController:
    """Controller for the sft and distill subcommands"""

    def __init__(self, subparsers, common: argparse.ArgumentParser):
        self._register_commands(subparsers, common)

    def _register_commands(self, subparsers, common):
        trainer = argparse.ArgumentParser(add_help=False)
        trainer.add_argument('--lr', type=float, default=None)
        trainer.add_argument('--epochs', type=int, default=None)
        trainer.add_argument('--batch-size', dest='batch_size', type=int, default=None)
        trainer.add_argument('--max-len', dest='max_len', type=int, default=None)

        sft = subparsers.add_parser('sft', parents=[common, trainer],
                                    help='Maximum-likelihood fine-tuning on dataset responses')
        sft.set_defaults(handler=self.sft)

        distill = subparsers.add_parser('distill', parents=[common, trainer],
                                        help='Distil the teacher into the student with the chosen method')
        distill.add_argument('--method', default=None,
                             help='sft, kd, seqkd, rkld (or minillm), dpkd, ipo, cpo, simpo')
        distill.add_argument('--beta', type=float, default=None)
        distill.add_argument('--lam', type=float, default=None)
        distill.add_argument('--no-lm-loss', dest='no_lm_loss', action='store_true',
                             help='Drop the LM regulariser (lambda = 0)')
        distill.add_argument('--no-length-norm', dest='no_length_norm', action='store_true',
                             help='Score whole-sequence log ratios without length normalization')
        distill.add_argument('--ablation', action='store_true', default=None,
                             help='Run full / no_lm_loss / no_length_norm side by side')
        distill.add_argument('--n-samples', dest='n_samples', type=int, default=None,
                             help='Teacher samples for seqkd (default: one per training example)')
        distill.set_defaults(handler=self.distill)

    def sft(self, args) -> int:
        cfg = start_run(args, 'sft')
        trainer_cfg = replace(cfg.trainer_config(), method=Method.SFT)
        repo = checkpoints(cfg)
        if cfg.train_path is not None:
            init = load_checkpoint(cfg.student_path) if cfg.student_path else None
            vocab = init.vocab if init is not None else dataset_vocab(cfg)
            train_set = load_corpus(cfg, cfg.train_path, vocab)
            valid = load_corpus(cfg, cfg.valid_path, vocab)
            if init is None:
                init = uniform_model(vocab, cfg.order)
            model, metrics = run_sft(trainer_cfg, train_set, init, valid)
        else:
            world = load_world(cfg)
            model, metrics = run_sft(trainer_cfg, world.train, world.student_init, world.valid, world.teacher)
            repo.save(world.teacher, 'teacher.json')
        repo.save(model, 'student.json')
        export_curves(metrics, Path(cfg.output_dir) / 'metrics.csv')
        logger.info(f"SFT finished after {cfg.epochs} epochs: lm_loss={metrics[-1].lm_loss:.4f}")
        return 0

    def distill(self, args) -> int:
        cfg = start_run(args, 'distill')
        trainer_cfg = cfg.trainer_config()
        world = load_world(cfg)
        pretrain = load_corpus(cfg, cfg.pretrain_path, world.vocab)
        repo = checkpoints(cfg)
        repo.save(world.teacher, 'teacher.json')
        if cfg.ablation:
            return self._ablation(cfg, trainer_cfg, world, pretrain)

        student, metrics = run_method(trainer_cfg, world.train, world.teacher, world.student_init,
                                      pretrain=pretrain, valid=world.valid, n_samples=cfg.n_samples)
        repo.save(student, 'student.json')
        if metrics:
            export_curves(metrics, Path(cfg.output_dir) / 'metrics.csv')
            logger.info(f"[{trainer_cfg.method.value}] kd_loss window descent "
                        f"{kd_loss_descent_fraction(metrics):.2f}, final rouge_l={metrics[-1].rouge_l}")
        return 0

    def _ablation(self, cfg: RunConfig, trainer_cfg, world, pretrain) -> int:
        results = run_ablation(world, trainer_cfg, pretrain)
        out_dir = Path(cfg.output_dir)
        for row, metrics in results:
            export_curves(metrics, out_dir / f"metrics_{row.setting}.csv")
        path = write_csv(out_dir / 'ablation.csv', ABLATION_FIELDS, [row.to_dict() for row, _ in results])
        logger.info(f"Ablation table written to {path}")
        return 0
