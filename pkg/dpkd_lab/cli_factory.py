"""
Command-line factory wiring every controller onto one parser
"""
import argparse
import logging

from controllers.data_controller import DataController
from controllers.evaluation_controller import EvaluationController
from controllers.training_controller import TrainingController
from controllers.verification_controller import VerificationController

logger = logging.getLogger(__name__)


class CommandFactory:
    """Factory for the dpkd-lab argument parser"""

    @staticmethod
    def create_parser() -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(
            prog='dpkd-lab',
            description='Preference-based distillation of exactly enumerable tabular language models',
        )
        subparsers = parser.add_subparsers(dest='command', metavar='command')
        subparsers.required = True

        common = CommandFactory._common_options()
        CommandFactory._register_controllers(subparsers, common)
        return parser

    @staticmethod
    def _common_options() -> argparse.ArgumentParser:
        """Flags every subcommand accepts; each one overrides the config file"""
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument('--config', default=None, help='JSON run config')
        common.add_argument('--output-dir', dest='output_dir', default=None)
        common.add_argument('--seed', type=int, default=None)
        return common

    @staticmethod
    def _register_controllers(subparsers, common: argparse.ArgumentParser):
        DataController(subparsers, common)
        TrainingController(subparsers, common)
        EvaluationController(subparsers, common)
        VerificationController(subparsers, common)
        logger.debug(f"Registered subcommands: {', '.join(subparsers.choices)}")
