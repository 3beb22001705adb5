"""
Verification controller: exact oracle suite and gradient checks
"""
import argparse
import logging
from pathlib import Path

from config import settings
from models.gradient import GRADCHECK_FIELDS
from models.oracle import ORACLE_FIELDS
from services.evaluation_service import write_csv
from services.gradient_service import run_gradcheck
from services.oracle_service import OracleSuite
from services.run_service import start_run

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-5


class VerificationController:
    """Controller for verify and gradcheck; a failed check exits with 2"""

    def __init__(self, subparsers, common: argparse.ArgumentParser):
        self._register_commands(subparsers, common)

    def _register_commands(self, subparsers, common):
        verify = subparsers.add_parser('verify', parents=[common], help='Run every exact oracle')
        verify.add_argument('--n-instances', dest='n_instances', type=int, default=None)
        verify.set_defaults(handler=self.verify)

        gradcheck = subparsers.add_parser('gradcheck', parents=[common],
                                          help='Analytic DPKD gradient against central differences')
        gradcheck.add_argument('--n-instances', dest='n_instances', type=int, default=None)
        gradcheck.set_defaults(handler=self.gradcheck)

    def verify(self, args) -> int:
        cfg = start_run(args, 'verify')
        n_instances = cfg.n_instances if cfg.n_instances is not None else 20
        results = OracleSuite(seed=cfg.seed, n_instances=n_instances).run()
        path = write_csv(Path(cfg.output_dir) / 'oracles.csv', ORACLE_FIELDS, [r.to_dict() for r in results])

        failed = [r.name for r in results if not r.passed]
        if failed:
            logger.error(f"Oracles failed: {', '.join(failed)} (table in {path})")
            return 2
        logger.info(f"All {len(results)} oracles passed (table in {path})")
        return 0

    def gradcheck(self, args) -> int:
        cfg = start_run(args, 'gradcheck')
        n_instances = cfg.n_instances if cfg.n_instances is not None else 100
        reports = run_gradcheck(cfg.seed, n_instances, max_workers=settings.max_workers)
        records = [
            {'instance': i, **report.to_dict(), 'passed': report.passed(GRADCHECK_TOLERANCE)}
            for i, report in enumerate(reports)
        ]
        path = write_csv(Path(cfg.output_dir) / 'gradcheck.csv', GRADCHECK_FIELDS, records)

        failed = [r['instance'] for r in records if not r['passed']]
        if failed:
            logger.error(f"Gradient check failed on instances {failed} (report in {path})")
            return 2
        logger.info(f"Gradient check passed on {len(records)} instances (report in {path})")
        return 0
