"""
dpkd-lab command-line entry point
"""
import logging
import sys
from typing import List, Optional

from cli_factory import CommandFactory
from config import settings
from exceptions import LabError, NumericError

logger = logging.getLogger(__name__)


def run(argv: Optional[List[str]] = None) -> int:
    """Parse, dispatch and map failures to exit codes: 1 for bad input, 2 for runtime failures"""
    parser = CommandFactory.create_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors and 0 for --help
        return 0 if e.code in (0, None) else 1

    try:
        return args.handler(args)
    except NumericError as e:
        logger.error(f"{args.command}: {e}")
        return 2
    except (LabError, ValueError) as e:
        logger.error(f"{args.command}: {e}")
        return 1
    except Exception as e:
        logger.error(f"{args.command} failed: {e}")
        return 2


def main():
    logging.basicConfig(level=getattr(logging, settings.log_level.upper(), logging.INFO),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    sys.exit(run())


if __name__ == '__main__':
    main()
