"""
Factor augmentation pipelines.
Entry point: configures logging, then hands over to the command-line surface.
"""

import logging
import sys

from factorAug.cli import main as cli_main
from factorAug.config import settings
from factorAug.utils import setup_logging

logger = logging.getLogger(__name__)


def main() -> None:
    """Main function to run a factorAug command."""
    setup_logging(settings.LOG_LEVEL, settings.LOG_FILE)
    logger.info(f"Output directory: {settings.OUTPUT_DIRECTORY}")
    logger.info(f"Threads: {settings.THREADS}")

    try:
        code = cli_main(sys.argv[1:])
    except KeyboardInterrupt:
        logger.info("Stopped by user")
        code = 1
    sys.exit(code)


if __name__ == '__main__':
    main()
