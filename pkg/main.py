"""Main entry point for the application."""

import logging

from config.logging_config import configure_logging
from controller.cli import cli

if __name__ == "__main__":
    configure_logging()
    logger = logging.getLogger(__name__)
    logger.info("fodsctl starting up and logging system initialized.")
    cli(prog_name="fodsctl")
