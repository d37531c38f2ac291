"""
Shared base for the panorama-iqa management commands.

Every command takes the run configuration the same way (``--config``,
``--set``, ``--seed``) and logs through the package logger on stderr at a
level picked from Django's ``--verbosity``. Library errors surface as
CommandError so ``manage``-style callers see a one-line message.
"""

import logging
import sys
from typing import Any, Dict

from django.core.management.base import BaseCommand, CommandError
from tqdm import tqdm

from panorama_iqa.exceptions import PanoramaIQAError
from panorama_iqa.settings import RunConfig, load_run_config, parse_set_option

PACKAGE_LOGGER = "panorama_iqa"

LOG_FORMAT = "  [%(levelname)s] %(message)s"

VERBOSITY_LEVELS = {0: logging.WARNING, 1: logging.INFO}


class TqdmLoggingHandler(logging.StreamHandler):
    """Log through tqdm.write so records do not break a live progress bar."""

    def emit(self, record: logging.LogRecord) -> None:
        try:
            tqdm.write(self.format(record), file=self.stream)
        except Exception:
            self.handleError(record)


class PanoramaCommand(BaseCommand):
    requires_system_checks = []

    # Commands that take no RunConfig override this.
    uses_config = True

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        if self.uses_config:
            parser.add_argument(
                "--config", default=None, help="Configuration file (key = value lines)"
            )
            parser.add_argument(
                "--set",
                dest="overrides",
                action="append",
                default=[],
                metavar="KEY=VALUE",
                help="Override one configuration key (repeatable)",
            )
            parser.add_argument(
                "--seed", type=int, default=None, help="Run seed (overrides the config)"
            )
        parser.add_argument(
            "--no-progress", action="store_true", help="Disable progress bars"
        )
        return parser

    def load_config(self, options: Dict[str, Any]) -> RunConfig:
        overrides = dict(parse_set_option(o) for o in options.get("overrides") or [])
        return load_run_config(options.get("config"), overrides, options.get("seed"))

    def execute(self, *args, **options):
        """Run the command with a stderr log handler on the package logger."""
        level = VERBOSITY_LEVELS.get(options.get("verbosity", 1), logging.DEBUG)
        handler = TqdmLoggingHandler(options.get("stderr") or sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler.setLevel(level)

        package_logger = logging.getLogger(PACKAGE_LOGGER)
        previous_level = package_logger.level
        package_logger.addHandler(handler)
        package_logger.setLevel(level)
        try:
            return super().execute(*args, **options)
        except (PanoramaIQAError, OSError) as e:
            raise CommandError(str(e)) from e
        finally:
            package_logger.removeHandler(handler)
            package_logger.setLevel(previous_level)

    def display_summary(self, title: str, rows: Dict[str, Any]) -> None:
        """Human-readable summary on stderr; stdout stays machine-readable."""
        self.stderr.write(self.style.SUCCESS("=" * 60))
        self.stderr.write(self.style.SUCCESS(title))
        self.stderr.write(self.style.SUCCESS("=" * 60))
        for name, value in rows.items():
            self.stderr.write(f"{name}: {value}")
