"""
Shared plumbing for the endosir management commands.

Every command accepts ``--config``, ``--seed``, ``--threads`` and
``--out-dir``. Flags left out stay ``None`` so that the config file and
settings defaults show through. Errors from the numerical apps are
written to stderr as a JSON record and turned into a ``CommandError``
whose return code is the error's exit-code category.
"""

import io
import json
import logging
from typing import Any, Dict

from django.core.management.base import BaseCommand, CommandError
from rich.console import Console
from rich.table import Table

from endosir.config import COMMAND_KEYS, RunConfig, load_run_config
from endosir.exceptions import EndosirError

logger = logging.getLogger(__name__)

VERBOSITY_LEVELS = {0: logging.WARNING, 1: logging.INFO}


def add_tuning_arguments(parser) -> None:
    parser.add_argument("--slices", type=int, help="Number of slices H")
    parser.add_argument("--directions", type=int, help="Number of directions d")
    parser.add_argument("--tuning", help="Stage-two tuning: cv, bic, ebic or fixed")
    parser.add_argument("--folds", type=int, help="Cross-validation folds")
    parser.add_argument("--cv-repeats", dest="cv_repeats", type=int, help="Cross-validation repeats")
    add_first_stage_arguments(parser)


def add_first_stage_arguments(parser) -> None:
    parser.add_argument("--first-stage-tuning", dest="first_stage_tuning",
                        help="Stage-one tuning: bic, ebic, cv, fixed or theory")
    parser.add_argument("--ebic-gamma", dest="ebic_gamma", type=float, help="Extended BIC gamma")
    parser.add_argument("--theory-constant", dest="theory_constant", type=float,
                        help="Constant c0 of the theory-rate stage-one penalty")
    parser.add_argument("--penalty", type=float, help="Penalty for fixed tuning")
    parser.add_argument("--standardize", action="store_true", default=None,
                        help="Fit on unit-variance columns and map back")


def add_data_arguments(parser) -> None:
    parser.add_argument("--y", help="Response CSV (one column with a header)")
    parser.add_argument("--x", help="Covariate CSV")
    parser.add_argument("--z", help="Instrument CSV")


class EndosirCommand(BaseCommand):
    """Base class: subclasses set ``command_name`` and implement ``run`` and ``report``."""

    command_name = ""

    def add_arguments(self, parser):
        parser.add_argument("--config", help="Flat YAML file with run settings")
        parser.add_argument("--seed", type=int, help="Random seed")
        parser.add_argument("--threads", type=int, help="Parallel workers (-1 for all cores)")
        parser.add_argument("--out-dir", dest="out_dir", help="Directory for output files")
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser) -> None:
        pass

    def run(self, config: RunConfig) -> Dict[str, Any]:
        raise NotImplementedError

    def report(self, config: RunConfig, result: Dict[str, Any]) -> None:
        raise NotImplementedError

    def handle(self, *args, **options):
        logging.getLogger().setLevel(VERBOSITY_LEVELS.get(options["verbosity"], logging.DEBUG))
        flags = {key: value for key, value in options.items() if key in COMMAND_KEYS[self.command_name]}
        try:
            config = load_run_config(self.command_name, options.get("config"), flags)
            result = self.run(config)
        except EndosirError as exc:
            self.stderr.write(json.dumps(exc.to_record(), sort_keys=True))
            raise CommandError(str(exc), returncode=exc.exit_code) from exc
        logger.info("%s finished, %d files written", self.command_name, len(result.get("files", [])))
        if options["verbosity"] > 0:
            self.report(config, result)

    def print_table(self, table: Table) -> None:
        buffer = io.StringIO()
        Console(file=buffer, width=120, force_terminal=False).print(table)
        self.stdout.write(buffer.getvalue(), ending="")

    def print_files(self, result: Dict[str, Any]) -> None:
        for path in result.get("files", []):
            self.stdout.write(f"wrote {path}")
