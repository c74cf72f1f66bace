import math

from rich.table import Table

from endosir.management.base import EndosirCommand, add_data_arguments, add_tuning_arguments
from endosir.services import run_fit


class Command(EndosirCommand):
    help = "Fit lasso, lsir, 2slasso or 2slsir on CSV data"
    command_name = "fit"

    def add_command_arguments(self, parser):
        add_data_arguments(parser)
        parser.add_argument("--estimator", help="lasso, lsir, 2slasso or 2slsir (default 2slsir)")
        add_tuning_arguments(parser)

    def run(self, config):
        return run_fit(config)

    def report(self, config, result):
        table = Table(title=f"{result['estimator']} on n={result['n']}")
        table.add_column("direction", justify="right")
        table.add_column("penalty", justify="right")
        table.add_column("adjusted eigenvalue", justify="right")
        for k, (penalty, adjusted) in enumerate(zip(result["penalties"], result["adjusted_eigenvalues"]), start=1):
            table.add_row(str(k), f"{penalty:.4g}", "-" if math.isnan(adjusted) else f"{adjusted:.4g}")
        self.print_table(table)
        self.stdout.write(f"support: {', '.join(result['support']) or '(empty)'}")
        self.print_files(result)
