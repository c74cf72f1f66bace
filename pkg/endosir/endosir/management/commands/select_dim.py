from rich.table import Table

from endosir.management.base import EndosirCommand, add_data_arguments, add_first_stage_arguments
from endosir.services import run_select_dim


class Command(EndosirCommand):
    help = "Choose the structural dimension d by clustering adjusted eigenvalues"
    command_name = "select_dim"

    def add_command_arguments(self, parser):
        add_data_arguments(parser)
        parser.add_argument("--regressor", help="Z, X or Xhat")
        parser.add_argument("--slices", type=int, help="Number of slices H")
        parser.add_argument("--repeats", type=int, help="Repeated cross-validation splits")
        parser.add_argument("--dim-folds", dest="dim_folds", type=int, help="Folds per split")
        add_first_stage_arguments(parser)

    def run(self, config):
        return run_select_dim(config)

    def report(self, config, result):
        table = Table(title=f"dimension vote on {result['regressor']}: d = {result['d_hat']}")
        table.add_column("d", justify="right")
        table.add_column("proportion", justify="right")
        for value, share in result["proportions"].items():
            table.add_row(str(value), f"{share:.2f}")
        self.print_table(table)
        self.stdout.write(f"average d: {result['average']:.2f} over {result['repeats']} repeats")
        self.print_files(result)
