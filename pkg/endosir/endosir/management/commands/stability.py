from rich.table import Table

from endosir.management.base import EndosirCommand, add_data_arguments, add_first_stage_arguments
from endosir.services import run_stability


class Command(EndosirCommand):
    help = "Stability selection paths over the stage-two penalty grid"
    command_name = "stability"

    def add_command_arguments(self, parser):
        add_data_arguments(parser)
        parser.add_argument("--estimator", help="one-stage, two-stage or two-stage-linear (default two-stage)")
        parser.add_argument("--slices", type=int, help="Number of slices H")
        parser.add_argument("--directions", type=int, help="Number of directions d")
        parser.add_argument("--subsamples", type=int, help="Number of half-samples")
        parser.add_argument("--cutoff", type=float, help="Error-bound probability cutoff")
        parser.add_argument("--threshold", type=float, help="Maximum-probability threshold")
        parser.add_argument("--error-bound", dest="error_bound", type=float,
                            help="Expected number of false selections")
        add_first_stage_arguments(parser)

    def run(self, config):
        return run_stability(config)

    def report(self, config, result):
        table = Table(title=f"{result['estimator']} stability, {result['subsamples'] - result['failures']} "
                            f"of {result['subsamples']} subsamples")
        table.add_column("variable")
        table.add_column("max probability", justify="right")
        table.add_column("selected")
        ranked = sorted(result["max_probability"].items(), key=lambda item: -item[1])
        for name, probability in ranked[:20]:
            table.add_row(name, f"{probability:.2f}", "yes" if name in result["selected"] else "")
        self.print_table(table)
        self.print_files(result)
