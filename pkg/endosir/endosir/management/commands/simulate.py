from rich.table import Table

from endosir.management.base import EndosirCommand, add_tuning_arguments
from endosir.services import run_simulate


class Command(EndosirCommand):
    help = "Run a Monte Carlo experiment and write summary.csv and replicates.csv"
    command_name = "simulate"

    def add_command_arguments(self, parser):
        parser.add_argument("--design", help="table (models i-v) or endogeneity (p = 4 demonstration)")
        parser.add_argument("--model", help="Outcome model i, ii, iii, iv or v")
        parser.add_argument("--n", type=int, help="Observations per replicate")
        parser.add_argument("--p", type=int, help="Covariates")
        parser.add_argument("--q", type=int, help="Instruments")
        parser.add_argument("--s", type=int, help="True support size")
        parser.add_argument("--r", type=int, help="Instruments per covariate")
        parser.add_argument("--z-kind", dest="z_kind", help="normal or bernoulli")
        parser.add_argument("--scenario", help="Endogeneity scenario I, II or III")
        parser.add_argument("--link", help="Endogeneity link: linear or sine")
        parser.add_argument("--estimators", help="Comma-separated list of lasso, lsir, 2slasso, 2slsir")
        parser.add_argument("--replicates", type=int, help="Number of simulated datasets")
        add_tuning_arguments(parser)

    def run(self, config):
        return run_simulate(config)

    def report(self, config, result):
        table = Table(title=f"{config.design} design, {result['replicates']} replicates")
        for column in ("estimator", "model", "n", "mean_error", "sd_error", "mean_auc", "sd_auc", "failures"):
            table.add_column(column, justify="left" if column in ("estimator", "model") else "right")
        for row in result["summaries"]:
            table.add_row(row["estimator"], row["model"], str(row["n"]), f"{row['mean_error']:.3f}",
                          f"{row['sd_error']:.3f}", f"{row['mean_auc']:.3f}", f"{row['sd_auc']:.3f}",
                          str(row["failures"]))
        self.print_table(table)
        self.print_files(result)
