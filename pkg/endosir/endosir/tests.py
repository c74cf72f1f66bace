import io
import json
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings

from numkit.rng import SeededRng
from .config import load_run_config, read_config_file
from .exceptions import ConfigInvalid, IoError, SchemaMismatch
from .services import drop_constant_columns, load_inputs, read_matrix, read_response

QUICK_SIMULATION = {"n": 60, "p": 8, "q": 8, "s": 3, "r": 2, "replicates": 2, "estimators": "lasso,lsir",
                    "slices": 5, "tuning": "bic", "seed": 11}


def write_frame(directory, name, frame):
    path = Path(directory) / name
    frame.to_csv(path, index=False)
    return str(path)


def toy_data(directory, n=20, p=3, q=4, seed=0):
    """Index model y = x1 + x2 + noise with x driven by instruments."""
    rng = SeededRng(seed)
    z = rng.normal((n, q))
    x = z[:, :p] + 0.5 * rng.normal((n, p))
    y = x[:, 0] + x[:, 1] + 0.1 * rng.normal(n)
    return (write_frame(directory, "y.csv", pd.DataFrame({"y": y})),
            write_frame(directory, "x.csv", pd.DataFrame(x, columns=[f"x{j + 1}" for j in range(p)])),
            write_frame(directory, "z.csv", pd.DataFrame(z, columns=[f"z{j + 1}" for j in range(q)])))


def run(command, **options):
    stdout, stderr = io.StringIO(), io.StringIO()
    call_command(command, stdout=stdout, stderr=stderr, **options)
    return stdout.getvalue()


class RunConfigTests(SimpleTestCase):
    def test_defaults_come_from_settings(self):
        config = load_run_config("simulate")
        self.assertEqual(config.slices, 10)
        self.assertEqual(config.tuning, "cv")
        self.assertEqual(config.first_stage_tuning, "bic")
        self.assertEqual(config.replicates, 100)
        self.assertEqual(config.estimators, ("lasso", "lsir", "2slasso", "2slsir"))

    @override_settings(ENDOSIR={"SLICES": 6, "REPLICATES": 3})
    def test_settings_override(self):
        config = load_run_config("simulate")
        self.assertEqual((config.slices, config.replicates), (6, 3))

    def test_flags_beat_file_beat_settings(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run.yaml"
            path.write_text("n: 60\nreplicates: 7\nz-kind: bernoulli\nestimators: [lsir, 2slsir]\n")
            config = load_run_config("simulate", path, {"n": 80, "p": None})
        self.assertEqual(config.n, 80)
        self.assertEqual(config.replicates, 7)
        self.assertEqual(config.p, 40)
        self.assertEqual(config.z_kind, "bernoulli")
        self.assertEqual(config.estimators, ("lsir", "2slsir"))

    def test_comma_separated_estimators(self):
        config = load_run_config("simulate", flags={"estimators": "lasso, 2slsir"})
        self.assertEqual(config.estimators, ("lasso", "2slsir"))

    def test_unknown_and_foreign_keys(self):
        with self.assertRaises(ConfigInvalid) as caught:
            load_run_config("simulate", flags={"colour": "red"})
        self.assertEqual(caught.exception.key, "colour")
        with self.assertRaises(ConfigInvalid) as caught:
            load_run_config("simulate", flags={"regressor": "X"})
        self.assertEqual(caught.exception.key, "regressor")

    def test_bad_values_name_the_key(self):
        cases = [({"model": "vi"}, "model"), ({"slices": 1}, "slices"), ({"n": "many"}, "n"),
                 ({"estimators": "lasso,ridge"}, "estimators"), ({"tuning": "theory"}, "tuning"),
                 ({"tuning": "fixed"}, "penalty"), ({"s": 50}, "s")]
        for flags, key in cases:
            with self.subTest(flags=flags):
                with self.assertRaises(ConfigInvalid) as caught:
                    load_run_config("simulate", flags=flags)
                self.assertEqual(caught.exception.key, key)
                self.assertEqual(caught.exception.exit_code, 2)

    def test_data_commands_need_their_files(self):
        with self.assertRaises(ConfigInvalid) as caught:
            load_run_config("fit", flags={"y": "y.csv", "x": "x.csv"})
        self.assertEqual(caught.exception.key, "z")
        config = load_run_config("fit", flags={"y": "y.csv", "x": "x.csv", "estimator": "lsir"})
        self.assertIsNone(config.z)
        with self.assertRaises(ConfigInvalid) as caught:
            load_run_config("select_dim", flags={"y": "y.csv", "x": "x.csv"})
        self.assertEqual(caught.exception.key, "regressor")
        load_run_config("select_dim", flags={"y": "y.csv", "x": "x.csv", "regressor": "X"})

    def test_stability_cutoff_range(self):
        flags = {"y": "y.csv", "x": "x.csv", "estimator": "one-stage"}
        for cutoff in (0.5, 1.2):
            with self.assertRaises(ConfigInvalid):
                load_run_config("stability", flags={**flags, "cutoff": cutoff})
        self.assertEqual(load_run_config("stability", flags={**flags, "cutoff": 1.0}).cutoff, 1.0)

    def test_endogeneity_design_runs_lsir_only(self):
        config = load_run_config("simulate", flags={"design": "endogeneity", "scenario": "II"})
        self.assertEqual(config.estimators, ("lsir",))
        self.assertEqual(config.simulation_design().label, "endogeneity-II-linear")
        with self.assertRaises(ConfigInvalid):
            load_run_config("simulate", flags={"design": "endogeneity", "estimators": "2slsir"})

    def test_config_file_errors(self):
        with tempfile.TemporaryDirectory() as tmp:
            listing = Path(tmp) / "list.yaml"
            listing.write_text("- n\n- p\n")
            with self.assertRaises(ConfigInvalid):
                read_config_file(listing)
            empty = Path(tmp) / "empty.yaml"
            empty.write_text("")
            self.assertEqual(read_config_file(empty), {})
            with self.assertRaises(IoError):
                read_config_file(Path(tmp) / "missing.yaml")


class InputTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def write(self, name, text):
        path = Path(self.tmp.name) / name
        path.write_text(text)
        return str(path)

    def test_missing_value_reports_row_and_column(self):
        path = self.write("x.csv", "a,b\n1,2\n3,\n5,6\n")
        with self.assertRaises(SchemaMismatch) as caught:
            read_matrix(path)
        self.assertEqual((caught.exception.row, caught.exception.column), (2, "b"))
        self.assertEqual(caught.exception.exit_code, 3)

    def test_non_numeric_value(self):
        path = self.write("x.csv", "a,b\n1,2\n3,4\nfive,6\n")
        with self.assertRaises(SchemaMismatch) as caught:
            read_matrix(path)
        self.assertEqual((caught.exception.row, caught.exception.column), (3, "a"))

    def test_response_must_have_one_column(self):
        self.assertEqual(read_response(self.write("y.csv", "y\n1\n2.5\n")).tolist(), [1.0, 2.5])
        with self.assertRaises(SchemaMismatch):
            read_response(self.write("yy.csv", "y,w\n1,2\n"))

    def test_constant_columns_are_dropped(self):
        frame = pd.DataFrame({"a": [1.0, 2.0, 3.0], "b": [4.0, 4.0, 4.0]})
        with self.assertLogs("endosir.services", level="WARNING"):
            kept, dropped = drop_constant_columns(frame, "covariate")
        self.assertEqual(list(kept.columns), ["a"])
        self.assertEqual(dropped, ["b"])

    def test_row_mismatch(self):
        config = load_run_config("fit", flags={"y": self.write("y.csv", "y\n1\n2\n3\n"),
                                               "x": self.write("x.csv", "a\n1\n2\n"), "estimator": "lsir"})
        with self.assertRaises(SchemaMismatch) as caught:
            load_inputs(config, need_z=False)
        self.assertEqual(caught.exception.row, 3)

    def test_missing_file(self):
        config = load_run_config("fit", flags={"y": str(Path(self.tmp.name) / "nope.csv"),
                                               "x": self.write("x.csv", "a\n1\n"), "estimator": "lsir"})
        with self.assertRaises(IoError):
            load_inputs(config, need_z=False)


class CommandTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def test_simulate_is_deterministic(self):
        outputs = []
        for name in ("first", "second"):
            out = self.root / name
            text = run("simulate", out_dir=str(out), **QUICK_SIMULATION)
            self.assertIn("lsir", text)
            outputs.append(((out / "summary.csv").read_bytes(), (out / "replicates.csv").read_bytes()))
        self.assertEqual(outputs[0], outputs[1])
        summary = pd.read_csv(self.root / "first" / "summary.csv")
        self.assertEqual(summary["estimator"].tolist(), ["lasso", "lsir"])
        self.assertTrue((summary["replicates"] == 2).all())
        records = pd.read_csv(self.root / "first" / "replicates.csv")
        self.assertEqual(len(records), 4)
        self.assertTrue(((records["auc"] >= 0) & (records["auc"] <= 1)).all())

    def test_unknown_model_exits_with_config_code(self):
        stderr = io.StringIO()
        with self.assertRaises(CommandError) as caught:
            call_command("simulate", model="vi", out_dir=str(self.root), stdout=io.StringIO(), stderr=stderr)
        self.assertEqual(caught.exception.returncode, 2)
        record = json.loads(stderr.getvalue())
        self.assertEqual(record["error"], "ConfigInvalid")
        self.assertEqual(record["context"]["key"], "model")
        self.assertFalse((self.root / "summary.csv").exists())

    def test_fit_writes_coefficients_and_gamma(self):
        y, x, z = toy_data(self.root)
        out = self.root / "fit"
        run("fit", y=y, x=x, z=z, estimator="2slsir", slices=2, tuning="bic", out_dir=str(out))
        coefficients = pd.read_csv(out / "coefficients.csv")
        self.assertEqual(coefficients["variable"].tolist(), ["x1", "x2", "x3"])
        self.assertEqual(list(coefficients.columns), ["variable", "beta_1"])
        gamma = pd.read_csv(out / "gamma.csv")
        self.assertEqual(gamma["instrument"].tolist(), ["z1", "z2", "z3", "z4"])
        estimate = json.loads((out / "estimate.json").read_text())
        self.assertEqual(estimate["estimator"], "2slsir")
        self.assertEqual(estimate["n"], 20)
        self.assertIn("first_stage", estimate)

    def test_fit_drops_constant_column(self):
        y, x, _ = toy_data(self.root)
        frame = pd.read_csv(x)
        frame["flat"] = 1.0
        x = write_frame(self.root, "x_flat.csv", frame)
        out = self.root / "flat"
        with self.assertLogs("endosir.services", level="WARNING"):
            run("fit", y=y, x=x, estimator="lsir", slices=2, tuning="bic", out_dir=str(out))
        estimate = json.loads((out / "estimate.json").read_text())
        self.assertEqual(estimate["dropped_columns"], ["flat"])
        self.assertEqual(estimate["variables"], ["x1", "x2", "x3"])
        self.assertNotIn("first_stage", estimate)
        self.assertFalse((out / "gamma.csv").exists())

    def test_fit_bad_data_exits_with_data_code(self):
        y, _, _ = toy_data(self.root)
        x = self.root / "broken.csv"
        x.write_text("a,b\n" + "1,2\n" * 19 + "1,\n")
        with self.assertRaises(CommandError) as caught:
            call_command("fit", y=y, x=str(x), estimator="lsir", out_dir=str(self.root / "out"),
                         stdout=io.StringIO(), stderr=io.StringIO())
        self.assertEqual(caught.exception.returncode, 3)

    def test_fit_too_many_directions_exits_with_config_code(self):
        y, x, _ = toy_data(self.root)
        stderr = io.StringIO()
        with self.assertRaises(CommandError) as caught:
            call_command("fit", y=y, x=x, estimator="lsir", directions=5, slices=4, tuning="bic",
                         out_dir=str(self.root / "out"), stdout=io.StringIO(), stderr=stderr)
        self.assertEqual(caught.exception.returncode, 2)
        record = json.loads(stderr.getvalue())
        self.assertEqual(record["error"], "ConfigInvalid")
        self.assertEqual(record["context"]["key"], "directions")

    def test_select_dim_needs_regressor(self):
        y, x, _ = toy_data(self.root)
        stderr = io.StringIO()
        with self.assertRaises(CommandError) as caught:
            call_command("select_dim", y=y, x=x, out_dir=str(self.root), stdout=io.StringIO(), stderr=stderr)
        self.assertEqual(caught.exception.returncode, 2)
        self.assertEqual(json.loads(stderr.getvalue())["context"]["key"], "regressor")

    def test_select_dim_writes_vote(self):
        y, x, _ = toy_data(self.root, n=60)
        out = self.root / "dim"
        run("select_dim", y=y, x=x, regressor="X", slices=3, repeats=4, dim_folds=2, out_dir=str(out))
        vote = json.loads((out / "dimension.json").read_text())
        self.assertEqual(vote["regressor"], "X")
        self.assertEqual(len(vote["votes"]), 4)
        self.assertIn(vote["d_hat"], (1, 2))

    def test_stability_is_deterministic(self):
        y, x, z = toy_data(self.root, n=60, p=5, q=6, seed=3)
        outputs = []
        for name in ("first", "second"):
            out = self.root / name
            run("stability", y=y, x=x, z=z, estimator="two-stage", slices=3, subsamples=6, seed=5,
                out_dir=str(out))
            outputs.append((out / "stability.csv").read_bytes())
        self.assertEqual(outputs[0], outputs[1])
        paths = pd.read_csv(self.root / "first" / "stability.csv")
        self.assertEqual(list(paths.columns), ["variable", "grid_index", "penalty", "probability"])
        self.assertEqual(len(paths), 5 * 100)
        self.assertTrue(np.all((paths["probability"] >= 0) & (paths["probability"] <= 1)))
        selected = json.loads((self.root / "first" / "selected.json").read_text())
        self.assertEqual(selected["subsamples"], 6)
