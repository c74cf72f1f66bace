import os
import unittest
from unittest import mock

import numpy as np
from django.test import SimpleTestCase

from endosir.exceptions import ConfigInvalid, DegenerateLabels, DimensionMismatch
from lasso.tuning import TuningStrategy
from numkit.linalg import cholesky
from numkit.rng import SeededRng
from twostage.dimension import select_dimension
from twostage.first_stage import stage_one
from .design import (EndogeneityConfig, SimulationConfig, endogeneity_angle, generate, generate_endogeneity,
                     make_truth)
from .experiment import EstimatorOptions, run_experiment
from .metrics import projection_error, selection_auc

SLOW = bool(os.environ.get("ENDOSIR_SLOW_TESTS"))
QUICK = EstimatorOptions(slices=5, tuning=TuningStrategy(kind="bic"))


def pairwise_auc(scores, labels):
    positives = scores[labels == 1]
    negatives = scores[labels == 0]
    wins = sum((a > b) + 0.5 * (a == b) for a in positives for b in negatives)
    return wins / (positives.size * negatives.size)


class SimulationConfigTests(SimpleTestCase):
    def test_unknown_model(self):
        with self.assertRaises(ConfigInvalid) as ctx:
            SimulationConfig(model="vi")
        self.assertEqual(ctx.exception.key, "model")

    def test_bounds(self):
        with self.assertRaises(ConfigInvalid):
            SimulationConfig(p=4, s=5)
        with self.assertRaises(ConfigInvalid):
            SimulationConfig(q=3, r=5)
        with self.assertRaises(ConfigInvalid):
            SimulationConfig(z_kind="poisson")

    def test_dimension_follows_model(self):
        self.assertEqual([SimulationConfig(model=m).d for m in ("i", "ii", "iii", "iv", "v")], [1, 1, 1, 2, 2])


class MakeTruthTests(SimpleTestCase):
    def test_double_index_directions_are_orthogonal(self):
        config = SimulationConfig(model="iv")
        for seed in range(10):
            truth = make_truth(config, SeededRng(seed))
            self.assertAlmostEqual(truth.B[:, 0] @ truth.B[:, 1], 0.0, delta=1e-10)

    def test_support_and_instrument_sparsity(self):
        config = SimulationConfig(model="v", p=30, q=20)
        truth = make_truth(config, SeededRng(1))
        self.assertEqual(len(truth.support), 5)
        self.assertEqual(tuple(np.flatnonzero(np.any(truth.B != 0, axis=1))), truth.support)
        self.assertEqual(np.count_nonzero(truth.Gamma, axis=0).tolist(), [5] * 30)
        magnitudes = np.abs(truth.Gamma[truth.Gamma != 0])
        self.assertTrue(np.all((magnitudes >= 0.75) & (magnitudes <= 1.0)))

    def test_covariance_construction(self):
        config = SimulationConfig()
        truth = make_truth(config, SeededRng(2))
        support = list(truth.support)
        expected = -truth.sigma_u[np.ix_(support, support)] @ truth.B[support, 0]
        np.testing.assert_allclose(truth.sigma_ue[support], expected)
        outside = np.delete(truth.sigma_ue, support)
        self.assertEqual(np.sum(outside == 0.3), 5)
        self.assertEqual(np.count_nonzero(outside), 5)
        self.assertAlmostEqual(truth.sigma_u[0, 2], 0.04)

    def test_covariance_is_positive_definite_and_endogenous(self):
        config = SimulationConfig(p=40, q=40)
        for seed in range(20):
            truth = make_truth(config, SeededRng(seed))
            cholesky(truth.Sigma)
            self.assertGreater(endogeneity_angle(config, truth), 1e-3)

    def test_deterministic(self):
        config = SimulationConfig(model="iv")
        first, second = make_truth(config, SeededRng(3)), make_truth(config, SeededRng(3))
        np.testing.assert_array_equal(first.Sigma, second.Sigma)
        np.testing.assert_array_equal(first.Gamma, second.Gamma)


class GenerateTests(SimpleTestCase):
    def test_noiseless_linear_model(self):
        config = SimulationConfig(n=100, p=10, q=10)
        truth = make_truth(config, SeededRng(4))
        data = generate(config, truth, SeededRng(5), outcome_noise=False)
        np.testing.assert_allclose(data.y, data.x @ truth.B[:, 0], atol=1e-10)

    def test_instrument_covariance(self):
        config = SimulationConfig(n=5000, p=10, q=10)
        data = generate(config, make_truth(config, SeededRng(6)), SeededRng(7))
        empirical = data.z.T @ data.z / config.n
        tolerance = 5 * np.sqrt(1 + np.eye(10)) / np.sqrt(config.n)
        self.assertTrue(np.all(np.abs(empirical - np.eye(10)) <= tolerance))
        np.testing.assert_allclose(data.z.mean(axis=0), 0.0, atol=1e-12)

    def test_noise_covariance(self):
        config = SimulationConfig(n=5000, p=10, q=10)
        truth = make_truth(config, SeededRng(8))
        data = generate(config, truth, SeededRng(9))
        noise = np.column_stack([data.x - data.z @ truth.Gamma, data.y - data.x @ truth.B[:, 0]])
        empirical = noise.T @ noise / config.n
        variances = np.diag(truth.Sigma)
        tolerance = 5 * np.sqrt(np.outer(variances, variances) + truth.Sigma ** 2) / np.sqrt(config.n)
        self.assertTrue(np.all(np.abs(empirical - truth.Sigma) <= tolerance))

    def test_bernoulli_instruments(self):
        config = SimulationConfig(n=200, p=8, q=6, z_kind="bernoulli")
        data = generate(config, make_truth(config, SeededRng(10)), SeededRng(11))
        self.assertTrue(all(np.unique(data.z[:, k]).size == 2 for k in range(6)))

    def test_every_model_is_finite(self):
        for model in ("i", "ii", "iii", "iv", "v"):
            config = SimulationConfig(model=model, n=300, p=20, q=20)
            data = generate(config, make_truth(config, SeededRng(12)), SeededRng(13))
            self.assertTrue(np.all(np.isfinite(data.y)))
            self.assertGreaterEqual(data.resampled, 0)
            self.assertEqual(data.x.shape, (300, 20))

    def test_truth_must_match(self):
        truth = make_truth(SimulationConfig(p=10, q=10), SeededRng(14))
        with self.assertRaises(DimensionMismatch):
            generate(SimulationConfig(p=12, q=10), truth)

    def test_endogeneity_design(self):
        data = generate_endogeneity(EndogeneityConfig(scenario="III", n=50), SeededRng(15))
        noise = data.y - data.x @ data.truth.B[:, 0]
        np.testing.assert_allclose(noise, data.x @ np.array([-0.5, -0.5, 0.5, 0.5]), atol=1e-12)
        sine = generate_endogeneity(EndogeneityConfig(link="sine", n=50), SeededRng(15))
        self.assertTrue(np.all(np.abs(sine.y) <= 2.0))
        with self.assertRaises(ConfigInvalid):
            EndogeneityConfig(scenario="IV")


class ProjectionErrorTests(SimpleTestCase):
    def test_identity_and_reparametrisation(self):
        rng = SeededRng(20)
        b = rng.normal((12, 2))
        self.assertAlmostEqual(projection_error(b, b), 0.0, places=12)
        m = rng.normal((2, 2)) + 3 * np.eye(2)
        self.assertLess(projection_error(b @ m, b), 1e-10)

    def test_orthogonal_vectors(self):
        self.assertAlmostEqual(projection_error([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]), np.sqrt(2), places=12)

    def test_zero_estimate(self):
        b = SeededRng(21).normal((8, 2))
        self.assertAlmostEqual(projection_error(np.zeros((8, 2)), b), np.sqrt(2), places=10)

    def test_symmetry_bounds_and_invariance(self):
        rng = SeededRng(22)
        for _ in range(50):
            d = int(rng.integers(1, 4))
            b, c = rng.normal((10, d)), rng.normal((10, d))
            value = projection_error(b, c)
            self.assertAlmostEqual(value, projection_error(c, b), places=12)
            self.assertTrue(0 <= value <= np.sqrt(2 * d) + 1e-12)
            self.assertAlmostEqual(projection_error(b @ (rng.normal((d, d)) + 4 * np.eye(d)), c), value, places=10)

    def test_mismatch(self):
        with self.assertRaises(DimensionMismatch):
            projection_error(np.ones((4, 1)), np.ones((5, 1)))


class SelectionAucTests(SimpleTestCase):
    def test_perfect_and_empty(self):
        b = np.zeros((6, 1))
        b[[1, 4]] = [[2.0], [-1.0]]
        self.assertEqual(selection_auc(b, (1, 4)), 1.0)
        self.assertEqual(selection_auc(np.zeros((6, 1)), (1, 4)), 0.5)

    def test_matches_pairwise_count(self):
        rng = SeededRng(23)
        for _ in range(10):
            b = np.round(rng.normal((40, 2)), 1)
            support = tuple(sorted(rng.choice(40, 5).tolist()))
            labels = np.zeros(40, dtype=int)
            labels[list(support)] = 1
            oracle = pairwise_auc(np.linalg.norm(b, axis=1), labels)
            self.assertAlmostEqual(selection_auc(b, support), oracle, places=12)

    def test_support_must_be_proper(self):
        with self.assertRaises(DegenerateLabels):
            selection_auc(np.ones((3, 1)), (0, 1, 2))


class RunExperimentTests(SimpleTestCase):
    def test_repeatable(self):
        config = SimulationConfig(model="ii", n=100, p=10, q=10, seed=7)
        estimators = ["lasso", "lsir", "2slasso", "2slsir"]
        first = run_experiment(config, estimators, 1, options=QUICK)
        second = run_experiment(config, estimators, 1, options=QUICK)
        self.assertEqual(first.summaries, second.summaries)
        self.assertEqual([s.estimator for s in first.summaries], estimators)
        self.assertEqual(first.errors, ())

    def test_estimator_streams_do_not_depend_on_the_others(self):
        config = SimulationConfig(n=100, p=10, q=10, seed=8)
        alone = run_experiment(config, ["2slsir"], 2, options=QUICK)
        together = run_experiment(config, ["lsir", "2slsir"], 2, options=QUICK)
        self.assertEqual(alone.summaries[0], together.summaries[1])

    def test_failures_are_counted(self):
        config = SimulationConfig(n=15, p=6, q=6, seed=9)
        result = run_experiment(config, ["lasso", "lsir"], 3, options=EstimatorOptions(slices=10))
        lasso_row, lsir_row = result.summaries
        self.assertEqual(lasso_row.failures, 0)
        self.assertEqual(lsir_row.failures, 3)
        self.assertTrue(np.isnan(lsir_row.mean_error))
        self.assertEqual(len(result.errors), 3)

    def test_library_errors_are_recorded(self):
        config = SimulationConfig(n=60, p=8, q=8, seed=10)
        with mock.patch("simlab.experiment.fit_estimator", side_effect=np.linalg.LinAlgError("singular matrix")):
            result = run_experiment(config, ["lasso"], 2, options=QUICK)
        self.assertEqual(result.summaries[0].failures, 2)
        self.assertEqual(len(result.errors), 2)
        self.assertIn("singular matrix", result.errors[0])

    def test_replicate_seeds_are_distinct(self):
        config = SimulationConfig(n=60, p=8, q=8)
        result = run_experiment(config, ["lasso"], 5, options=QUICK)
        self.assertEqual(len({report.seed for report in result.reports}), 5)

    def test_invalid_requests(self):
        with self.assertRaises(ConfigInvalid):
            run_experiment(SimulationConfig(), ["ols"], 1)
        with self.assertRaises(ConfigInvalid):
            run_experiment(SimulationConfig(), ["lsir"], 0)
        with self.assertRaises(ConfigInvalid):
            run_experiment(EndogeneityConfig(), ["2slsir"], 1)


@unittest.skipUnless(SLOW, "set ENDOSIR_SLOW_TESTS to run the Monte Carlo acceptance checks")
class AcceptanceTests(SimpleTestCase):
    def summary(self, config, estimators, replicates, options=None):
        result = run_experiment(config, estimators, replicates, options=options, n_jobs=-1)
        return {row.estimator: row for row in result.summaries}

    def test_lasso_sir_under_endogeneity(self):
        for n, target in zip((100, 500, 1000), (0.095, 0.039, 0.028)):
            row = self.summary(EndogeneityConfig(scenario="I", n=n, seed=n), ["lsir"], 500)["lsir"]
            self.assertAlmostEqual(row.mean_error, target, delta=0.02)
            self.assertGreaterEqual(row.mean_auc, 0.995)
        row = self.summary(EndogeneityConfig(scenario="III", n=1000, seed=3), ["lsir"], 500)["lsir"]
        self.assertAlmostEqual(row.mean_error, 1.0, delta=0.05)
        self.assertAlmostEqual(row.mean_auc, 0.728, delta=0.05)

    def test_low_dimensional_table(self):
        for model in ("i", "ii", "iii"):
            rows = self.summary(SimulationConfig(model=model, n=200, seed=11),
                                ["lasso", "lsir", "2slasso", "2slsir"], 100)
            self.assertAlmostEqual(rows["2slsir"].mean_error, 0.18, delta=0.05)
            self.assertGreaterEqual(rows["2slsir"].mean_auc, 0.99)
            if model in ("i", "ii"):
                self.assertAlmostEqual(rows["lsir"].mean_error, 0.47, delta=0.07)
            if model == "ii":
                self.assertGreaterEqual(rows["2slasso"].mean_error, 0.9)

    def test_error_decreases_with_sample_size(self):
        for model in ("i", "ii", "iii", "iv", "v"):
            small = self.summary(SimulationConfig(model=model, n=200, seed=21), ["2slsir"], 50)["2slsir"]
            large = self.summary(SimulationConfig(model=model, n=500, seed=21), ["2slsir"], 50)["2slsir"]
            self.assertLess(large.mean_error, small.mean_error)

    def test_high_dimensional_table(self):
        rows = self.summary(SimulationConfig(model="ii", n=200, p=500, q=500, seed=31), ["lsir", "2slsir"], 30)
        self.assertAlmostEqual(rows["2slsir"].mean_error, 0.21, delta=0.09)
        self.assertGreaterEqual(rows["2slsir"].mean_auc, 0.95)
        self.assertGreaterEqual(rows["lsir"].mean_error, 0.30)

    def test_dimension_selection(self):
        config = SimulationConfig(model="i", n=200)
        for choice in ("Z", "X", "Xhat"):
            hits = 0
            for replicate in range(20):
                rng = SeededRng(replicate)
                truth = make_truth(config, rng.child(0))
                data = generate(config, truth, rng.child(1))
                regressors = {"Z": data.z, "X": data.x}.get(choice)
                if regressors is None:
                    regressors = stage_one(data.x, data.z, rng=rng.child(2)).fitted
                vote = select_dimension(data.y, regressors, rng=rng.child(3), regressor_choice=choice, n_jobs=-1)
                hits += vote.d_hat == 1
            self.assertGreaterEqual(hits / 20, 0.95)

    def test_double_index_dimension_selection(self):
        config = SimulationConfig(model="iv", n=200)
        hits = 0
        for replicate in range(40):
            rng = SeededRng(100 + replicate)
            truth = make_truth(config, rng.child(0))
            data = generate(config, truth, rng.child(1))
            vote = select_dimension(data.y, data.x, rng=rng.child(3), regressor_choice="X", n_jobs=-1)
            hits += vote.d_hat == 2
        self.assertAlmostEqual(hits / 40, 0.93, delta=0.15)
