from unittest import mock

import numpy as np
from django.test import SimpleTestCase

from endosir.exceptions import (ConfigInvalid, DegenerateCluster, DimensionMismatch, StabilityFailed,
                                TooFewObservations)
from lasso.tuning import TuningStrategy
from numkit.rng import SeededRng
from sir.estimators import lasso_sir
from .dimension import cluster_dimension, select_dimension
from .estimators import lasso_estimate, two_stage_lasso, two_stage_lasso_estimate, two_stage_lasso_sir
from .first_stage import stage_one, theory_penalties
from .stability import size_cap, stability_selection

ZERO = TuningStrategy(kind="fixed", penalty=0.0)


def instrumented(rng, n, p, q, r=5):
    """Covariates driven by r instruments each, plus the true Γ."""
    z = rng.normal((n, q))
    gamma = np.zeros((q, p))
    for j in range(p):
        rows = rng.choice(q, r)
        gamma[rows, j] = rng.signed_uniform(0.75, 1.0, r)
    return z @ gamma + rng.normal((n, p)), z, gamma


def alignment(b, truth):
    return abs(b @ truth) / max(np.linalg.norm(b), 1e-300)


class StageOneTests(SimpleTestCase):
    def test_self_instrument_gives_identity(self):
        x = SeededRng(1).normal((60, 4))
        fit = stage_one(x, x, ZERO)
        np.testing.assert_allclose(fit.gamma_hat, np.eye(4), atol=1e-10)
        np.testing.assert_allclose(fit.fitted, x - x.mean(axis=0), atol=1e-10)
        self.assertEqual(fit.support_sizes.tolist(), [4, 4, 4, 4])

    def test_fitted_values_are_instruments_times_gamma(self):
        x, z, _ = instrumented(SeededRng(2), 120, 6, 8)
        fit = stage_one(x, z)
        np.testing.assert_allclose(fit.fitted, (z - z.mean(axis=0)) @ fit.gamma_hat, atol=1e-12)
        self.assertEqual(fit.gamma_hat.shape, (8, 6))
        self.assertEqual(len(fit.reports), 6)

    def test_bic_recovers_instruments(self):
        shares = []
        for seed in range(3):
            x, z, gamma = instrumented(SeededRng(40 + seed), 500, 40, 40)
            fit = stage_one(x, z, TuningStrategy(kind="bic"), rng=SeededRng(seed))
            self.assertTrue(np.all((fit.support_sizes >= 1) & (fit.support_sizes <= 15)))
            found = [np.sum((fit.gamma_hat[:, j] != 0) & (gamma[:, j] != 0)) for j in range(40)]
            shares.append(np.mean(np.array(found) >= 4))
        self.assertGreaterEqual(np.median(shares), 0.8)

    def test_independent_covariate_gets_no_instruments(self):
        zeros = 0
        for seed in range(20):
            rng = SeededRng(100 + seed)
            fit = stage_one(rng.normal((500, 1)), rng.normal((500, 5)), TuningStrategy(kind="bic"))
            zeros += fit.support_sizes[0] == 0
        self.assertGreaterEqual(zeros, 18)

    def test_theory_penalties(self):
        rng = SeededRng(3)
        x, z, _ = instrumented(rng, 200, 5, 10)
        xc, zc = x - x.mean(axis=0), z - z.mean(axis=0)
        penalties = theory_penalties(xc, zc, constant=2.0)
        self.assertEqual(penalties.shape, (5,))
        self.assertTrue(np.all(penalties > 0))
        np.testing.assert_allclose(theory_penalties(xc, zc, constant=4.0), 2 * penalties)
        fit = stage_one(x, z, TuningStrategy(kind="theory", constant=2.0))
        np.testing.assert_allclose(fit.penalties, penalties)

    def test_row_mismatch(self):
        rng = SeededRng(4)
        with self.assertRaises(DimensionMismatch):
            stage_one(rng.normal((30, 2)), rng.normal((31, 3)))


class TwoStageTests(SimpleTestCase):
    def test_reduces_to_lasso_sir_with_self_instruments(self):
        for seed in range(5):
            rng = SeededRng(10 + seed)
            x = rng.normal((150, 6))
            y = np.sin(x[:, 0]) + x[:, 1] + 0.2 * rng.normal(150)
            for tuning in (TuningStrategy(kind="fixed", penalty=0.05), TuningStrategy(kind="cv", folds=5)):
                two = two_stage_lasso_sir(y, x, x, H=5, d=2, tuning=tuning, first_stage=ZERO, rng=SeededRng(seed))
                one = lasso_sir(y, x, H=5, d=2, tuning=tuning, rng=SeededRng(seed).child(1))
                self.assertLessEqual(np.max(np.abs(two.b_hat - one.b_hat)), 1e-8)
                self.assertEqual(two.stage, "two-stage")
                self.assertIsNotNone(two.first_stage)

    def test_two_stage_lasso_reduces_to_least_squares(self):
        rng = SeededRng(20)
        x = rng.normal((80, 4))
        y = x @ np.array([1.0, -1.0, 0.5, 0.0]) + rng.normal(80)
        beta = two_stage_lasso(y, x, x, tuning=ZERO, first_stage=ZERO)
        xc, yc = x - x.mean(axis=0), y - y.mean()
        np.testing.assert_allclose(beta, np.linalg.lstsq(xc, yc, rcond=None)[0], atol=1e-8)

    def test_linear_estimates_carry_no_eigenvalue(self):
        rng = SeededRng(21)
        x, z, _ = instrumented(rng, 100, 5, 6)
        y = x[:, 0] + rng.normal(100)
        estimate = two_stage_lasso_estimate(y, x, z, tuning=TuningStrategy(kind="bic"))
        self.assertEqual(estimate.stage, "two-stage-linear")
        self.assertTrue(np.isnan(estimate.eigenvalues[0]))
        self.assertEqual(lasso_estimate(y, x, TuningStrategy(kind="bic")).stage, "lasso")

    def test_endogeneity_is_corrected(self):
        wins = 0
        for seed in range(10):
            rng = SeededRng(300 + seed)
            n, p = 400, 6
            z = rng.normal((n, p))
            hidden = rng.normal(n)
            x = z + 0.8 * hidden[:, None] * np.array([0, 0, 1.0, 1.0, 0, 0]) + 0.5 * rng.normal((n, p))
            y = x[:, 0] + x[:, 1] + hidden + 0.2 * rng.normal(n)
            truth = np.array([1.0, 1.0, 0, 0, 0, 0]) / np.sqrt(2)
            tuning = TuningStrategy(kind="bic")
            two = two_stage_lasso_sir(y, x, z, H=5, tuning=tuning, rng=SeededRng(seed)).b_hat[:, 0]
            one = lasso_sir(y, x, H=5, tuning=tuning).b_hat[:, 0]
            wins += alignment(two, truth) > alignment(one, truth)
        self.assertGreaterEqual(wins, 8)

    def test_deterministic(self):
        rng = SeededRng(22)
        x, z, _ = instrumented(rng, 100, 5, 6)
        y = x[:, 0] + rng.normal(100)
        first = two_stage_lasso_sir(y, x, z, H=5, rng=SeededRng(3))
        second = two_stage_lasso_sir(y, x, z, H=5, rng=SeededRng(3))
        np.testing.assert_array_equal(first.b_hat, second.b_hat)


class ClusterDimensionTests(SimpleTestCase):
    def test_bimodal_split(self):
        self.assertEqual(cluster_dimension([10, 9, 0.1, 0.05, 0.01]), 2)

    def test_single_large_value(self):
        self.assertEqual(cluster_dimension([0.01, 3.0, 0.02, 0.0]), 1)

    def test_all_equal(self):
        with self.assertRaises(DegenerateCluster) as ctx:
            cluster_dimension([0.4, 0.4, 0.4])
        self.assertEqual(ctx.exception.context["d_hat"], 3)


class SelectDimensionTests(SimpleTestCase):
    def test_single_index_model(self):
        rng = SeededRng(30)
        x = rng.normal((200, 8))
        y = x[:, 0] - x[:, 1] + 0.2 * rng.normal(200)
        vote = select_dimension(y, x, H=5, repeats=5, rng=SeededRng(1))
        self.assertEqual(vote.d_hat, 1)
        self.assertEqual(vote.repeats, 5)
        self.assertIn(vote.d_hat, vote.votes)
        self.assertAlmostEqual(sum(vote.proportions().values()), 1.0)

    def test_same_seed_same_votes(self):
        rng = SeededRng(31)
        x = rng.normal((120, 5))
        y = np.exp(x[:, 0]) + rng.normal(120)
        first = select_dimension(y, x, H=4, repeats=3, rng=SeededRng(2))
        second = select_dimension(y, x, H=4, repeats=3, rng=SeededRng(2))
        self.assertEqual(first.votes, second.votes)


class StabilitySelectionTests(SimpleTestCase):
    def test_strong_variable_is_always_selected(self):
        rng = SeededRng(50)
        x = rng.normal((100, 10))
        y = 5 * x[:, 3] + 0.1 * rng.normal(100)
        result = stability_selection(y, x, estimator="one-stage", subsamples=10, rng=SeededRng(1))
        self.assertEqual(result.selection_probability.shape, (10, result.grid.size))
        self.assertEqual(np.max(result.selection_probability[3]), 1.0)
        self.assertIn(3, result.selected)
        self.assertTrue(np.all((result.selection_probability >= 0) & (result.selection_probability <= 1)))

    def test_pure_noise_rarely_selected(self):
        rng = SeededRng(51)
        x = rng.normal((200, 40))
        y = rng.normal(200)
        result = stability_selection(y, x, estimator="one-stage", subsamples=50, rng=SeededRng(2))
        self.assertGreaterEqual(np.mean(result.max_probability < 0.5), 0.95)

    def test_two_stage_deterministic(self):
        rng = SeededRng(52)
        x, z, _ = instrumented(rng, 60, 4, 5)
        y = x[:, 0] + rng.normal(60)
        first = stability_selection(y, x, z, subsamples=4, rng=SeededRng(3))
        second = stability_selection(y, x, z, subsamples=4, rng=SeededRng(3))
        np.testing.assert_array_equal(first.selection_probability, second.selection_probability)
        np.testing.assert_array_equal(first.grid, second.grid)
        linear = stability_selection(y, x, z, estimator="two-stage-linear", subsamples=4, rng=SeededRng(3))
        self.assertEqual(linear.used, 4)

    def test_size_cap(self):
        self.assertAlmostEqual(size_cap(40), np.sqrt(60.0))
        self.assertAlmostEqual(size_cap(40, cutoff=0.9, error_bound=2.0), np.sqrt(144.0))

    def test_admissible_points_and_error_bound_rule(self):
        rng = SeededRng(55)
        x = rng.normal((200, 40))
        y = x[:, :6].sum(axis=1) + 0.5 * rng.normal(200)
        result = stability_selection(y, x, estimator="one-stage", subsamples=20, rng=SeededRng(4))
        probability = result.selection_probability
        np.testing.assert_allclose(result.average_size, probability.sum(axis=0))
        np.testing.assert_array_equal(result.admissible, result.average_size <= np.sqrt(1.5 * 40))
        best = probability[:, result.admissible].max(axis=1)
        self.assertEqual(result.mb_selected, tuple(int(j) for j in np.flatnonzero(best >= 0.75)))
        self.assertEqual(result.selected, tuple(int(j) for j in np.flatnonzero(best >= 0.5)))
        self.assertTrue(set(range(6)) <= set(result.selected))
        self.assertTrue(set(result.mb_selected) <= set(result.selected))

        looser = stability_selection(y, x, estimator="one-stage", subsamples=20, rng=SeededRng(4), error_bound=4.0)
        np.testing.assert_array_equal(looser.selection_probability, probability)
        self.assertTrue(np.all(looser.admissible >= result.admissible))
        np.testing.assert_array_equal(looser.admissible, result.average_size <= np.sqrt(6.0 * 40))

    def test_failed_subsamples(self):
        rng = SeededRng(53)
        x = rng.normal((20, 3))
        with self.assertRaises(StabilityFailed):
            stability_selection(x[:, 0], x, estimator="one-stage", subsamples=3, H=10)

    def test_library_errors_count_as_failed_subsamples(self):
        rng = SeededRng(56)
        x = rng.normal((40, 4))
        with mock.patch("twostage.stability._activity", side_effect=np.linalg.LinAlgError("singular matrix")):
            with self.assertRaises(StabilityFailed):
                stability_selection(x[:, 0], x, estimator="one-stage", subsamples=3, H=4)

    def test_guards(self):
        rng = SeededRng(54)
        with self.assertRaises(TooFewObservations):
            stability_selection(rng.normal(19), rng.normal((19, 3)), estimator="one-stage")
        with self.assertRaises(ConfigInvalid):
            stability_selection(rng.normal(30), rng.normal((30, 3)), estimator="bagging")
        with self.assertRaises(ConfigInvalid):
            stability_selection(rng.normal(30), rng.normal((30, 3)), estimator="two-stage")
