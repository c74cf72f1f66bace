import itertools

import numpy as np
from django.test import SimpleTestCase

from endosir.exceptions import DegenerateFolds, InvalidProblem, MaxIterations
from numkit.rng import SeededRng
from .solver import GramSystem, LassoProblem, path, penalty_grid, solve, solve_system
from .tuning import TuningStrategy, fold_partition, select_penalty, tune_bic, tune_cv


def centered(a):
    a = np.asarray(a, dtype=float)
    return a - a.mean(axis=0)


def random_problem(rng, n, m, signal=2):
    x = centered(rng.normal((n, m)))
    beta = np.zeros(m)
    beta[:min(signal, m)] = rng.uniform(0.5, 2.0, min(signal, m))
    y = centered(x @ beta + rng.normal(n))
    return x, y


def objective(x, y, beta, penalty):
    n = x.shape[0]
    return 0.5 * np.sum((y - x @ beta) ** 2) / n + penalty * np.sum(np.abs(beta))


def brute_force_minimum(x, y, penalty, rounds=40, points=11):
    m = x.shape[1]
    ols = np.linalg.lstsq(x, y, rcond=None)[0]
    center = np.zeros(m)
    width = 2.0 * max(1.0, float(np.max(np.abs(ols))))
    best = objective(x, y, center, penalty)
    for _ in range(rounds):
        axes = [np.linspace(c - width, c + width, points) for c in center]
        for candidate in itertools.product(*axes):
            candidate = np.array(candidate)
            value = objective(x, y, candidate, penalty)
            if value < best:
                best, center = value, candidate
        width *= 0.5
    return best


class SolveTests(SimpleTestCase):
    def test_single_coordinate_soft_threshold(self):
        x = np.array([[1.0], [-1.0], [1.0], [-1.0]])
        y = np.array([2.0, -2.0, 2.0, -2.0])
        fit = solve(LassoProblem(x, y, 0.5))
        self.assertAlmostEqual(fit.coefficients[0], 1.5, places=12)

    def test_zero_penalty_is_least_squares(self):
        x, y = random_problem(SeededRng(1), 50, 6)
        fit = solve(LassoProblem(x, y, 0.0))
        np.testing.assert_allclose(fit.coefficients, np.linalg.lstsq(x, y, rcond=None)[0], atol=1e-10)

    def test_full_shrinkage_threshold(self):
        x, y = random_problem(SeededRng(2), 40, 5)
        mu_max = np.max(np.abs(x.T @ y / 40))
        for penalty in (mu_max, 1.5 * mu_max):
            fit = solve(LassoProblem(x, y, penalty))
            np.testing.assert_array_equal(fit.coefficients, np.zeros(5))

    def test_kkt_certificate_on_random_problems(self):
        rng = SeededRng(3)
        for _ in range(200):
            n = int(rng.integers(20, 61))
            m = int(rng.integers(3, 31))
            x, y = random_problem(rng, n, m, signal=int(rng.integers(0, 4)))
            mu_max = np.max(np.abs(x.T @ y / n))
            penalty = float(rng.uniform(0.01, 1.0)) * mu_max
            fit = solve(LassoProblem(x, y, penalty))
            gradient = x.T @ (y - x @ fit.coefficients) / n
            self.assertLessEqual(fit.kkt_residual, 1e-6)
            self.assertTrue(np.all(np.abs(gradient) <= penalty + 1e-6))
            active = fit.coefficients != 0
            np.testing.assert_allclose(gradient[active], penalty * np.sign(fit.coefficients[active]), atol=1e-6)

    def test_agrees_with_brute_force_in_small_dimensions(self):
        rng = SeededRng(4)
        for m in (1, 2, 3):
            for _ in range(3):
                x, y = random_problem(rng, 20, m)
                penalty = 0.3 * np.max(np.abs(x.T @ y / 20))
                fit = solve(LassoProblem(x, y, penalty))
                ours = objective(x, y, fit.coefficients, penalty)
                self.assertLessEqual(abs(ours - brute_force_minimum(x, y, penalty)), 1e-4)

    def test_objective_does_not_exceed_warm_start(self):
        x, y = random_problem(SeededRng(5), 60, 10)
        warm = np.linspace(-1, 1, 10)
        penalty = 0.05
        fit = solve(LassoProblem(x, y, penalty), warm=warm)
        self.assertLessEqual(objective(x, y, fit.coefficients, penalty), objective(x, y, warm, penalty))

    def test_column_permutation_permutes_coefficients(self):
        rng = SeededRng(6)
        x, y = random_problem(rng, 80, 8, signal=4)
        order = rng.permutation(8)
        penalty = 0.05
        base = solve(LassoProblem(x, y, penalty)).coefficients
        permuted = solve(LassoProblem(x[:, order], y, penalty)).coefficients
        np.testing.assert_allclose(permuted, base[order], atol=1e-6)

    def test_uncentered_design_is_rejected(self):
        with self.assertRaises(InvalidProblem):
            LassoProblem(np.array([[1.0], [2.0], [3.0]]), np.array([-1.0, 0.0, 1.0]), 0.1)

    def test_sweep_budget_reports_best_iterate(self):
        x, y = random_problem(SeededRng(7), 40, 10, signal=5)
        system = GramSystem.from_data(x, y)
        with self.assertRaises(MaxIterations) as ctx:
            solve_system(system, 1e-4, max_sweeps=1, strict=True)
        best = ctx.exception.fit
        self.assertFalse(best.converged)
        self.assertLessEqual(best.objective, 0.5 * float(y @ y) / 40)

    def test_standardize_matches_rescaled_problem(self):
        rng = SeededRng(8)
        x, y = random_problem(rng, 60, 4)
        scales = np.array([1.0, 10.0, 0.1, 3.0])
        xs = x * scales
        scaled_fit = solve(LassoProblem(xs, y, 0.05, standardize=True))
        sd = np.sqrt(np.mean(xs ** 2, axis=0))
        unit_fit = solve(LassoProblem(xs / sd, y, 0.05))
        np.testing.assert_allclose(scaled_fit.coefficients * sd, unit_fit.coefficients, atol=1e-6)


class PathTests(SimpleTestCase):
    def test_head_of_path_is_zero(self):
        x, y = random_problem(SeededRng(10), 50, 8)
        fits = path(x, y)
        self.assertEqual(len(fits), 100)
        np.testing.assert_array_equal(fits[0].coefficients, np.zeros(8))
        penalties = [fit.penalty for fit in fits]
        self.assertEqual(penalties, sorted(penalties, reverse=True))
        self.assertAlmostEqual(penalties[-1], 1e-3 * penalties[0])

    def test_path_matches_cold_solves(self):
        x, y = random_problem(SeededRng(11), 50, 12, signal=3)
        grid = penalty_grid(np.max(np.abs(x.T @ y / 50)), 20)
        for fit in path(x, y, grid):
            cold = solve(LassoProblem(x, y, fit.penalty))
            self.assertLessEqual(np.linalg.norm(fit.coefficients - cold.coefficients), 1e-6)

    def test_active_set_mostly_grows(self):
        rng = SeededRng(12)
        shrinks = steps = 0
        for _ in range(20):
            x, y = random_problem(rng, 40, 15, signal=3)
            sizes = [fit.df for fit in path(x, y, n_points=30)]
            steps += len(sizes) - 1
            shrinks += sum(1 for a, b in zip(sizes, sizes[1:]) if b < a)
        self.assertLessEqual(shrinks, 0.05 * steps)


class CrossValidationTests(SimpleTestCase):
    def test_fold_sizes_differ_by_at_most_one(self):
        parts = fold_partition(23, 10, SeededRng(1))
        sizes = sorted(part.size for part in parts)
        self.assertLessEqual(sizes[-1] - sizes[0], 1)
        self.assertEqual(sorted(np.concatenate(parts).tolist()), list(range(23)))

    def test_too_few_observations_for_folds(self):
        x, y = random_problem(SeededRng(2), 5, 2)
        with self.assertRaises(DegenerateFolds):
            tune_cv(x, y, folds=10, rng=SeededRng(0))

    def test_same_seed_same_report(self):
        x, y = random_problem(SeededRng(3), 60, 6)
        first = tune_cv(x, y, folds=5, repeats=2, rng=SeededRng(99))
        second = tune_cv(x, y, folds=5, repeats=2, rng=SeededRng(99))
        np.testing.assert_array_equal(first.criterion, second.criterion)
        self.assertEqual(first.chosen, second.chosen)
        self.assertIn(first.chosen, first.grid)

    def test_strong_single_signal_is_selected(self):
        rng = SeededRng(4)
        x = centered(rng.normal((200, 10)))
        y = centered(5.0 * x[:, 3] + 0.1 * rng.normal(200))
        report = tune_cv(x, y, rng=SeededRng(5))
        self.assertIn(3, report.fit.active)

    def test_pure_noise_prefers_strong_shrinkage(self):
        top_quartile = 0
        seeds = range(20)
        for seed in seeds:
            rng = SeededRng(100 + seed)
            x = centered(rng.normal((100, 10)))
            y = centered(rng.normal(100))
            report = tune_cv(x, y, rng=rng.child(1))
            if report.chosen_index < 25:
                top_quartile += 1
        self.assertGreaterEqual(top_quartile, 18)


class BicTests(SimpleTestCase):
    def test_perfect_fit_is_floored(self):
        rng = SeededRng(1)
        x = centered(rng.normal((30, 3)))
        y = x @ np.array([1.0, -2.0, 0.5])
        report = tune_bic(x, y)
        self.assertTrue(np.all(np.isfinite(report.criterion)))
        self.assertIn(report.chosen, report.grid)

    def test_null_signal_selects_empty_model(self):
        empty = 0
        for seed in range(20):
            rng = SeededRng(200 + seed)
            x = centered(rng.normal((500, 3)))
            y = centered(rng.normal(500))
            if tune_bic(x, y).fit.df == 0:
                empty += 1
        self.assertGreaterEqual(empty, 18)

    def test_single_strong_predictor(self):
        single = 0
        for seed in range(20):
            rng = SeededRng(300 + seed)
            x = centered(rng.normal((500, 3)))
            y = centered(3.0 * x[:, 0] + rng.normal(500))
            if tune_bic(x, y).fit.df == 1:
                single += 1
        self.assertGreaterEqual(single, 18)

    def test_ties_go_to_larger_penalty(self):
        x = centered(np.arange(10.0)[:, None])
        y = np.zeros(10)
        report = tune_bic(x, y, grid=[1.0, 0.5, 0.1])
        self.assertEqual(report.chosen, 1.0)

    def test_extended_bic_is_never_larger_model(self):
        x, y = random_problem(SeededRng(7), 80, 30, signal=2)
        plain = tune_bic(x, y)
        extended = tune_bic(x, y, ebic_gamma=0.5)
        self.assertLessEqual(extended.fit.df, plain.fit.df)


class SelectPenaltyTests(SimpleTestCase):
    def test_fixed_strategy(self):
        x, y = random_problem(SeededRng(1), 40, 4)
        report = select_penalty(x, y, TuningStrategy(kind="fixed", penalty=0.1))
        self.assertEqual(report.chosen, 0.1)
        self.assertEqual(report.fit.penalty, 0.1)

    def test_dispatches_bic(self):
        x, y = random_problem(SeededRng(2), 40, 4)
        self.assertEqual(select_penalty(x, y, TuningStrategy(kind="bic")).kind, "bic")
