import numpy as np
from django.test import SimpleTestCase

from endosir.exceptions import ConfigInvalid, EigenvalueTooSmall, SliceTooSmall, TooFewObservations
from lasso.tuning import TuningStrategy
from numkit.linalg import projection_matrix
from numkit.rng import SeededRng
from .estimators import lasso_sir, row_support
from .kernel import apply_d, kernel, pseudo_responses
from .slicing import SliceDesign, make_slices


def explicit_d(slices):
    """n×n D matrix built entry by entry."""
    n = slices.n
    d = np.eye(n)
    for members in slices.members():
        c = members.size
        centering = np.eye(c) - np.ones((c, c)) / c
        d[np.ix_(members, members)] -= c / (c - 1.0) * centering
    return d


def centered(a):
    a = np.asarray(a, dtype=float)
    return a - a.mean(axis=0)


class MakeSlicesTests(SimpleTestCase):
    def test_rank_split(self):
        slices = make_slices([3, 1, 2, 6, 5, 4], 2)
        members = slices.members()
        self.assertEqual(members[0].tolist(), [1, 2, 0])
        self.assertEqual(members[1].tolist(), [5, 4, 3])
        self.assertEqual(slices.assignment.tolist(), [0, 0, 0, 1, 1, 1])

    def test_remainder_rule(self):
        self.assertEqual(make_slices(np.arange(10.0), 3).sizes.tolist(), [4, 3, 3])

    def test_constant_response_keeps_index_order(self):
        slices = make_slices(np.zeros(10), 3)
        self.assertEqual(slices.assignment.tolist(), [0, 0, 0, 0, 1, 1, 1, 2, 2, 2])

    def test_too_few_observations(self):
        with self.assertRaises(TooFewObservations):
            make_slices(np.arange(5.0), 3)
        with self.assertRaises(TooFewObservations):
            make_slices(np.arange(5.0), 1)


class KernelTests(SimpleTestCase):
    def test_four_point_hand_oracle(self):
        x = centered([[1.0], [2.0], [3.0], [4.0]])
        slices = make_slices([1.0, 2.0, 3.0, 4.0], 2)
        sir_kernel = kernel(x, slices)
        self.assertAlmostEqual(sir_kernel.lambda_hat[0, 0], 0.75, places=14)
        self.assertAlmostEqual((x.T @ explicit_d(slices) @ x / 4)[0, 0], 0.75, places=14)

    def test_identical_rows_within_slices(self):
        x = centered([[-1.0, 2.0], [-1.0, 2.0], [0.0, 0.0], [0.0, 0.0], [1.0, -2.0], [1.0, -2.0]])
        slices = make_slices(np.arange(6.0), 3)
        np.testing.assert_allclose(kernel(x, slices).lambda_hat, x.T @ x / 6, atol=1e-14)

    def test_matches_explicit_d_on_random_instances(self):
        rng = SeededRng(17)
        for trial in range(100):
            n = int(rng.integers(8, 61)) if trial else 12
            H = int(rng.integers(2, n // 2 + 1)) if trial else 3
            p = int(rng.integers(1, 6)) if trial else 3
            x = centered(rng.normal((n, p)))
            slices = make_slices(rng.normal(n), H)
            oracle = x.T @ explicit_d(slices) @ x / n
            np.testing.assert_allclose(kernel(x, slices).lambda_hat, oracle, atol=1e-10)

    def test_invariant_to_permutation_within_slices(self):
        rng = SeededRng(2)
        x = centered(rng.normal((30, 4)))
        slices = make_slices(rng.normal(30), 5)
        shuffled = x.copy()
        for members in slices.members():
            shuffled[members] = x[members[rng.permutation(members.size)]]
        np.testing.assert_allclose(kernel(shuffled, slices).lambda_hat, kernel(x, slices).lambda_hat, atol=1e-12)

    def test_orthogonal_rotation(self):
        rng = SeededRng(3)
        x = centered(rng.normal((40, 4)))
        q, _ = np.linalg.qr(rng.normal((4, 4)))
        slices = make_slices(rng.normal(40), 4)
        base = kernel(x, slices)
        rotated = kernel(x @ q, slices)
        np.testing.assert_allclose(rotated.lambda_hat, q.T @ base.lambda_hat @ q, atol=1e-10)
        np.testing.assert_allclose(rotated.eigen.values, base.eigen.values, atol=1e-8)

    def test_slice_of_one_is_rejected(self):
        slices = SliceDesign(H=2, assignment=np.array([0, 1, 1, 1]), sizes=np.array([1, 3]),
                             order=np.arange(4))
        with self.assertRaises(SliceTooSmall):
            kernel(centered(np.arange(4.0)[:, None]), slices)


class PseudoResponseTests(SimpleTestCase):
    def test_too_many_directions(self):
        x = centered(SeededRng(5).normal((40, 3)))
        sir_kernel = kernel(x, make_slices(np.arange(40.0), 4))
        with self.assertRaises(ConfigInvalid) as caught:
            pseudo_responses(sir_kernel, 5)
        self.assertEqual(caught.exception.key, "directions")

    def test_four_point_explicit_d(self):
        x = centered([[1.0], [2.0], [3.0], [4.0]])
        slices = make_slices([1.0, 2.0, 3.0, 4.0], 2)
        sir_kernel = kernel(x, slices)
        (pseudo,) = pseudo_responses(sir_kernel, 1)
        eta = sir_kernel.eigen.vectors[:, 0]
        expected = explicit_d(slices) @ x @ eta / sir_kernel.eigen.values[0]
        np.testing.assert_allclose(pseudo.values, expected, atol=1e-14)

    def test_constant_within_slices(self):
        x = centered([[-1.0], [-1.0], [0.0], [0.0], [1.0], [1.0]])
        slices = make_slices(np.arange(6.0), 3)
        sir_kernel = kernel(x, slices)
        (pseudo,) = pseudo_responses(sir_kernel, 1)
        projected = x @ sir_kernel.eigen.vectors[:, 0]
        np.testing.assert_allclose(pseudo.values, projected / pseudo.eigenvalue, atol=1e-14)
        np.testing.assert_allclose(pseudo.values, explicit_d(slices) @ projected / pseudo.eigenvalue, atol=1e-14)

    def test_random_instances_match_explicit_d(self):
        rng = SeededRng(4)
        for _ in range(20):
            x = centered(rng.normal((23, 3)))
            slices = make_slices(rng.normal(23), 4)
            sir_kernel = kernel(x, slices)
            d_matrix = explicit_d(slices)
            for pseudo in pseudo_responses(sir_kernel, 2):
                eta = sir_kernel.eigen.vectors[:, pseudo.k - 1]
                np.testing.assert_allclose(pseudo.values, d_matrix @ x @ eta / pseudo.eigenvalue, atol=1e-10)
            np.testing.assert_allclose(apply_d(x, slices), d_matrix @ x, atol=1e-12)

    def test_homogeneity(self):
        rng = SeededRng(5)
        x = centered(rng.normal((30, 3)))
        slices = make_slices(rng.normal(30), 3)
        base, doubled = kernel(x, slices), kernel(2 * x, slices)
        np.testing.assert_allclose(doubled.lambda_hat, 4 * base.lambda_hat, atol=1e-12)
        np.testing.assert_allclose(doubled.eigen.values, 4 * base.eigen.values, atol=1e-12)
        np.testing.assert_allclose(doubled.eigen.vectors, base.eigen.vectors, atol=1e-10)
        np.testing.assert_allclose(pseudo_responses(doubled, 1)[0].values,
                                   0.5 * pseudo_responses(base, 1)[0].values, atol=1e-10)

    def test_vanishing_eigenvalue(self):
        rng = SeededRng(6)
        x = np.column_stack([centered(rng.normal(20)), np.zeros(20)])
        sir_kernel = kernel(x, make_slices(rng.normal(20), 4))
        with self.assertRaises(EigenvalueTooSmall) as ctx:
            pseudo_responses(sir_kernel, 2)
        self.assertEqual(ctx.exception.k, 2)


class LassoSirTests(SimpleTestCase):
    def test_unpenalised_fit_reproduces_classical_sir(self):
        rng = SeededRng(7)
        x = rng.normal((300, 5))
        y = x[:, 0] + np.exp(x[:, 1]) + 0.2 * rng.normal(300)
        estimate = lasso_sir(y, x, H=6, d=2, tuning=TuningStrategy(kind="fixed", penalty=0.0))
        xc = centered(x)
        sir_kernel = kernel(xc, make_slices(y, 6))
        classical = np.linalg.solve(xc.T @ xc / 300, sir_kernel.eigen.vectors[:, :2])
        np.testing.assert_allclose(projection_matrix(estimate.b_hat), projection_matrix(classical), atol=1e-6)
        np.testing.assert_allclose(estimate.adjusted_eigenvalues,
                                   estimate.eigenvalues * np.linalg.norm(estimate.b_hat, axis=0))

    def test_support_is_union_of_directions(self):
        rng = SeededRng(8)
        x = rng.normal((200, 8))
        y = x[:, 0] + x[:, 1] ** 3 + 0.1 * rng.normal(200)
        estimate = lasso_sir(y, x, d=2, tuning=TuningStrategy(kind="bic"))
        union = set()
        for k in range(estimate.d):
            union |= set(np.flatnonzero(estimate.b_hat[:, k]).tolist())
        self.assertEqual(set(estimate.support), union)
        self.assertEqual(estimate.support, row_support(estimate.b_hat))

    def test_recovers_support_without_endogeneity(self):
        hits = 0
        for seed in range(20):
            rng = SeededRng(500 + seed)
            x = rng.normal((500, 10))
            beta = np.zeros(10)
            beta[[2, 7]] = [1.0, -0.8]
            y = x @ beta + 0.1 * rng.normal(500)
            estimate = lasso_sir(y, x, tuning=TuningStrategy(kind="ebic", ebic_gamma=1.0), rng=rng.child(1))
            hits += estimate.support == (2, 7)
        self.assertGreaterEqual(hits, 19)

    def test_cross_validated_fit_is_deterministic(self):
        rng = SeededRng(9)
        x = rng.normal((100, 6))
        y = x[:, 0] - x[:, 1] + 0.3 * rng.normal(100)
        first = lasso_sir(y, x, rng=SeededRng(1))
        second = lasso_sir(y, x, rng=SeededRng(1))
        np.testing.assert_array_equal(first.b_hat, second.b_hat)
