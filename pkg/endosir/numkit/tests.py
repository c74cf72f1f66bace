import itertools

import numpy as np
from django.test import SimpleTestCase

from endosir.exceptions import (
    DegenerateLabels, DimensionMismatch, NonFinite, NonSymmetric, NotPositiveDefinite, RankDeficient,
)
from .linalg import cholesky, gram_schmidt, projection_matrix, sym_eigen
from .rng import SeededRng, derive_seed, splitmix64
from .stats import mann_whitney_auc


def random_symmetric(rng, dim):
    m = rng.normal((dim, dim))
    return (m + m.T) / 2


class SymEigenTests(SimpleTestCase):
    def test_two_by_two_closed_form(self):
        eig = sym_eigen([[2.0, 1.0], [1.0, 2.0]], 2)
        np.testing.assert_allclose(eig.values, [3.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(eig.vectors[:, 0], np.array([1.0, 1.0]) / np.sqrt(2), atol=1e-12)
        # ties in magnitude resolve to the lowest index
        np.testing.assert_allclose(eig.vectors[:, 1], np.array([1.0, -1.0]) / np.sqrt(2), atol=1e-12)

    def test_identity_pairs_pass_residual_check(self):
        a = np.eye(4)
        eig = sym_eigen(a, 2)
        np.testing.assert_allclose(eig.values, [1.0, 1.0])
        np.testing.assert_allclose(eig.vectors.T @ eig.vectors, np.eye(2), atol=1e-10)

    def test_matches_characteristic_polynomial_roots(self):
        rng = SeededRng(11)
        a = random_symmetric(rng, 6)
        roots = np.sort(np.real(np.roots(np.poly(a))))[::-1]
        eig = sym_eigen(a, 6)
        np.testing.assert_allclose(eig.values, roots, atol=1e-8)

    def test_residual_and_orthogonality_up_to_fifty(self):
        rng = SeededRng(3)
        for dim in (1, 2, 7, 20, 50):
            a = random_symmetric(rng, dim)
            k = max(1, dim // 2)
            eig = sym_eigen(a, k)
            bound = 1e-10 * max(1.0, np.linalg.norm(a))
            for i in range(k):
                residual = np.linalg.norm(a @ eig.vectors[:, i] - eig.values[i] * eig.vectors[:, i])
                self.assertLessEqual(residual, bound)
                mags = np.abs(eig.vectors[:, i])
                lead = np.flatnonzero(mags >= mags.max() - 1e-12)[0]
                self.assertGreater(eig.vectors[lead, i], 0)
            np.testing.assert_allclose(eig.vectors.T @ eig.vectors, np.eye(k), atol=1e-10)
            self.assertTrue(np.all(np.diff(eig.values) <= 0))

    def test_rejects_asymmetric_and_non_finite(self):
        with self.assertRaises(NonSymmetric):
            sym_eigen([[1.0, 2.0], [0.0, 1.0]], 1)
        with self.assertRaises(NonFinite):
            sym_eigen([[1.0, np.nan], [np.nan, 1.0]], 1)

    def test_k_out_of_range(self):
        with self.assertRaises(DimensionMismatch):
            sym_eigen(np.eye(3), 4)


class CholeskyTests(SimpleTestCase):
    def test_diagonal(self):
        np.testing.assert_allclose(cholesky([[4.0, 0.0], [0.0, 9.0]]), [[2.0, 0.0], [0.0, 3.0]])

    def test_hand_algebra(self):
        np.testing.assert_allclose(
            cholesky([[1.0, 0.2], [0.2, 1.0]]), [[1.0, 0.0], [0.2, np.sqrt(0.96)]], atol=1e-14)

    def test_indefinite_reports_pivot(self):
        with self.assertRaises(NotPositiveDefinite) as ctx:
            cholesky([[1.0, 2.0], [2.0, 1.0]])
        self.assertEqual(ctx.exception.pivot, 1)

    def test_round_trip_on_random_spd(self):
        rng = SeededRng(5)
        for dim in (1, 3, 10, 40):
            m = rng.normal((dim, dim))
            a = m.T @ m + np.eye(dim)
            lower = cholesky(a)
            self.assertTrue(np.allclose(lower, np.tril(lower)))
            self.assertLessEqual(np.linalg.norm(lower @ lower.T - a), 1e-10 * np.linalg.norm(a))


class GramSchmidtTests(SimpleTestCase):
    def test_simple_pair(self):
        q = gram_schmidt(np.array([[1.0, 1.0], [0.0, 1.0]]))
        np.testing.assert_allclose(q, np.eye(2), atol=1e-15)

    def test_orthonormal_input_is_fixed_point(self):
        rng = SeededRng(8)
        basis, _ = np.linalg.qr(rng.normal((6, 3)))
        np.testing.assert_allclose(gram_schmidt(basis), basis, atol=1e-12)

    def test_random_columns_keep_span(self):
        rng = SeededRng(9)
        cols = rng.normal((5, 2))
        q = gram_schmidt(cols)
        self.assertLessEqual(abs(q[:, 0] @ q[:, 1]), 1e-12)
        np.testing.assert_allclose(q.T @ q, np.eye(2), atol=1e-10)
        residual = cols - q @ (q.T @ cols)
        self.assertLessEqual(np.linalg.norm(residual), 1e-10)
        np.testing.assert_allclose(q[:, 0], cols[:, 0] / np.linalg.norm(cols[:, 0]), atol=1e-12)

    def test_dependent_columns(self):
        with self.assertRaises(RankDeficient) as ctx:
            gram_schmidt(np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]]))
        self.assertEqual(ctx.exception.column, 1)

    def test_projection_of_zero_basis(self):
        np.testing.assert_array_equal(projection_matrix(np.zeros((3, 1))), np.zeros((3, 3)))


def pairwise_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = 0.0
    for a, b in itertools.product(pos, neg):
        if a > b:
            wins += 1.0
        elif a == b:
            wins += 0.5
    return wins / (len(pos) * len(neg))


class MannWhitneyAucTests(SimpleTestCase):
    def test_examples(self):
        self.assertEqual(mann_whitney_auc([0.9, 0.8, 0.1], [1, 1, 0]), 1.0)
        self.assertEqual(mann_whitney_auc([0.1, 0.8, 0.9], [1, 0, 0]), 0.0)
        self.assertEqual(mann_whitney_auc([0.3, 0.3, 0.3, 0.3], [1, 0, 1, 0]), 0.5)

    def test_matches_pairwise_count(self):
        rng = SeededRng(21)
        for n in range(2, 13):
            for _ in range(20):
                scores = rng.integers(0, 4, n).astype(float)
                labels = rng.integers(0, 2, n)
                if labels.min() == labels.max():
                    labels[0] = 1 - labels[0]
                self.assertAlmostEqual(mann_whitney_auc(scores, labels), pairwise_auc(scores, labels), places=12)

    def test_single_class(self):
        with self.assertRaises(DegenerateLabels):
            mann_whitney_auc([0.1, 0.2], [1, 1])


class SeededRngTests(SimpleTestCase):
    def test_same_seed_same_bits(self):
        a, b = SeededRng(42), SeededRng(42)
        np.testing.assert_array_equal(a.normal(100), b.normal(100))
        np.testing.assert_array_equal(a.permutation(30), b.permutation(30))

    def test_children_are_distinct_and_reproducible(self):
        root = SeededRng(7)
        seeds = {root.child(i).seed for i in range(100)}
        self.assertEqual(len(seeds), 100)
        self.assertEqual(root.child(3).seed, derive_seed(7, 3))
        np.testing.assert_array_equal(root.child(3).normal(5), SeededRng(7).child(3).normal(5))

    def test_splitmix_reference_value(self):
        # first output of the reference splitmix64 generator seeded with 0
        self.assertEqual(splitmix64(0), 0xE220A8397B1DCDAF)

    def test_signed_uniform_support(self):
        draws = SeededRng(1).signed_uniform(0.75, 1.0, 1000)
        self.assertTrue(np.all((np.abs(draws) >= 0.75) & (np.abs(draws) <= 1.0)))
        self.assertTrue(np.any(draws < 0) and np.any(draws > 0))
