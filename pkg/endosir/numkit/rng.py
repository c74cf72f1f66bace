"""
Seeded random generation.

``SeededRng`` wraps a numpy ``Generator`` on a PCG64 stream so that the
same 64-bit seed yields the same draws on every platform. Parallel tasks
never share a generator: each task gets ``rng.child(index)``, whose seed
is ``splitmix64(seed ^ index)``.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .linalg import cholesky

MASK64 = (1 << 64) - 1


def splitmix64(value: int) -> int:
    """One round of the splitmix64 finaliser on a 64-bit integer."""
    z = (value + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Seed for task ``index`` spawned from ``seed``."""
    return splitmix64((int(seed) ^ int(index)) & MASK64)


class SeededRng:
    """Single-owner random stream identified by a 64-bit seed."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & MASK64
        self._generator = np.random.Generator(np.random.PCG64(self.seed))

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed})"

    def child(self, index: int) -> "SeededRng":
        return SeededRng(derive_seed(self.seed, index))

    def normal(self, size: Union[int, Tuple[int, ...]]) -> np.ndarray:
        return self._generator.standard_normal(size)

    def uniform(self, low: float = 0.0, high: float = 1.0,
                size: Optional[Union[int, Tuple[int, ...]]] = None):
        return self._generator.uniform(low, high, size)

    def signed_uniform(self, low: float, high: float,
                       size: Union[int, Tuple[int, ...]]) -> np.ndarray:
        """Draws from U([-high, -low] ∪ [low, high])."""
        magnitude = self._generator.uniform(low, high, size)
        signs = np.where(self._generator.random(size) < 0.5, -1.0, 1.0)
        return magnitude * signs

    def bernoulli(self, prob: float, size: Union[int, Tuple[int, ...]]) -> np.ndarray:
        return (self._generator.random(size) < prob).astype(np.float64)

    def integers(self, low: int, high: int, size=None):
        return self._generator.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def choice(self, population: Union[int, Sequence], size: int, replace: bool = False) -> np.ndarray:
        return self._generator.choice(population, size=size, replace=replace)

    def multivariate_normal(self, cov: np.ndarray, size: int) -> np.ndarray:
        """Rows drawn from N(0, cov) as standard normals times the Cholesky factor."""
        lower = cholesky(cov)
        return self.normal((size, lower.shape[0])) @ lower.T
