from dataclasses import dataclass
from typing import List

import numpy as np

from endosir.exceptions import NonFinite, TooFewObservations


@dataclass(frozen=True)
class SliceDesign:
    """
    Partition of the observations into H slices of consecutive y order statistics.

    ``assignment[i]`` is the zero-based slice of observation i and
    ``order`` the stable sort of y that produced it.
    """
    H: int
    assignment: np.ndarray
    sizes: np.ndarray
    order: np.ndarray

    @property
    def n(self) -> int:
        return int(self.assignment.shape[0])

    def members(self) -> List[np.ndarray]:
        """Observation indices of each slice, in y order."""
        bounds = np.concatenate([[0], np.cumsum(self.sizes)])
        return [self.order[bounds[h]:bounds[h + 1]] for h in range(self.H)]


def make_slices(y, H: int) -> SliceDesign:
    """
    Slice observations by the order statistics of ``y``.

    Ties keep the original index order. The first n mod H slices get
    ⌈n/H⌉ members and the rest ⌊n/H⌋.

    Raises:
        TooFewObservations: If H < 2 or n < 2H.
    """
    values = np.asarray(y, dtype=np.float64).ravel()
    if not np.all(np.isfinite(values)):
        raise NonFinite("response contains NaN or infinite entries")
    n = values.shape[0]
    if H < 2 or n < 2 * H:
        raise TooFewObservations(f"need H >= 2 and at least 2H observations, got n={n}, H={H}", n=n, H=H)
    order = np.argsort(values, kind="stable")
    base, extra = divmod(n, H)
    sizes = np.full(H, base, dtype=int)
    sizes[:extra] += 1
    assignment = np.empty(n, dtype=int)
    assignment[order] = np.repeat(np.arange(H), sizes)
    return SliceDesign(H=H, assignment=assignment, sizes=sizes, order=order)
