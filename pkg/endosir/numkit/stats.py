import logging

import numpy as np
from sklearn.metrics import roc_auc_score

from endosir.exceptions import DegenerateLabels, DimensionMismatch, NonFinite

logger = logging.getLogger(__name__)


def mann_whitney_auc(scores, labels) -> float:
    """
    Area under the ROC curve of ``scores`` against binary ``labels``.

    Equals the Mann-Whitney U statistic divided by n₁·n₀, with tied
    scores counted as one half.

    Raises:
        DegenerateLabels: If either class is empty.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DimensionMismatch("scores and labels must have the same length")
    if not np.all(np.isfinite(scores)):
        raise NonFinite("scores contain NaN or infinite entries")
    if not np.all(np.isin(labels, (0, 1))):
        raise DegenerateLabels("labels must be 0 or 1")
    positives = int(np.sum(labels == 1))
    if positives == 0 or positives == labels.size:
        raise DegenerateLabels("AUC needs at least one positive and one negative label")
    return float(roc_auc_score(labels.astype(int), scores))
