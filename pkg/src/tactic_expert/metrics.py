import numpy as np
from scipy.stats import rankdata
from sklearn.metrics import f1_score

from .errors import ValidationError


def macro_f1(y_true, y_pred) -> float:
    """Unweighted mean F1 over the classes present in either array."""
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if len(y_true) == 0:
        raise ValidationError("macro F1 of an empty split")
    return float(f1_score(y_true, y_pred, average="macro", zero_division=0))


def auc(scores, labels) -> float:
    """ROC AUC via the rank-sum identity; tied scores count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC needs both positive and negative examples")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))
