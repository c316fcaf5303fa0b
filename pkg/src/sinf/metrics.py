"""Evaluation metrics for trained flows."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidDataError

__all__ = ["auroc", "OodReport", "ood_report"]


def _scores(x, name):
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise InvalidDataError(f"{name} is empty")
    if np.any(np.isnan(x)):
        raise InvalidDataError(f"{name} contains NaN scores")
    return x


def auroc(scores_in, scores_out):
    """P(in-score > out-score) with ties counted one half.

    Computed exactly from the Mann-Whitney rank sum of the pooled scores.
    """
    a = _scores(scores_in, "scores_in")
    b = _scores(scores_out, "scores_out")
    ranks = rankdata(np.concatenate([a, b]))  # average ranks resolve ties as 1/2
    n_in, n_out = a.size, b.size
    u = ranks[:n_in].sum() - n_in * (n_in + 1) / 2.0
    return float(min(1.0, max(0.0, u / (n_in * n_out))))


@dataclass
class OodReport:
    auroc: float
    n_in: int
    n_out: int
    score_kind: str = "log_density"

    def __post_init__(self):
        if not 0.0 <= self.auroc <= 1.0:
            raise InvalidDataError("auroc must lie in [0, 1]")

    def to_dict(self):
        return asdict(self)


def ood_report(flow, X_in, X_out):
    """Score both sets with the flow's log-density and summarise the separation."""
    s_in = flow.log_density(X_in).logp
    s_out = flow.log_density(X_out).logp
    return OodReport(auroc(s_in, s_out), int(s_in.size), int(s_out.size))
