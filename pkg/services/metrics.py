"""Completion metrics, rank-estimation error and Monte Carlo error estimates."""

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from models import SparseTensor
from services.errors import InputError


@dataclass
class MetricReport:
    n: int
    rmse: Optional[float] = None
    mae: Optional[float] = None
    psnr: Optional[float] = None
    auc: Optional[float] = None
    acc: Optional[float] = None
    rank_err: Optional[float] = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    def format(self) -> str:
        """key=value lines, one metric per line."""
        return '\n'.join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                         for k, v in self.to_dict().items())


def rank_error(estimated: Sequence[int], truth: Sequence[int]) -> float:
    """Σ|R̂_d - R_d| / Σ R_d."""
    estimated, truth = list(estimated), list(truth)
    if len(estimated) != len(truth):
        raise InputError(f"{len(estimated)} estimated ranks for {len(truth)} modes")
    total = sum(truth)
    if total <= 0:
        raise InputError("true ranks must sum to a positive number")
    return sum(abs(a - b) for a, b in zip(estimated, truth)) / total


def auc_score(scores, labels) -> float:
    """Area under the ROC curve from the Mann-Whitney rank statistic."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels) > 0.5
    n_pos = int(labels.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        return float('nan')
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def compute_metrics(pred, test: SparseTensor, data_range: Optional[float] = None, logits: bool = False,
                    estimated_ranks=None, true_ranks=None) -> MetricReport:
    """Metrics for predictions aligned with `test` entries.

    Continuous data gets RMSE, MAE and PSNR (range defaults to the spread of the
    test values). Binary data gets AUC and accuracy at 0.5; `pred` holds
    probabilities unless `logits` is set.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    if test.nnz == 0:
        raise InputError("cannot evaluate on an empty test set")
    if pred.shape[0] != test.nnz:
        raise InputError(f"{pred.shape[0]} predictions for {test.nnz} test entries")
    report = MetricReport(n=test.nnz)
    if test.is_binary:
        scores = expit(pred) if logits else pred
        report.auc = auc_score(scores, test.values)
        report.acc = float(np.mean((scores > 0.5) == (test.values > 0.5)))
    else:
        error = pred - test.values
        mse = float(np.mean(error ** 2))
        report.rmse = math.sqrt(mse)
        report.mae = float(np.mean(np.abs(error)))
        if data_range is None:
            data_range = float(test.values.max() - test.values.min())
        if data_range > 0:
            report.psnr = math.inf if mse == 0 else 20.0 * math.log10(data_range) - 10.0 * math.log10(mse)
    if estimated_ranks is not None and true_ranks is not None:
        report.rank_err = rank_error(estimated_ranks, true_ranks)
    return report


def batch_means_mcse(samples, n_batches: Optional[int] = None) -> float:
    """Monte Carlo standard error of the mean of a correlated chain."""
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    n = samples.shape[0]
    if n < 4:
        raise InputError("need at least 4 samples for a batch-means estimate")
    size = int(math.floor(math.sqrt(n))) if n_batches is None else n // n_batches
    count = n // size
    means = samples[:count * size].reshape(count, size).mean(axis=1)
    return float(math.sqrt(size * np.var(means, ddof=1) / n))
