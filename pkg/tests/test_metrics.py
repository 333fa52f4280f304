import math

import numpy as np
import pytest

from models import SparseTensor, TensorKind
from services.errors import InputError
from services.metrics import auc_score, batch_means_mcse, compute_metrics, rank_error


def _tensor(values, kind=TensorKind.CONTINUOUS):
    values = np.asarray(values, dtype=float)
    return SparseTensor((values.shape[0],), np.arange(values.shape[0]).reshape(-1, 1), values, kind)


def test_continuous_metrics():
    test = _tensor([0.0, 1.0, 2.0, 3.0])
    report = compute_metrics([0.5, 1.0, 2.0, 2.5], test)
    assert report.rmse == pytest.approx(math.sqrt(0.125))
    assert report.mae == pytest.approx(0.25)
    assert report.psnr == pytest.approx(20 * math.log10(3.0) - 10 * math.log10(0.125))
    assert report.auc is None


def test_exact_predictions_have_infinite_psnr():
    test = _tensor([1.0, 2.0])
    assert compute_metrics([1.0, 2.0], test).psnr == math.inf


def test_binary_metrics_from_probabilities_and_logits():
    test = _tensor([0, 0, 1, 1], TensorKind.BINARY)
    probs = compute_metrics([0.1, 0.6, 0.4, 0.9], test)
    assert probs.auc == pytest.approx(0.75)
    assert probs.acc == pytest.approx(0.5)
    logits = compute_metrics([-2.0, -1.0, 1.0, 2.0], test, logits=True)
    assert logits.auc == 1.0
    assert logits.acc == 1.0


def test_auc_extremes_and_ties():
    labels = [0, 0, 1, 1]
    assert auc_score([1, 2, 3, 4], labels) == 1.0
    assert auc_score([4, 3, 2, 1], labels) == 0.0
    assert auc_score([1, 1, 1, 1], labels) == 0.5
    assert math.isnan(auc_score([1, 2], [1, 1]))


def test_auc_is_invariant_to_monotone_transforms(rng):
    scores = rng.normal(size=200)
    labels = (scores + rng.normal(size=200) > 0).astype(float)
    base = auc_score(scores, labels)
    assert auc_score(np.exp(3.0 * scores), labels) == pytest.approx(base, abs=1e-12)
    assert auc_score(1.0 / (1.0 + np.exp(-scores)), labels) == pytest.approx(base, abs=1e-12)
    assert auc_score(-scores, labels) == pytest.approx(1.0 - base, abs=1e-12)


def test_errors_ignore_entry_order(rng):
    values, pred = rng.normal(size=50), rng.normal(size=50)
    perm = rng.permutation(50)
    report = compute_metrics(pred, _tensor(values))
    shuffled = compute_metrics(pred[perm], _tensor(values[perm]))
    assert shuffled.rmse == pytest.approx(report.rmse, rel=1e-12)
    assert shuffled.mae == pytest.approx(report.mae, rel=1e-12)


def test_rank_error():
    assert rank_error((5, 5, 4, 6), (5, 5, 5, 5)) == pytest.approx(0.1)
    assert rank_error((3, 3), (3, 3)) == 0.0
    with pytest.raises(InputError):
        rank_error((1, 2), (1, 2, 3))


def test_rank_error_in_report():
    report = compute_metrics([1.0], _tensor([1.0]), estimated_ranks=(2, 2), true_ranks=(2, 4))
    assert report.rank_err == pytest.approx(1 / 3)
    assert 'rank_err=0.333333' in report.format()


def test_mismatched_lengths():
    with pytest.raises(InputError):
        compute_metrics([1.0, 2.0], _tensor([1.0]))
    with pytest.raises(InputError):
        compute_metrics([], _tensor([]))


def test_batch_means_mcse_of_ar1_chain():
    rng = np.random.default_rng(57)
    n = 100000
    samples = np.zeros(n)
    noise = rng.standard_normal(n)
    for i in range(1, n):
        samples[i] = 0.4 * samples[i - 1] + noise[i]
    # sd of the mean of an AR(1) chain: sqrt(1 / (1 - 0.4)^2 / n)
    assert batch_means_mcse(samples) == pytest.approx(0.00527, abs=1e-3)
