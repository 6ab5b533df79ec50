"""Seeded streams, batch-means errors and log-log regressions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as _st


def stream(seed: int, *ids: int) -> np.random.Generator:
    """Independent generator for replica ``ids`` of master ``seed``.

    Streams depend only on ``(seed, ids)``, never on scheduling order.
    """
    return np.random.default_rng([int(seed), *(int(i) for i in ids)])


def batch_means(x, n_batches: int = 50):
    """Mean of the rows of ``x`` and batch-means standard error.

    ``x`` may have shape ``(n,)`` or ``(n, k)``; trailing samples that do
    not fill a batch are dropped from the error estimate only.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    size = n // n_batches
    if size < 1:
        raise ValueError(f"need at least {n_batches} samples, got {n}")
    means = x[: size * n_batches].reshape((n_batches, size) + x.shape[1:]).mean(axis=1)
    se = means.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return x.mean(axis=0), se


def batch_matrix(x, n_batches: int = 50) -> np.ndarray:
    """Per-batch means ``(n_batches, k)`` of the columns of ``x``."""
    x = np.asarray(x, dtype=float)
    size = x.shape[0] // n_batches
    if size < 1:
        raise ValueError(f"need at least {n_batches} samples, got {x.shape[0]}")
    return x[: size * n_batches].reshape((n_batches, size) + x.shape[1:]).mean(axis=1)


def delta_se(grad, batch_cov, n_batches: int) -> float:
    """Delta-method standard error of a smooth function of batch means."""
    g = np.asarray(grad, dtype=float)
    var = float(g @ batch_cov @ g) / n_batches
    return float(np.sqrt(max(var, 0.0)))


def effective_sample_size(x, n_batches: int = 50) -> float:
    """``n * var(x) / (batch size * var(batch means))``, capped at ``n``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    size = n // n_batches
    means = batch_matrix(x, n_batches)
    vb = means.var(ddof=1)
    v = x.var(ddof=1)
    if vb <= 0:
        return float(n) if v <= 0 else 0.0
    return float(min(n, n * v / (size * vb)))


def weighted_ess(w, n_batches: int = 50) -> float:
    """Kish count ``(sum w)^2 / sum w^2`` reduced by the autocorrelation of ``w``."""
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    kish = w.sum() ** 2 / np.sum(w * w)
    return float(kish * effective_sample_size(w, n_batches) / n)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    ci_low: float
    ci_high: float
    residuals: np.ndarray

    def within(self, lo: float, hi: float) -> bool:
        return lo <= self.slope <= hi


def loglog_slope(x, y, confidence: float = 0.95) -> SlopeFit:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    if lx.shape[0] < 3:
        raise ValueError("need at least 3 points for a slope with an error")
    res = _st.linregress(lx, ly)
    q = _st.t.ppf(0.5 + confidence / 2, lx.shape[0] - 2)
    resid = ly - (res.intercept + res.slope * lx)
    return SlopeFit(float(res.slope), float(res.intercept), float(res.stderr),
                    float(res.slope - q * res.stderr), float(res.slope + q * res.stderr), resid)
