"""Evaluation metrics: goodness of fit, curve errors and the two-sample t-test."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats


class MetricError(ValueError):
    pass


def r2_score(y_true: Sequence[float], y_pred: Sequence[float]) -> float:
    """1 - SS_res / SS_tot; NaN when the target has zero variance."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise MetricError(f"shape mismatch or empty input: {y_true.shape} vs {y_pred.shape}")
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        return float("nan")
    ss_res = float(np.sum((y_true - y_pred) ** 2))
    return 1.0 - ss_res / ss_tot


def cumulative_abs_error(sim_curve: Sequence[float], truth_curve: Sequence[float]) -> np.ndarray:
    """Running sum of |sim - truth|, the accumulated gap between two curves."""
    sim = np.asarray(sim_curve, dtype=float)
    truth = np.asarray(truth_curve, dtype=float)
    if sim.shape != truth.shape:
        raise MetricError(f"curve lengths differ: {sim.shape} vs {truth.shape}")
    return np.cumsum(np.abs(sim - truth))


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: float
    p: float
    significant: bool  # p < alpha (0.01 by default)


def welch_t_test(a: Sequence[float], b: Sequence[float], equal_var: bool = False, alpha: float = 0.01) -> TTestResult:
    """Independent two-sample t-test, Welch by default, pooled with ``equal_var``.

    Two constant samples with equal means give ``t = 0, p = 1``. Two constant
    samples with different means give ``t = +-inf, p = 0``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise MetricError("each sample needs at least 2 observations")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise MetricError("samples must be finite")
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if equal_var:
        df = na + nb - 2.0
        pooled = ((na - 1) * va + (nb - 1) * vb) / df
        se2 = pooled * (1.0 / na + 1.0 / nb)
    else:
        se2 = va / na + vb / nb
        df = se2**2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1)) if se2 > 0 else float(na + nb - 2)
    diff = ma - mb
    if se2 == 0.0:
        if diff == 0.0:
            return TTestResult(0.0, df, 1.0, False)
        return TTestResult(math.copysign(math.inf, diff), df, 0.0, True)
    t = diff / math.sqrt(se2)
    p = float(2.0 * stats.t.sf(abs(t), df))
    return TTestResult(float(t), float(df), min(1.0, p), p < alpha)


def relative_improvement(experimental: float, control: float) -> float:
    """(exp - ctrl) / ctrl. Undefined (NaN) when the control is zero."""
    if control == 0:
        return float("nan")
    return (experimental - control) / control
