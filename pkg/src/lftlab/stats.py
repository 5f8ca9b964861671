"""Pooled-variance one-tailed t-test and improvement arithmetic.

The Student-t upper tail is evaluated through the regularized incomplete
beta function (continued fraction, Lentz's method) so the package needs
no statistics dependency at runtime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ContractError, DataError

_MAX_ITER = 300
_FPMIN = 1e-300
_EPS = 3e-14


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ContractError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ContractError("incomplete beta requires positive a and b")
    if not 0.0 <= x <= 1.0:
        raise ContractError(f"incomplete beta requires x in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_upper_tail(t: float, df: int) -> float:
    """P(T_df > t)."""
    if df < 1:
        raise ContractError(f"degrees of freedom must be >= 1, got {df}")
    x = df / (df + t * t)
    half = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x)
    return half if t >= 0 else 1.0 - half


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: int


def t_test_one_tailed(a, b) -> TTestResult:
    """Two-sample pooled-variance t-test of H1: mean(a) > mean(b).

    Zero pooled variance degenerates by convention: p = 0.5 for equal
    means, else 0 or 1 by the sign of the difference.
    """
    a = [float(x) for x in a]
    b = [float(x) for x in b]
    if len(a) < 2 or len(b) < 2:
        raise DataError("both samples need at least two observations")
    na, nb = len(a), len(b)
    mean_a = sum(a) / na
    mean_b = sum(b) / nb
    df = na + nb - 2
    var_a = sum((x - mean_a) ** 2 for x in a) / (na - 1)
    var_b = sum((x - mean_b) ** 2 for x in b) / (nb - 1)
    pooled = ((na - 1) * var_a + (nb - 1) * var_b) / df
    if pooled <= 0.0:
        if mean_a == mean_b:
            return TTestResult(t=0.0, p=0.5, df=df)
        return TTestResult(t=math.inf if mean_a > mean_b else -math.inf,
                           p=0.0 if mean_a > mean_b else 1.0, df=df)
    t = (mean_a - mean_b) / math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    return TTestResult(t=t, p=student_t_upper_tail(t, df), df=df)


def improvement_pct(lft_scores, fullft_scores) -> float:
    """100 * (best lightweight score / full fine-tuning score - 1)."""
    best = max(_as_scores(lft_scores))
    base = max(_as_scores(fullft_scores))
    if base <= 0:
        raise DataError("improvement undefined for a non-positive baseline")
    return 100.0 * (best / base - 1.0)


def _as_scores(value) -> list[float]:
    if isinstance(value, (int, float)):
        return [float(value)]
    scores = [float(v) for v in value]
    if not scores:
        raise DataError("empty score list")
    return scores
