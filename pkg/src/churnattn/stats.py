"""Balanced two-factor ANOVA, one-tailed Welch tests, and the F/t tail
probabilities they need, built on a continued-fraction regularized
incomplete beta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateDataError


# -- regularized incomplete beta -----------------------------------------

def _betacf(x: float, a: float, b: float) -> float:
    """Continued fraction for the incomplete beta, modified Lentz evaluation."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for x={x}, a={a}, b={b}")


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """I_x(a, b), accurate to ~1e-12 over the parameter range used here."""
    if a <= 0 or b <= 0:
        raise ValueError(f"beta parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(x, a, b) / a
    return 1.0 - front * _betacf(1.0 - x, b, a) / b


# -- distribution tails ---------------------------------------------------

def f_upper_tail(x: float, df1: int, df2: int) -> float:
    """P(F(df1, df2) > x)."""
    if df1 < 1 or df2 < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got ({df1}, {df2})")
    if x < 0:
        raise ValueError(f"F statistic must be non-negative, got {x}")
    if x == 0.0:
        return 1.0
    return regularized_incomplete_beta(df2 / (df2 + df1 * x), df2 / 2.0, df1 / 2.0)


def t_upper_tail(t: float, df: float) -> float:
    """P(T(df) > t)."""
    if df <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if t == 0.0:
        return 0.5
    p_half = 0.5 * regularized_incomplete_beta(df / (df + t * t), df / 2.0, 0.5)
    return p_half if t > 0 else 1.0 - p_half


def f_critical(alpha: float, df1: int, df2: int, tol: float = 1e-8) -> float:
    """Inverse of f_upper_tail at tail probability alpha, by bisection."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    lo, hi = 0.0, 1.0
    while f_upper_tail(hi, df1, df2) > alpha:
        hi *= 2.0
        if hi > 1e12:
            raise ArithmeticError("f_critical bracket exceeded 1e12")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f_upper_tail(mid, df1, df2) > alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- hypothesis tests ------------------------------------------------------

def one_tailed_welch(sample_a, sample_b, direction: str = "greater") -> tuple[float, float]:
    """Welch's unequal-variance t-test with a one-sided p-value.

    direction='greater' tests whether sample_a's mean exceeds sample_b's.
    Returns (t statistic, one-tailed p).
    """
    if direction not in ("greater", "less"):
        raise ValueError(f"direction must be 'greater' or 'less', got {direction!r}")
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise ValueError(f"each sample needs >= 2 observations, got {na} and {nb}")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        raise DegenerateDataError("Welch test undefined: zero variance in both samples")
    se2 = va / na + vb / nb
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2**2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = t_upper_tail(t, df) if direction == "greater" else t_upper_tail(-t, df)
    return t, p


# -- balanced two-factor ANOVA --------------------------------------------

@dataclass
class AnovaRow:
    source: str
    ss: float
    df: int
    ms: float | None
    f: float | None
    p: float | None
    f_crit: float | None


@dataclass
class AnovaTable:
    """Rows for Factor A, Factor B, Interaction, Error and Total."""

    factor_a: AnovaRow
    factor_b: AnovaRow
    interaction: AnovaRow
    error: AnovaRow
    total: AnovaRow

    def rows(self) -> list[AnovaRow]:
        return [self.factor_a, self.factor_b, self.interaction, self.error, self.total]

    def to_csv(self) -> str:
        lines = ["Source,SS,df,MS,F,P-value,F crit"]
        for r in self.rows():
            cells = [
                r.source,
                repr(r.ss),
                str(r.df),
                "" if r.ms is None else repr(r.ms),
                "" if r.f is None else repr(r.f),
                "" if r.p is None else repr(r.p),
                "" if r.f_crit is None else repr(r.f_crit),
            ]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def two_way_anova(observations, alpha: float = 0.05) -> AnovaTable:
    """Balanced two-factor ANOVA with interaction.

    ``observations`` must have shape (levels_a, levels_b, replicates) with
    levels >= 2 and replicates >= 2 (a fully balanced design).
    """
    try:
        obs = np.asarray(observations, dtype=np.float64)
    except ValueError as e:
        raise ValueError(f"unbalanced design: {e}") from e
    if obs.ndim != 3:
        raise ValueError(f"expected (a, b, r) observations, got shape {obs.shape}")
    a, b, r = obs.shape
    if a < 2 or b < 2:
        raise ValueError(f"need >= 2 levels per factor, got a={a}, b={b}")
    if r < 2:
        raise ValueError(f"need >= 2 replicates per cell, got r={r}")

    grand = obs.mean()
    cell = obs.mean(axis=2)
    mean_a = obs.mean(axis=(1, 2))
    mean_b = obs.mean(axis=(0, 2))

    ss_a = b * r * ((mean_a - grand) ** 2).sum()
    ss_b = a * r * ((mean_b - grand) ** 2).sum()
    ss_ab = r * ((cell - mean_a[:, None] - mean_b[None, :] + grand) ** 2).sum()
    ss_e = ((obs - cell[:, :, None]) ** 2).sum()
    ss_t = ((obs - grand) ** 2).sum()

    df_a, df_b = a - 1, b - 1
    df_ab = df_a * df_b
    df_e = a * b * (r - 1)
    df_t = a * b * r - 1

    if ss_e <= 0.0 or ss_t <= 0.0:
        raise DegenerateDataError("ANOVA undefined: zero error variance")

    ms_e = ss_e / df_e

    def effect(source: str, ss: float, df: int) -> AnovaRow:
        ms = ss / df
        f = ms / ms_e
        return AnovaRow(source, ss, df, ms, f, f_upper_tail(f, df, df_e), f_critical(alpha, df, df_e))

    return AnovaTable(
        factor_a=effect("Factor A", ss_a, df_a),
        factor_b=effect("Factor B", ss_b, df_b),
        interaction=effect("Interaction", ss_ab, df_ab),
        error=AnovaRow("Error", ss_e, df_e, ms_e, None, None, None),
        total=AnovaRow("Total", ss_t, df_t, None, None, None, None),
    )
