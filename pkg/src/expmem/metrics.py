"""Evaluation arithmetic: accuracy, macro averages, smoothing, pass^k."""

from __future__ import annotations

from fractions import Fraction
from math import comb
from typing import Sequence


def accuracy(verdicts: Sequence[bool]) -> float:
    """Mean success indicator over one question set."""
    if not verdicts:
        raise ValueError("accuracy over an empty set is undefined")
    return sum(1 for v in verdicts if v) / len(verdicts)


def macro_accuracy(per_domain: Sequence[float]) -> float:
    """Unweighted mean of per-domain accuracies."""
    if not per_domain:
        raise ValueError("macro accuracy over zero domains is undefined")
    return sum(per_domain) / len(per_domain)


def moving_average_3(series: Sequence[float]) -> list[float | None]:
    """Centered 3-point moving average; endpoints are undefined (None)."""
    if not series:
        raise ValueError("series must be non-empty")
    out: list[float | None] = [None] * len(series)
    for j in range(1, len(series) - 1):
        out[j] = (series[j - 1] + series[j] + series[j + 1]) / 3
    return out


def pass_k_exact(trials: Sequence[tuple[int, int]], k: int) -> Fraction:
    """Exact pass^k over (n_trials, n_successes) pairs, one pair per task.

    Per task: C(c, k) / C(n, k), the probability that k trials sampled
    without replacement all succeeded (zero when c < k); averaged over
    tasks. ``k`` must not exceed any task's trial count.
    """
    if not trials:
        raise ValueError("pass^k over zero tasks is undefined")
    if k < 1:
        raise ValueError("k must be >= 1")
    total = Fraction(0)
    for n, c in trials:
        if n < 1:
            raise ValueError("each task needs at least one trial")
        if not 0 <= c <= n:
            raise ValueError(f"successes {c} outside [0, {n}]")
        if k > n:
            raise ValueError(f"k={k} exceeds the {n} trials recorded for a task")
        total += Fraction(comb(c, k), comb(n, k))
    return total / len(trials)


def pass_k(trials: Sequence[tuple[int, int]], k: int) -> float:
    """Float view of pass_k_exact; pass^1 equals the mean success rate c/n."""
    return float(pass_k_exact(trials, k))
