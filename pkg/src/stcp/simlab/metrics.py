"""Summary metrics for repeated conformal experiments."""

from __future__ import annotations

import math

import numpy as np

from ..exceptions import DegenerateReference, NonPositiveBase, TooFewValues

__all__ = [
    "metric_std",
    "metric_improvement_rel",
    "metric_improvement_oracle",
    "reference_std",
    "metric_miscoverage",
]


def metric_std(values) -> float:
    """Sample standard deviation with the ``R - 1`` divisor.

    Returns ``inf`` if any value is infinite.
    """
    a = np.asarray(values, dtype=float).reshape(-1)
    if a.size < 2:
        raise TooFewValues("need at least two values")
    if np.any(np.isinf(a)):
        return math.inf
    return float(np.std(a, ddof=1))


def metric_improvement_rel(a1: float, a_base: float) -> float:
    """Percent reduction of ``a1`` relative to ``a_base``."""
    if not a_base > 0:
        raise NonPositiveBase(f"a_base must be positive, got {a_base}")
    return (1.0 - a1 / a_base) * 100.0


def metric_improvement_oracle(a1: float, a0: float, a_ref: float) -> float:
    """Share of the gap between a reference and the oracle ``a0`` closed by
    ``a1``, in percent."""
    if a_ref == a0:
        raise DegenerateReference("a_ref equals the oracle value")
    return (1.0 - (a1 - a0) / (a_ref - a0)) * 100.0


def reference_std(stds: dict, marginals: dict, alpha: float, slack: float = 0.01,
                  candidates=("base", "sdcp", "ppi")):
    """Smallest Std among the candidate methods whose mean marginal coverage
    is at least ``1 - alpha - slack``; ``None`` when no candidate qualifies."""
    ok = [stds[c] for c in candidates
          if c in stds and c in marginals and marginals[c] >= 1.0 - alpha - slack]
    return min(ok) if ok else None


def metric_miscoverage(partition_ids, covered, alpha: float, n_partitions: int) -> float:
    """``sum_i w_i |p_i - (1 - alpha)|`` over partitions.

    ``w_i`` is the fraction of test points in partition ``i`` and ``p_i`` its
    empirical coverage; empty partitions have zero weight.
    """
    ids = np.asarray(partition_ids, dtype=int).reshape(-1)
    cov = np.asarray(covered, dtype=float).reshape(-1)
    if ids.shape != cov.shape:
        raise ValueError("partition_ids and covered differ in length")
    if ids.size == 0:
        return 0.0
    counts = np.bincount(ids, minlength=n_partitions).astype(float)
    hits = np.bincount(ids, weights=cov, minlength=n_partitions)
    nonempty = counts > 0
    p = hits[nonempty] / counts[nonempty]
    w = counts[nonempty] / ids.size
    return float(np.sum(w * np.abs(p - (1.0 - alpha))))
