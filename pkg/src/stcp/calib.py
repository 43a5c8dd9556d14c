"""Marginal score-distribution estimators and quantile rules.

Conventions
-----------
* Quantiles are generalized inverses, ``Q(u; F) = inf{s : F(s) >= u}``.
* Rank computations of the form ``ceil(c)`` subtract a relative slack of
  ``1e-9`` first so that products such as ``0.9 * 10`` that land a few ulps
  above an integer are not rounded up.
* ``alpha_n <= 0`` maps to an infinite threshold for every model-based rule,
  mirroring the point mass at infinity of the split-conformal quantile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import isotonic_regression
from scipy.special import ndtr, ndtri

from .exceptions import BracketFailure, EmptyInput, InvalidAlpha, InvalidLevel
from .predictors import CondCdfParams, cond_cdf_grad

__all__ = [
    "StepwiseCdf",
    "AlphaLevels",
    "rank_ceil",
    "empirical_cdf",
    "empirical_quantile",
    "conformal_quantile",
    "mixture_cdf_eval",
    "mixture_cdf_pdf",
    "mixture_cdf_grad",
    "mixture_cdf_quantile",
    "dp_quantile",
    "debiased_grid",
    "debiased_cdf_raw",
    "debiased_cdf",
    "debiased_quantile",
    "oracle_quantile",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def rank_ceil(value: float) -> int:
    return int(math.ceil(value - 1e-9 * max(1.0, abs(value))))


@dataclass(frozen=True)
class StepwiseCdf:
    """Right-continuous step CDF with jumps at ``sorted_values``."""

    sorted_values: np.ndarray
    cumulative: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.sorted_values, dtype=float)
        c = np.asarray(self.cumulative, dtype=float)
        if v.shape != c.shape or v.size == 0:
            raise EmptyInput("a step CDF needs matching, nonempty arrays")
        object.__setattr__(self, "sorted_values", v)
        object.__setattr__(self, "cumulative", c)

    def __call__(self, s):
        idx = np.searchsorted(self.sorted_values, s, side="right") - 1
        out = np.where(idx >= 0, self.cumulative[np.clip(idx, 0, None)], 0.0)
        return float(out) if np.ndim(out) == 0 else out

    def quantile(self, u):
        """``inf{s : F(s) >= u}``; ``inf`` when ``u`` exceeds the top mass."""
        u = np.asarray(u, dtype=float)
        idx = np.searchsorted(self.cumulative, u - 1e-12, side="left")
        top = self.sorted_values.size
        out = np.where(idx < top, self.sorted_values[np.clip(idx, 0, top - 1)], np.inf)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class AlphaLevels:
    alpha: float
    n: int

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidAlpha(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def alpha_n(self) -> float:
        return 1.0 - (1.0 - self.alpha) * (self.n + 1) / self.n

    @property
    def target_level(self) -> float:
        """``1 - alpha_n``."""
        return (1.0 - self.alpha) * (self.n + 1) / self.n

    @property
    def infinite(self) -> bool:
        return self.alpha_n <= 0.0


def _scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=float).reshape(-1)
    if s.size == 0:
        raise EmptyInput("scores must be nonempty")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s


def empirical_cdf(scores) -> StepwiseCdf:
    s = np.sort(_scores(scores))
    return StepwiseCdf(s, np.arange(1, s.size + 1) / s.size)


def empirical_quantile(scores, u: float) -> float:
    """``Q(u; F_hat^0)`` as the ``ceil(u n)``-th order statistic.

    Levels at or below zero return the minimum; levels above one return
    ``inf``.
    """
    s = np.sort(_scores(scores))
    k = rank_ceil(u * s.size)
    if k > s.size:
        return math.inf
    return float(s[max(k, 1) - 1])


def conformal_quantile(scores, alpha: float) -> float:
    """The ``ceil((1 - alpha)(n + 1))``-th smallest score, or ``inf``."""
    if not 0.0 < alpha < 1.0:
        raise InvalidAlpha(f"alpha must lie in (0, 1), got {alpha}")
    s = _scores(scores)
    k = rank_ceil((1.0 - alpha) * (s.size + 1))
    if k > s.size:
        return math.inf
    return float(np.partition(s, k - 1)[k - 1])


# ---------------------------------------------------------------------------
# transductive mixture  F^1(s) = mean_j F(s | x_j)


def _components(theta: CondCdfParams, unlabeled):
    xu = np.asarray(unlabeled, dtype=float)
    if xu.ndim == 1:
        xu = xu[None, :]
    if xu.shape[0] == 0:
        raise EmptyInput("unlabeled covariates must be nonempty")
    return theta.loc(xu), theta.scale(xu)


def _gauss_mixture(v, mu, sigma):
    z = (np.asarray(v, dtype=float)[..., None] - mu) / sigma
    cdf = ndtr(z).mean(axis=-1)
    pdf = (_INV_SQRT_2PI * np.exp(-0.5 * z * z) / sigma).mean(axis=-1)
    return cdf, pdf


def mixture_cdf_eval(theta: CondCdfParams, s, unlabeled):
    mu, sigma = _components(theta, unlabeled)
    cdf, _ = _gauss_mixture(theta.warp(s), mu, sigma)
    return float(cdf) if np.ndim(cdf) == 0 else cdf


def mixture_cdf_pdf(theta: CondCdfParams, s, unlabeled):
    mu, sigma = _components(theta, unlabeled)
    _, pdf = _gauss_mixture(theta.warp(s), mu, sigma)
    pdf = pdf * theta.warp_slope(s)
    return float(pdf) if np.ndim(pdf) == 0 else pdf


def mixture_cdf_grad(theta: CondCdfParams, s: float, unlabeled) -> np.ndarray:
    """Gradient of the mixture CDF at ``s`` with respect to the flat
    parameters (length k0)."""
    xu = np.atleast_2d(np.asarray(unlabeled, dtype=float))
    return cond_cdf_grad(theta, s, xu).mean(axis=0)


def _gauss_mixture_quantile(u, mu, sigma, tol, max_iter=200):
    """Solve ``mean_j Phi((v - mu_j) / sigma_j) = u`` for each level in ``u``."""
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        raise BracketFailure("non-finite mixture parameters")
    u = np.asarray(u, dtype=float)
    lo = np.full(u.shape, float(np.min(mu - 8.0 * sigma)))
    hi = np.full(u.shape, float(np.max(mu + 8.0 * sigma)))
    width = max(float(np.max(hi - lo)), 1.0)
    for k in range(201):
        f_lo, _ = _gauss_mixture(lo, mu, sigma)
        f_hi, _ = _gauss_mixture(hi, mu, sigma)
        bad_lo, bad_hi = f_lo > u, f_hi < u
        if not (bad_lo.any() or bad_hi.any()):
            break
        if k == 200:
            raise BracketFailure("could not bracket the mixture quantile")
        step = width * 2.0 ** k
        lo = np.where(bad_lo, lo - step, lo)
        hi = np.where(bad_hi, hi + step, hi)
    v = np.clip(np.average(mu) + np.sqrt(np.mean(sigma ** 2)) * ndtri(u), lo, hi)
    for _ in range(max_iter):
        cdf, pdf = _gauss_mixture(v, mu, sigma)
        resid = cdf - u
        done = np.abs(resid) <= tol
        if np.all(done):
            break
        hi = np.where(resid > 0, v, hi)
        lo = np.where(resid < 0, v, lo)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = v - resid / pdf
        bisect = 0.5 * (lo + hi)
        ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
        nxt = np.where(ok, newton, bisect)
        stalled = (hi - lo) <= 4.0 * np.spacing(np.maximum(np.abs(lo), np.abs(hi)))
        v = np.where(done | stalled, v, nxt)
        if np.all(done | stalled):
            break
    return v


def mixture_cdf_quantile(theta: CondCdfParams, u, unlabeled, tol: float = 1e-12):
    """Invert the transductive mixture CDF at level(s) ``u``."""
    u_arr = np.asarray(u, dtype=float)
    if np.any((u_arr <= 0.0) | (u_arr >= 1.0)):
        raise InvalidLevel("mixture quantile level must lie strictly inside (0, 1)")
    mu, sigma = _components(theta, unlabeled)
    v = _gauss_mixture_quantile(u_arr, mu, sigma, tol)
    out = theta.warp_inverse(v)
    return float(out) if np.ndim(out) == 0 else out


def dp_quantile(theta: CondCdfParams, levels: AlphaLevels, unlabeled) -> float:
    """Direct plug-in threshold: the ``1 - alpha_n`` quantile of the
    source-model mixture over the unlabeled covariates."""
    if levels.infinite or levels.target_level >= 1.0:
        return math.inf
    return mixture_cdf_quantile(theta, levels.target_level, unlabeled)


# ---------------------------------------------------------------------------
# debiased (PPI-style) marginal CDF


def debiased_grid(scores, theta: CondCdfParams, unlabeled, n_points: int = 512) -> np.ndarray:
    """Sorted union of the observed scores and ``n_points`` equispaced points
    spanning the pooled range of the scores and the model mixture's
    ``[0.001, 0.999]`` quantile range."""
    s = _scores(scores)
    tails = mixture_cdf_quantile(theta, np.array([1e-3, 1.0 - 1e-3]), unlabeled)
    lo = min(float(s.min()), float(tails[0]))
    hi = max(float(s.max()), float(tails[1]))
    return np.unique(np.concatenate([s, np.linspace(lo, hi, n_points)]))


def debiased_cdf_raw(scores, theta: CondCdfParams, labeled_x, unlabeled, grid) -> np.ndarray:
    """``F0(s) + F1(s) - mean_i F(s | X_i)`` on ``grid`` (before any repair)."""
    grid = np.asarray(grid, dtype=float)
    f0 = empirical_cdf(scores)(grid)
    f1 = mixture_cdf_eval(theta, grid, unlabeled)
    f_lab = mixture_cdf_eval(theta, grid, labeled_x)
    return f0 + f1 - f_lab


def debiased_cdf(scores, theta: CondCdfParams, labeled_x, unlabeled, grid) -> StepwiseCdf:
    """Debiased estimator repaired into a valid CDF on ``grid``.

    The raw values are clipped to ``[0, 1]``, made nondecreasing by pool
    adjacent violators, and divided by their top value so the result
    reaches one.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise EmptyInput("grid must be nonempty")
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be ascending")
    raw = debiased_cdf_raw(scores, theta, labeled_x, unlabeled, grid)
    mono = isotonic_regression(np.clip(raw, 0.0, 1.0)).x
    top = mono[-1]
    mono = mono / top if top > 0 else np.where(np.arange(mono.size) == mono.size - 1, 1.0, 0.0)
    mono[-1] = 1.0
    return StepwiseCdf(grid, np.minimum(mono, 1.0))


def debiased_quantile(cdf: StepwiseCdf, levels: AlphaLevels) -> float:
    if levels.infinite:
        return math.inf
    return cdf.quantile(levels.target_level)


def oracle_quantile(target_scores, extra_scores, alpha: float) -> float:
    extra = np.asarray(extra_scores, dtype=float).reshape(-1)
    return conformal_quantile(np.concatenate([_scores(target_scores), extra]), alpha)
