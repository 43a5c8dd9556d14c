"""Non-conformity scores and the geometry of their sublevel sets.

Three score families are supported:

* ``ResidualScore``: ``|y - mu(x)|``.
* ``GlcpScore``: the residual passed through its estimated conditional CDF,
  ``F_V(|y - mu(x)| | x)``, which lives in ``[0, 1]``.
* ``CqrScore``: ``max(q_lo(x) - y, y - q_hi(x))``.

Prediction sets ``{y : score(x, y) <= q}`` are closed intervals for all three.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .predictors import (
    CondCdfParams,
    MeanPredictor,
    QuantilePredictor,
    cond_cdf_eval,
    cond_cdf_quantile,
)

__all__ = [
    "ResidualScore",
    "GlcpScore",
    "CqrScore",
    "score",
    "set_contains",
    "set_size",
    "set_bounds",
    "GLCP_EPS",
]

GLCP_EPS = 1e-9


@dataclass(frozen=True)
class ResidualScore:
    mean: MeanPredictor

    def __call__(self, x, y):
        return np.abs(np.asarray(y, dtype=float) - self.mean.predict(x))

    def bounds(self, q, x):
        mu = self.mean.predict(x)
        return mu - q, mu + q


@dataclass(frozen=True)
class GlcpScore:
    mean: MeanPredictor
    v_cdf: CondCdfParams

    def __call__(self, x, y):
        v = np.abs(np.asarray(y, dtype=float) - self.mean.predict(x))
        return cond_cdf_eval(self.v_cdf, v, x)

    def radius(self, q, x):
        """Half-width of the set: the ``q`` quantile of V given x, floored at 0."""
        x = np.asarray(x, dtype=float)
        rows = np.atleast_2d(x)
        q = np.broadcast_to(np.asarray(q, dtype=float), (rows.shape[0],))
        out = np.zeros(rows.shape[0])
        out[q >= 1.0] = np.inf
        mid = (q > 0.0) & (q < 1.0)
        if np.any(mid):
            u = np.clip(q[mid], GLCP_EPS, 1.0 - GLCP_EPS)
            out[mid] = np.maximum(cond_cdf_quantile(self.v_cdf, u, rows[mid]), 0.0)
        return out[0] if x.ndim == 1 else out

    def bounds(self, q, x):
        mu = self.mean.predict(x)
        r = self.radius(q, x)
        return mu - r, mu + r


@dataclass(frozen=True)
class CqrScore:
    lo: QuantilePredictor
    hi: QuantilePredictor

    def __post_init__(self):
        if not self.lo.level < self.hi.level:
            raise ValueError("CQR needs lo.level < hi.level")

    def __call__(self, x, y):
        y = np.asarray(y, dtype=float)
        return np.maximum(self.lo.predict(x) - y, y - self.hi.predict(x))

    def bounds(self, q, x):
        return self.lo.predict(x) - q, self.hi.predict(x) + q


def score(model, x, y):
    out = model(x, y)
    return float(out) if np.ndim(out) == 0 else out


def set_contains(model, q, x, y):
    """Whether ``y`` lies in the closed set ``{y : score(x, y) <= q}``."""
    if np.isscalar(q) and q == np.inf:
        return True if np.ndim(y) == 0 and np.asarray(x).ndim == 1 else np.ones(np.shape(y), dtype=bool)
    out = np.asarray(model(x, y)) <= q
    return bool(out) if out.ndim == 0 else out


def set_bounds(model, q, x):
    """Interval endpoints ``(lower, upper)``; empty when ``lower > upper``."""
    return model.bounds(q, x)


def set_size(model, q, x):
    """Lebesgue measure of ``{y : score(x, y) <= q}`` (``inf`` for ``q = inf``)."""
    x = np.asarray(x, dtype=float)
    n_rows = 1 if x.ndim == 1 else x.shape[0]
    if q == np.inf:
        out = np.full(n_rows, np.inf)
    else:
        lo, hi = model.bounds(q, x)
        out = np.maximum(np.asarray(hi - lo, dtype=float), 0.0).reshape(-1)
        if isinstance(model, GlcpScore) and q >= 1.0:
            out[:] = np.inf
    return float(out[0]) if x.ndim == 1 else out
