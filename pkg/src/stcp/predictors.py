"""Source-trained models: point predictor, quantile predictors and the
parametric conditional score-CDF family.

The conditional family is a Gaussian location-scale model with linear
features,

    F(s | x; theta) = Phi((w(s) - mu(x)) / sigma(x)),
    mu(x) = loc_weights . x + loc_intercept,
    sigma(x) = max(softplus(scale_weights . x + scale_intercept), 1e-6),

where ``w`` is an optional monotone warp of the score axis. Its inverse
``h = w^{-1}`` maps the latent Gaussian scale to the score scale and is
piecewise linear, ``h(v) = v + interp(v, knots, shifts)``, with knots fixed on
the latent scale. ``w`` is the identity unless knots are attached (see
:func:`with_warp`); the warp shifts are what the alignment step fine-tunes by
default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.special import expit, ndtr, ndtri

from .exceptions import DegenerateDesign, InvalidLevel, NonFinite

__all__ = [
    "MeanPredictor",
    "QuantilePredictor",
    "CondCdfParams",
    "fit_linear_mean",
    "fit_linear_quantile",
    "fit_cond_cdf",
    "cond_cdf_eval",
    "cond_cdf_pdf",
    "cond_cdf_quantile",
    "cond_cdf_grad",
    "with_warp",
    "model_to_json",
    "model_from_json",
    "softplus",
    "softplus_inv",
]

SCALE_FLOOR = 1e-6
RIDGE_PENALTY = 1e-8
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def softplus(a):
    return np.logaddexp(0.0, a)


def softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def _rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


@dataclass(frozen=True)
class MeanPredictor:
    weights: np.ndarray
    intercept: float

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x @ self.weights + self.intercept

    @property
    def dim(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class QuantilePredictor:
    level: float
    weights: np.ndarray
    intercept: float

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise InvalidLevel(f"quantile level must lie in (0, 1), got {self.level}")

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x @ self.weights + self.intercept

    @property
    def dim(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class CondCdfParams:
    """Parameters of the conditional score-CDF family.

    ``warp_knots`` are fixed latent-scale hyperparameters (not tuned);
    ``warp_shifts`` are the displacements ``h(t_b) - t_b`` at each knot and
    count towards :attr:`k0`. With no knots the family is the plain Gaussian
    location-scale model with ``k0 = 2 d + 2``.
    """

    loc_weights: np.ndarray
    loc_intercept: float
    scale_weights: np.ndarray
    scale_intercept: float
    warp_knots: np.ndarray = field(default_factory=lambda: np.empty(0))
    warp_shifts: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        for name in ("loc_weights", "scale_weights", "warp_knots", "warp_shifts"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        object.__setattr__(self, "loc_intercept", float(self.loc_intercept))
        object.__setattr__(self, "scale_intercept", float(self.scale_intercept))
        if self.loc_weights.size != self.scale_weights.size:
            raise ValueError("location and scale weights must share a dimension")
        if self.warp_knots.size != self.warp_shifts.size:
            raise ValueError("one warp shift per knot is required")
        if self.warp_knots.size > 1 and np.any(np.diff(self.warp_knots) <= 0):
            raise ValueError("warp knots must be strictly increasing")

    @property
    def dim(self) -> int:
        return self.loc_weights.size

    @property
    def n_gaussian(self) -> int:
        return 2 * self.dim + 2

    @property
    def k0(self) -> int:
        return self.n_gaussian + self.warp_shifts.size

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            self.loc_weights, [self.loc_intercept],
            self.scale_weights, [self.scale_intercept],
            self.warp_shifts,
        ])

    def from_vector(self, vec) -> "CondCdfParams":
        """Return a copy with parameters read from a flat vector of length k0."""
        vec = np.asarray(vec, dtype=float)
        if vec.size != self.k0:
            raise ValueError(f"expected {self.k0} parameters, got {vec.size}")
        d = self.dim
        return replace(
            self,
            loc_weights=vec[:d],
            loc_intercept=vec[d],
            scale_weights=vec[d + 1:2 * d + 1],
            scale_intercept=vec[2 * d + 1],
            warp_shifts=vec[2 * d + 2:],
        )

    def shifted(self, delta: float) -> "CondCdfParams":
        """Location-shifted copy (adds ``delta`` to the location intercept)."""
        return replace(self, loc_intercept=self.loc_intercept + delta)

    # pieces of the model -------------------------------------------------

    def loc(self, x) -> np.ndarray:
        return _rows(x) @ self.loc_weights + self.loc_intercept

    def _scale_arg(self, x) -> np.ndarray:
        return _rows(x) @ self.scale_weights + self.scale_intercept

    def scale(self, x) -> np.ndarray:
        return np.maximum(softplus(self._scale_arg(x)), SCALE_FLOOR)

    def warp_values(self) -> np.ndarray:
        """Score-scale images of the latent knots, ``h(knot_b)``."""
        return self.warp_knots + self.warp_shifts

    def warp_is_monotone(self) -> bool:
        return self.warp_knots.size < 2 or bool(np.all(np.diff(self.warp_values()) > 0))

    def latent_basis(self, v) -> np.ndarray:
        """Interpolation weights of ``v`` on the knots, shape ``v.shape + (n_knots,)``.

        Flat extension outside the knot range.
        """
        v = np.asarray(v, dtype=float)
        t = self.warp_knots
        flat = v.reshape(-1)
        basis = np.zeros((flat.size, t.size))
        if t.size == 1:
            basis[:, 0] = 1.0
        elif t.size > 1:
            idx = np.clip(np.searchsorted(t, flat, side="right") - 1, 0, t.size - 2)
            frac = np.clip((flat - t[idx]) / (t[idx + 1] - t[idx]), 0.0, 1.0)
            rows = np.arange(flat.size)
            basis[rows, idx] = 1.0 - frac
            basis[rows, idx + 1] += frac
        return basis.reshape(v.shape + (t.size,))

    def warp_inverse(self, v) -> np.ndarray:
        """Latent scale to score scale: ``h(v) = v + interp(v, knots, shifts)``."""
        v = np.asarray(v, dtype=float)
        if self.warp_knots.size == 0:
            return v
        return v + np.interp(v, self.warp_knots, self.warp_shifts)

    def _latent_slope(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        t = self.warp_knots
        if t.size < 2:
            return np.ones_like(v)
        slopes = np.diff(self.warp_values()) / np.diff(t)
        idx = np.searchsorted(t, v, side="right") - 1
        inside = (idx >= 0) & (idx < t.size - 1)
        return np.where(inside, slopes[np.clip(idx, 0, t.size - 2)], 1.0)

    def warp(self, s) -> np.ndarray:
        """Score scale to latent scale, ``w = h^{-1}`` (requires a monotone warp)."""
        s = np.asarray(s, dtype=float)
        t, sh = self.warp_knots, self.warp_shifts
        if t.size == 0:
            return s
        img = t + sh
        out = np.interp(s, img, t)
        out = np.where(s < img[0], s - sh[0], out)
        return np.where(s > img[-1], s - sh[-1], out)

    def warp_slope(self, s) -> np.ndarray:
        """``w'(s)``."""
        s = np.asarray(s, dtype=float)
        if self.warp_knots.size < 2:
            return np.ones_like(s)
        return 1.0 / self._latent_slope(self.warp(s))

    def warp_grad(self, s) -> np.ndarray:
        """``d w(s) / d warp_shifts``, shape ``s.shape + (n_knots,)``."""
        v = self.warp(s)
        return -self.latent_basis(v) / self._latent_slope(v)[..., None]


def with_warp(theta: CondCdfParams, knots) -> CondCdfParams:
    """Attach an identity warp with the given latent knots (duplicates
    dropped), replacing any existing warp."""
    knots = np.unique(np.asarray(knots, dtype=float))
    return replace(theta, warp_knots=knots, warp_shifts=np.zeros(knots.size))


# ---------------------------------------------------------------------------
# fitting


def _design(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def fit_linear_mean(x, y) -> MeanPredictor:
    """Ordinary least squares with an intercept.

    Falls back to ridge (penalty 1e-8, intercept unpenalized) when the
    design is rank deficient.
    """
    x = _design(x)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape[0] < 2:
        raise DegenerateDesign("at least two samples are needed for a linear fit")
    a = np.column_stack([x, np.ones(x.shape[0])])
    if np.linalg.matrix_rank(a) < a.shape[1]:
        pen = np.full(a.shape[1], RIDGE_PENALTY)
        pen[-1] = 0.0
        coef = np.linalg.solve(a.T @ a + np.diag(pen), a.T @ y)
    else:
        coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    return MeanPredictor(weights=coef[:-1], intercept=float(coef[-1]))


def pinball_loss(residual, level: float) -> float:
    r = np.asarray(residual, dtype=float)
    return float(np.mean(np.maximum(level * r, (level - 1.0) * r)))


def fit_linear_quantile(x, y, level: float) -> QuantilePredictor:
    """Linear quantile regression at ``level`` (exact pinball minimizer).

    Solved as the standard linear program
    ``min sum(level * u + (1 - level) * v)`` s.t. ``A b + u - v = y``.
    """
    if not 0.0 < level < 1.0:
        raise InvalidLevel(f"quantile level must lie in (0, 1), got {level}")
    x = _design(x)
    y = np.asarray(y, dtype=float).reshape(-1)
    n, d = x.shape
    if n < 2:
        raise DegenerateDesign("at least two samples are needed for a linear fit")
    a = np.column_stack([x, np.ones(n)])
    p = d + 1
    c = np.concatenate([np.zeros(p), np.full(n, level), np.full(n, 1.0 - level)]) / n
    eye = np.eye(n)
    a_eq = np.hstack([a, eye, -eye])
    bounds = [(None, None)] * p + [(0, None)] * (2 * n)
    res = linprog(c, A_eq=a_eq, b_eq=y, bounds=bounds, method="highs")
    if not res.success:
        raise DegenerateDesign(f"quantile regression failed: {res.message}")
    coef = res.x[:p]
    return QuantilePredictor(level=float(level), weights=coef[:-1], intercept=float(coef[-1]))


def _nll_and_grad(vec, x, s):
    d = x.shape[1]
    lw, lb, sw, sb = vec[:d], vec[d], vec[d + 1:2 * d + 1], vec[2 * d + 1]
    mu = x @ lw + lb
    arg = x @ sw + sb
    raw = softplus(arg)
    sigma = np.maximum(raw, SCALE_FLOOR)
    z = (s - mu) / sigma
    nll = np.mean(0.5 * z * z + np.log(sigma))
    g_mu = -z / sigma
    g_sigma = (1.0 - z * z) / sigma
    g_arg = np.where(raw > SCALE_FLOOR, g_sigma * expit(arg), 0.0)
    n = s.size
    grad = np.concatenate([x.T @ g_mu / n, [g_mu.mean()], x.T @ g_arg / n, [g_arg.mean()]])
    return nll, grad


def fit_cond_cdf(x, s, steps: int = 500, step_size: float | None = None) -> CondCdfParams:
    """Gaussian location-scale maximum likelihood fit of ``s`` given ``x``.

    Starts from the moment-matched homoscedastic model and runs a
    quasi-Newton gradient method (L-BFGS) for at most ``steps`` iterations.
    ``step_size`` is accepted for interface compatibility; the line search
    chooses its own steps. The returned fit never has a larger negative
    log-likelihood than the starting point.
    """
    x = _design(x)
    s = np.asarray(s, dtype=float).reshape(-1)
    if s.size < 2:
        raise DegenerateDesign("at least two samples are needed")
    d = x.shape[1]
    init = np.zeros(2 * d + 2)
    init[d] = s.mean()
    init[2 * d + 1] = softplus_inv(max(float(s.std()), SCALE_FLOOR))
    nll0, _ = _nll_and_grad(init, x, s)
    res = minimize(_nll_and_grad, init, args=(x, s), jac=True, method="L-BFGS-B",
                   options={"maxiter": int(steps)})
    vec = res.x
    if not np.all(np.isfinite(vec)) or not np.isfinite(res.fun):
        raise NonFinite("conditional CDF fit diverged", trace={"params": vec, "nll": res.fun})
    if res.fun > nll0:
        vec = init
    return CondCdfParams(vec[:d], vec[d], vec[d + 1:2 * d + 1], vec[2 * d + 1])


# ---------------------------------------------------------------------------
# evaluation


def _standardize(theta: CondCdfParams, s, x):
    mu = theta.loc(x)
    sigma = theta.scale(x)
    single = np.asarray(x).ndim == 1
    z = (theta.warp(s) - mu) / sigma
    return z, mu, sigma, single


def _squeeze(v, single, s):
    if single and np.ndim(s) == 0:
        return float(np.reshape(v, -1)[0])
    return v


def cond_cdf_eval(theta: CondCdfParams, s, x):
    """``F(s | x; theta)``; ``x`` is one covariate vector or a row array."""
    z, _, _, single = _standardize(theta, s, x)
    return _squeeze(ndtr(z), single, s)


def cond_cdf_pdf(theta: CondCdfParams, s, x):
    z, _, sigma, single = _standardize(theta, s, x)
    dens = _INV_SQRT_2PI * np.exp(-0.5 * z * z) / sigma * theta.warp_slope(s)
    return _squeeze(dens, single, s)


def cond_cdf_quantile(theta: CondCdfParams, u, x):
    u_arr = np.asarray(u, dtype=float)
    if np.any((u_arr <= 0.0) | (u_arr >= 1.0)):
        raise InvalidLevel("quantile level must lie strictly inside (0, 1)")
    single = np.asarray(x).ndim == 1
    v = theta.loc(x) + theta.scale(x) * ndtri(u_arr)
    return _squeeze(theta.warp_inverse(v), single, u)


def cond_cdf_grad(theta: CondCdfParams, s, x) -> np.ndarray:
    """Gradient of ``F(s | x; theta)`` with respect to the flat parameter
    vector. Returns shape ``(k0,)`` for one covariate vector, else
    ``(rows, k0)``."""
    xr = _rows(x)
    single = np.asarray(x).ndim == 1
    s_arr = np.broadcast_to(np.asarray(s, dtype=float), (xr.shape[0],))
    mu = theta.loc(xr)
    arg = theta._scale_arg(xr)
    raw = softplus(arg)
    sigma = np.maximum(raw, SCALE_FLOOR)
    z = (theta.warp(s_arr) - mu) / sigma
    dens = _INV_SQRT_2PI * np.exp(-0.5 * z * z) / sigma
    d_mu = -dens
    d_arg = np.where(raw > SCALE_FLOOR, -dens * z * expit(arg), 0.0)
    parts = [d_mu[:, None] * xr, d_mu[:, None], d_arg[:, None] * xr, d_arg[:, None]]
    if theta.warp_knots.size:
        parts.append(dens[:, None] * theta.warp_grad(s_arr))
    grad = np.hstack(parts)
    return grad[0] if single else grad


# ---------------------------------------------------------------------------
# serialization


def model_to_json(model) -> str:
    if isinstance(model, MeanPredictor):
        payload = {"kind": "mean", "dim": model.dim,
                   "parameters": [*model.weights.tolist(), model.intercept]}
    elif isinstance(model, QuantilePredictor):
        payload = {"kind": "quantile", "dim": model.dim, "level": model.level,
                   "parameters": [*model.weights.tolist(), model.intercept]}
    elif isinstance(model, CondCdfParams):
        payload = {"kind": "cond_cdf", "dim": model.dim,
                   "parameters": model.to_vector().tolist()}
        if model.warp_knots.size:
            payload["warp_knots"] = model.warp_knots.tolist()
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return json.dumps(payload, sort_keys=True)


def model_from_json(text: str):
    payload = json.loads(text)
    kind, d = payload["kind"], int(payload["dim"])
    p = np.asarray(payload["parameters"], dtype=float)
    if kind == "mean":
        return MeanPredictor(p[:d], p[d])
    if kind == "quantile":
        return QuantilePredictor(float(payload["level"]), p[:d], p[d])
    if kind == "cond_cdf":
        knots = np.asarray(payload.get("warp_knots", []), dtype=float)
        base = CondCdfParams(np.zeros(d), 0.0, np.zeros(d), 0.0, knots, np.zeros(knots.size))
        return base.from_vector(p)
    raise ValueError(f"unknown model kind {kind!r}")
