"""Finite-grid Wasserstein alignment of the conditional score CDF.

Given calibration scores and unlabeled target covariates, the aligned model
minimizes

    J(theta) = (1/K) sum_k (q0_k - q1(u_k; theta))^2 + lam * ||theta - theta_hat||^2 / k0

over the tuned parameters, where ``q0_k`` are empirical score quantiles and
``q1(u; theta)`` is the quantile of the transductive mixture
``mean_j F(. | x_j; theta)``. The level grid always contains the conformal
target level ``1 - alpha_n``.

Which parameters are tuned is set by ``AlignmentConfig.tune``:

``"warp"`` (default)
    Freeze the Gaussian location-scale body and tune a monotone
    piecewise-linear warp of the score axis whose latent knots are the start
    model's mixture quantiles at the grid levels. The warp has one parameter
    per grid level, so at ``lam = 0`` the grid quantiles (and hence the
    conformal quantile) are matched exactly.
``"gaussian"``
    Tune the ``2 d + 2`` location-scale parameters only.
``"all"``
    Tune both.

Gradients use the implicit-function identity for mixture quantiles,
``grad q1(u) = -grad_theta F1(s) / f1(s)`` at ``s = q1(u)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .calib import (
    AlphaLevels,
    _components,
    _gauss_mixture,
    _gauss_mixture_quantile,
    empirical_quantile,
    mixture_cdf_grad,
    mixture_cdf_pdf,
    mixture_cdf_quantile,
    rank_ceil,
)
from .exceptions import DegenerateDensity, InfeasibleAll, InvalidAlpha, NonFinite
from .predictors import CondCdfParams, with_warp

__all__ = [
    "AlignmentConfig",
    "LambdaSelectionConfig",
    "AlignmentResult",
    "LambdaSelection",
    "level_grid",
    "grid_targets",
    "alignment_objective",
    "alignment_gradient",
    "align",
    "stcp_quantile",
    "select_lambda",
    "lambda_table_csv",
]

DENSITY_FLOOR = 1e-12
TUNE_MODES = ("warp", "gaussian", "all")


@dataclass(frozen=True)
class AlignmentConfig:
    lam: float = 0.0
    grid_size: int = 21
    step_size: float = 0.05
    max_iters: int = 2000
    grad_tol: float = 1e-7
    bisect_tol: float = 1e-12
    tune: str = "warp"
    warm_start: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.grid_size < 2:
            raise ValueError("grid_size must be at least 2")
        if self.tune not in TUNE_MODES:
            raise ValueError(f"tune must be one of {TUNE_MODES}")


@dataclass(frozen=True)
class LambdaSelectionConfig:
    lambda_grid: tuple = (0.0, 1.0, 10.0, 100.0, 1000.0)
    alpha_tol: float = 0.02
    band_tol: float = 1e-6

    def __post_init__(self):
        grid = tuple(float(v) for v in self.lambda_grid)
        if not grid or grid[0] != 0.0:
            raise ValueError("lambda_grid must start at 0")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("lambda_grid must be strictly ascending")
        if self.alpha_tol <= 0:
            raise ValueError("alpha_tol must be positive")
        object.__setattr__(self, "lambda_grid", grid)


@dataclass
class AlignmentResult:
    theta: CondCdfParams
    lam: float
    objective: float
    grid_residual: float
    iters: int
    converged: bool
    levels: np.ndarray
    targets: np.ndarray
    history: list = field(default_factory=list)


@dataclass
class LambdaSelection:
    lambda_hat: float
    q_sel: float
    q_lower: float
    q_upper: float
    table: list


# ---------------------------------------------------------------------------
# grid


def level_grid(alpha_n: float, K: int) -> np.ndarray:
    """Midpoint levels ``(i - 1/2) / K`` for ``i = 1..K`` plus ``1 - alpha_n``."""
    if not 0.0 < alpha_n < 1.0:
        raise InvalidAlpha(f"alpha_n must lie in (0, 1), got {alpha_n}")
    if K < 2:
        raise ValueError("K must be at least 2")
    mids = (np.arange(1, K + 1) - 0.5) / K
    return np.unique(np.append(mids, 1.0 - alpha_n))


def grid_targets(scores, levels: AlphaLevels, K: int):
    """Levels and empirical quantile targets used by the alignment.

    Levels whose target order statistic coincides with another level's are
    dropped (the conformal target level is always kept), since the step
    quantile function carries the same information at both.
    """
    s = np.sort(np.asarray(scores, dtype=float).reshape(-1))
    u = level_grid(levels.alpha_n, K)
    ranks = np.array([max(rank_ceil(v * s.size), 1) for v in u])
    t_idx = int(np.argmin(np.abs(u - levels.target_level)))
    ranks[t_idx] = rank_ceil((1.0 - levels.alpha) * (s.size + 1))
    values = s[ranks - 1]
    keep = [t_idx]
    for i in range(u.size):
        if i != t_idx and not np.any(values[keep] == values[i]):
            keep.append(i)
    keep = np.sort(np.array(keep))
    return u[keep], values[keep]


# ---------------------------------------------------------------------------
# objective and gradient


def _penalty_indices(theta: CondCdfParams, tune: str | None) -> np.ndarray:
    g = theta.n_gaussian
    if tune is None or tune == "all":
        return np.arange(theta.k0)
    if tune == "gaussian":
        return np.arange(g)
    return np.arange(g, theta.k0)


def alignment_objective(theta, theta_hat, levels, q0, unlabeled, lam, tune=None, tol=1e-12) -> float:
    """Grid term plus quadratic penalty (normalized by the tuned count)."""
    idx = _penalty_indices(theta, tune)
    q1 = np.asarray(mixture_cdf_quantile(theta, np.asarray(levels), unlabeled, tol))
    diff = theta.to_vector()[idx] - theta_hat.to_vector()[idx]
    return float(np.mean((np.asarray(q0) - q1) ** 2) + lam * diff @ diff / idx.size)


def alignment_gradient(theta, theta_hat, levels, q0, unlabeled, lam, tune=None, tol=1e-12) -> np.ndarray:
    """Gradient of :func:`alignment_objective` with respect to the full flat
    parameter vector; entries of frozen parameters are zero."""
    idx = _penalty_indices(theta, tune)
    levels = np.asarray(levels, dtype=float)
    q0 = np.asarray(q0, dtype=float)
    q1 = np.atleast_1d(mixture_cdf_quantile(theta, levels, unlabeled, tol))
    dens = np.atleast_1d(mixture_cdf_pdf(theta, q1, unlabeled))
    if np.any(dens < DENSITY_FLOOR):
        raise DegenerateDensity(f"mixture density {dens.min():.3g} below {DENSITY_FLOOR}")
    dq = np.vstack([-mixture_cdf_grad(theta, s, unlabeled) for s in q1]) / dens[:, None]
    grad = 2.0 / levels.size * ((q1 - q0) @ dq)
    vec = theta.to_vector()
    out = np.zeros(theta.k0)
    out[idx] = grad[idx] + 2.0 * lam / idx.size * (vec[idx] - theta_hat.to_vector()[idx])
    return out


class _Problem:
    """Alignment problem for fixed scores, unlabeled data and start model.

    With ``tune == "warp"`` the Gaussian body is frozen, so the latent mixture
    quantiles ``g_k`` are computed once and double as the warp knots; every
    aligned quantile is then ``h(g_k) = g_k + shift_k`` and the
    implicit-gradient identity reduces to the interpolation basis at ``g_k``
    (the mixture density cancels).
    """

    def __init__(self, theta_hat, scores, unlabeled, levels: AlphaLevels, config: AlignmentConfig):
        self.config = config
        self.unlabeled = np.atleast_2d(np.asarray(unlabeled, dtype=float))
        self.u, self.q0 = grid_targets(scores, levels, config.grid_size)
        self.target_level = levels.target_level
        if config.tune == "gaussian" and theta_hat.warp_knots.size:
            raise ValueError("tune='gaussian' expects an unwarped start model")
        base = theta_hat
        if config.tune in ("warp", "all"):
            # knots: the start model's mixture quantiles at the grid levels
            mu, sigma = _components(theta_hat, self.unlabeled)
            grid = np.append(self.u, self.target_level)
            v = _gauss_mixture_quantile(grid, mu, sigma, config.bisect_tol)
            _, dens = _gauss_mixture(v, mu, sigma)
            if np.any(dens < DENSITY_FLOOR):
                raise DegenerateDensity(f"mixture density {dens.min():.3g} below {DENSITY_FLOOR}")
            base = with_warp(theta_hat, v[:-1])
            self.g = v[:-1]
            self.g_target = float(v[-1])
            if config.tune == "warp":
                self._dq = base.latent_basis(self.g)
        self.theta_hat = base
        self.idx = _penalty_indices(base, config.tune)
        self.hat_vec = base.to_vector()

    def theta(self, sub) -> CondCdfParams:
        vec = self.hat_vec.copy()
        vec[self.idx] = sub
        return self.theta_hat.from_vector(vec)

    def quantiles(self, theta) -> np.ndarray:
        if self.config.tune == "warp":
            return theta.warp_inverse(self.g)
        return np.atleast_1d(mixture_cdf_quantile(theta, self.u, self.unlabeled, self.config.bisect_tol))

    def target_quantile(self, theta) -> float:
        if self.config.tune == "warp":
            return float(theta.warp_inverse(self.g_target))
        return mixture_cdf_quantile(theta, self.target_level, self.unlabeled, self.config.bisect_tol)

    def value(self, sub, lam):
        theta = self.theta(sub)
        if not theta.warp_is_monotone():
            return math.inf, theta
        q1 = self.quantiles(theta)
        diff = sub - self.hat_vec[self.idx]
        return float(np.mean((self.q0 - q1) ** 2) + lam * diff @ diff / self.idx.size), theta

    def gradient(self, sub, lam, theta) -> np.ndarray:
        diff = sub - self.hat_vec[self.idx]
        pen = 2.0 * lam / self.idx.size * diff
        if self.config.tune == "warp":
            q1 = theta.warp_inverse(self.g)
            return 2.0 / self.u.size * ((q1 - self.q0) @ self._dq) + pen
        full = alignment_gradient(theta, self.theta_hat, self.u, self.q0, self.unlabeled, 0.0,
                                  tune=self.config.tune, tol=self.config.bisect_tol)
        return full[self.idx] + pen

    def solve(self, lam: float, start=None) -> AlignmentResult:
        cfg = self.config
        sub = self.hat_vec[self.idx].copy() if start is None else np.asarray(start, dtype=float).copy()
        value, theta = self.value(sub, lam)
        step = cfg.step_size
        history = [value]
        iters = 0
        converged = False
        for it in range(cfg.max_iters):
            grad = self.gradient(sub, lam, theta)
            if not (np.all(np.isfinite(grad)) and math.isfinite(value)):
                raise NonFinite("alignment produced a non-finite value",
                                trace={"iteration": it, "history": history, "params": sub})
            if np.linalg.norm(grad) <= cfg.grad_tol:
                converged = True
                break
            for _ in range(100):
                trial = sub - step * grad
                t_value, t_theta = self.value(trial, lam)
                if t_value <= value:
                    break
                step *= 0.5
            else:
                break
            if t_value == value and np.array_equal(trial, sub):
                break
            sub, value, theta = trial, t_value, t_theta
            history.append(value)
            iters += 1
            step *= 2.0
        q1 = self.quantiles(theta)
        return AlignmentResult(
            theta=theta,
            lam=float(lam),
            objective=value,
            grid_residual=float(np.mean((self.q0 - q1) ** 2)),
            iters=iters,
            converged=converged,
            levels=self.u,
            targets=self.q0,
            history=history,
        )


def align(theta_hat: CondCdfParams, lam: float, scores, unlabeled, levels: AlphaLevels,
          config: AlignmentConfig | None = None) -> AlignmentResult:
    """Gradient descent on the alignment objective, started at ``theta_hat``.

    Steps that increase the objective (or break monotonicity of the warp)
    are halved; accepted steps double the next trial step. Stops once the
    gradient norm falls to ``grad_tol`` or after ``max_iters`` accepted
    iterations. ``result.objective <= J(theta_hat)`` always holds.
    """
    if levels.infinite:
        raise InvalidAlpha("alpha_n <= 0: the threshold is infinite and nothing is aligned")
    config = config or AlignmentConfig(lam=lam)
    return _Problem(theta_hat, scores, unlabeled, levels, config).solve(lam)


def stcp_quantile(theta_tilde: CondCdfParams, levels: AlphaLevels, unlabeled, tol: float = 1e-12) -> float:
    """Aligned threshold: the ``1 - alpha_n`` quantile of the aligned mixture."""
    if levels.infinite or levels.target_level >= 1.0:
        return math.inf
    return mixture_cdf_quantile(theta_tilde, levels.target_level, unlabeled, tol)


def select_lambda(theta_hat: CondCdfParams, selection: LambdaSelectionConfig, levels: AlphaLevels,
                  scores, unlabeled, config: AlignmentConfig | None = None) -> LambdaSelection:
    """Largest lambda whose aligned threshold lies in the empirical band
    ``[Q(1 - alpha - alpha_tol), Q(1 - alpha + alpha_tol)]``.

    The band is widened by ``selection.band_tol`` on both sides to absorb
    optimizer round-off at ``lambda = 0``, where the aligned threshold equals
    an order statistic that can sit exactly on the band edge.
    """
    config = config or AlignmentConfig()
    alpha, tol = levels.alpha, selection.alpha_tol
    q_lower = empirical_quantile(scores, 1.0 - alpha - tol)
    upper_level = 1.0 - alpha + tol
    q_upper = float(np.max(scores)) if upper_level >= 1.0 else empirical_quantile(scores, upper_level)
    table = []
    if levels.infinite:
        for lam in selection.lambda_grid:
            table.append({"lambda": lam, "q_st": math.inf, "feasible": False,
                          "grid_residual": math.nan, "iters": 0})
    else:
        problem = _Problem(theta_hat, scores, unlabeled, levels, config)
        start = None
        for lam in selection.lambda_grid:
            res = problem.solve(lam, start)
            q = problem.target_quantile(res.theta)
            feasible = q_lower - selection.band_tol <= q <= q_upper + selection.band_tol
            table.append({"lambda": lam, "q_st": q, "feasible": bool(feasible),
                          "grid_residual": res.grid_residual, "iters": res.iters})
            if config.warm_start:
                start = res.theta.to_vector()[problem.idx]
    if not table[0]["feasible"]:
        raise InfeasibleAll(
            f"lambda=0 threshold {table[0]['q_st']!r} outside [{q_lower!r}, {q_upper!r}]")
    chosen = max((row for row in table if row["feasible"]), key=lambda row: row["lambda"])
    return LambdaSelection(chosen["lambda"], chosen["q_st"], q_lower, q_upper, table)


def lambda_table_csv(selection: LambdaSelection) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["lambda", "q_st", "feasible", "grid_residual", "iters"])
    for row in selection.table:
        writer.writerow([repr(float(row["lambda"])), _fmt(row["q_st"]), str(row["feasible"]).lower(),
                         _fmt(row["grid_residual"]), row["iters"]])
    return buf.getvalue()


def _fmt(v: float) -> str:
    if v == math.inf:
        return "inf"
    return repr(float(v))
