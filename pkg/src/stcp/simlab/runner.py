"""Monte-Carlo experiment runner: methods x repeats on synthetic data.

Each repeat is a pure function of ``(config, repeat_index)``. The repeat's
main stream generates the data split; a separate substream seeds the k-means
partition used for the conditional miscoverage metric, so partitions do not
depend on which optional data blocks were drawn.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..align import AlignmentConfig, LambdaSelectionConfig, align, select_lambda, stcp_quantile
from ..calib import (
    AlphaLevels,
    conformal_quantile,
    debiased_cdf,
    debiased_grid,
    debiased_quantile,
    dp_quantile,
    oracle_quantile,
)
from ..data import SeedSpec, derive_stream, derive_substream
from ..exceptions import StcpError
from ..predictors import fit_cond_cdf, fit_linear_mean, fit_linear_quantile
from ..scores import CqrScore, GlcpScore, ResidualScore, set_contains, set_size
from .generators import SyntheticSetting, gen_bundle
from .kmeans import assign, kmeans
from .metrics import (
    metric_improvement_oracle,
    metric_improvement_rel,
    metric_miscoverage,
    metric_std,
    reference_std,
)

__all__ = [
    "METHODS",
    "SCORE_TYPES",
    "ExperimentConfig",
    "RepeatRecord",
    "RepeatContext",
    "MethodSummary",
    "ExperimentReport",
    "prepare_repeat",
    "run_repeat",
    "run_experiment",
    "aggregate",
]

METHODS = ("base", "dp", "ppi", "sdcp", "stcp", "stcp_sel", "oracle")
SCORE_TYPES = ("residual", "glcp", "cqr")
_NEEDS_THETA = {"dp", "ppi", "stcp", "stcp_sel"}
N_PARTITIONS = 10


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an experiment's output.

    ``stcp_lambda`` is the fixed weight used by the ``stcp`` method;
    ``stcp_sel`` picks its weight from ``lambda_grid``. ``theta_loc_shift``
    moves the source-fitted score model's location before any model-based
    method uses it (zero for the honest pipeline).
    """

    setting: SyntheticSetting = field(default_factory=SyntheticSetting)
    n: int = 30
    m: int = 500
    N: int = 2000
    n_test: int = 2000
    alpha: float = 0.1
    alpha_tol: float = 0.02
    lambda_grid: tuple = (0.0, 1.0, 10.0, 100.0, 1000.0)
    repeats: int = 50
    base_seed: int = 0
    score_type: str = "glcp"
    methods: tuple = ("base", "stcp", "stcp_sel")
    oracle_extra: int = 2000
    stcp_lambda: float = 0.0
    grid_size: int = 21
    theta_loc_shift: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.methods:
            raise ValueError("methods must be nonempty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}")
        if self.score_type not in SCORE_TYPES:
            raise ValueError(f"score_type must be one of {SCORE_TYPES}")
        for name in ("n", "m", "N", "n_test", "repeats", "oracle_extra"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "lambda_grid", tuple(float(v) for v in self.lambda_grid))


@dataclass(frozen=True)
class RepeatRecord:
    repeat_index: int
    method: str
    lambda_used: float | None
    q_hat: float
    marginal_coverage: float
    mean_size: float
    miscoverage: float
    converged: bool | None = None


@dataclass(frozen=True)
class MethodSummary:
    std_of_mean_size: float
    std_infinite: bool
    mean_marginal: float
    mean_size: float
    mean_miscoverage: float
    std_of_q_hat: float
    improvement_rel: float | None
    improvement_oracle: float | None


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    records: list
    aggregates: dict

    def method_records(self, method: str) -> list:
        return [r for r in self.records if r.method == method]


# ---------------------------------------------------------------------------
# one repeat


def _score_model(kind, bundle, alpha):
    xs, ys = bundle.x_source, bundle.y_source
    if kind == "cqr":
        return CqrScore(fit_linear_quantile(xs, ys, alpha / 2.0),
                        fit_linear_quantile(xs, ys, 1.0 - alpha / 2.0))
    mean = fit_linear_mean(xs, ys)
    if kind == "residual":
        return ResidualScore(mean)
    return GlcpScore(mean, fit_cond_cdf(xs, np.abs(ys - mean.predict(xs))))


def _threshold(method, cfg, scores, bundle, theta_hat, levels, model):
    """Return ``(q_hat, lambda_used, converged)`` for one method."""
    xt, xu = bundle.x_target, bundle.x_unlabeled
    if method == "base":
        return conformal_quantile(scores, cfg.alpha), None, None
    if method == "oracle":
        extra = model(bundle.x_extra, bundle.y_extra)
        return oracle_quantile(scores, extra, cfg.alpha), None, None
    if method == "dp":
        return dp_quantile(theta_hat, levels, xu), None, None
    if method in ("ppi", "sdcp"):
        theta = theta_hat if method == "ppi" else fit_cond_cdf(xt, scores)
        grid = debiased_grid(scores, theta, xu)
        cdf = debiased_cdf(scores, theta, xt, xu, grid)
        return debiased_quantile(cdf, levels), None, None
    align_cfg = AlignmentConfig(lam=cfg.stcp_lambda, grid_size=cfg.grid_size)
    if levels.infinite:
        lam = cfg.stcp_lambda if method == "stcp" else 0.0
        return math.inf, lam, None
    if method == "stcp":
        res = align(theta_hat, cfg.stcp_lambda, scores, xu, levels, align_cfg)
        return stcp_quantile(res.theta, levels, xu), cfg.stcp_lambda, res.converged
    sel = select_lambda(theta_hat, LambdaSelectionConfig(cfg.lambda_grid, cfg.alpha_tol),
                        levels, scores, xu, align_cfg)
    return sel.q_sel, sel.lambda_hat, None


@dataclass
class RepeatContext:
    """Fitted pieces shared by every method within one repeat."""

    bundle: object
    model: object
    scores: np.ndarray
    theta_hat: object
    levels: AlphaLevels


def prepare_repeat(cfg: ExperimentConfig, repeat_index: int, need_theta: bool | None = None) -> RepeatContext:
    """Generate the split, fit the score on source data and (when a
    model-based method is requested) the source score model."""
    stream = derive_stream(SeedSpec(cfg.base_seed, repeat_index))
    extra = cfg.oracle_extra if "oracle" in cfg.methods else 0
    bundle = gen_bundle(cfg.setting, cfg.n, cfg.m, cfg.N, cfg.n_test, extra, stream)
    model = _score_model(cfg.score_type, bundle, cfg.alpha)
    scores = model(bundle.x_target, bundle.y_target)
    if need_theta is None:
        need_theta = bool(_NEEDS_THETA.intersection(cfg.methods))
    theta_hat = None
    if need_theta:
        s_source = model(bundle.x_source, bundle.y_source)
        theta_hat = fit_cond_cdf(bundle.x_source, s_source)
        if cfg.theta_loc_shift:
            theta_hat = theta_hat.shifted(cfg.theta_loc_shift)
    return RepeatContext(bundle, model, scores, theta_hat, AlphaLevels(cfg.alpha, cfg.n))


def run_repeat(cfg: ExperimentConfig, repeat_index: int) -> list:
    """All method records for one repeat, in ``cfg.methods`` order."""
    ctx = prepare_repeat(cfg, repeat_index)
    bundle, model, scores, theta_hat, levels = (
        ctx.bundle, ctx.model, ctx.scores, ctx.theta_hat, ctx.levels)

    k = min(N_PARTITIONS, cfg.n + cfg.m)
    centroids, _ = kmeans(np.vstack([bundle.x_target, bundle.x_unlabeled]), k,
                          derive_substream(SeedSpec(cfg.base_seed, repeat_index), 1))
    parts = assign(bundle.x_test, centroids)

    out = []
    for method in cfg.methods:
        try:
            q, lam, conv = _threshold(method, cfg, scores, bundle, theta_hat, levels, model)
        except StcpError as exc:
            raise type(exc)(f"repeat {repeat_index}, method {method}: {exc}") from exc
        covered = np.asarray(set_contains(model, q, bundle.x_test, bundle.y_test), dtype=bool)
        sizes = set_size(model, q, bundle.x_test)
        out.append(RepeatRecord(
            repeat_index=repeat_index,
            method=method,
            lambda_used=lam,
            q_hat=float(q),
            marginal_coverage=float(covered.mean()),
            mean_size=float(np.mean(sizes)),
            miscoverage=metric_miscoverage(parts, covered, cfg.alpha, k),
            converged=conv,
        ))
    return out


# ---------------------------------------------------------------------------
# many repeats


def _repeat_job(args):
    return run_repeat(*args)


def aggregate(records, methods, alpha: float) -> dict:
    """Per-method summaries; a pure function of the records."""
    per = {m: [r for r in records if r.method == m] for m in methods}
    raw = {}
    for m, recs in per.items():
        sizes = np.array([r.mean_size for r in recs])
        qs = np.array([r.q_hat for r in recs])
        many = len(recs) >= 2
        raw[m] = dict(
            std_of_mean_size=metric_std(sizes) if many else math.nan,
            std_infinite=bool(np.any(np.isinf(sizes))),
            mean_marginal=float(np.mean([r.marginal_coverage for r in recs])),
            mean_size=float(np.mean(sizes)),
            mean_miscoverage=float(np.mean([r.miscoverage for r in recs])),
            std_of_q_hat=metric_std(qs) if many else math.nan,
        )
    stds = {m: v["std_of_mean_size"] for m, v in raw.items()}
    margs = {m: v["mean_marginal"] for m, v in raw.items()}
    a_base = stds.get("base")
    a0 = stds.get("oracle")
    a_ref = reference_std(stds, margs, alpha)
    out = {}
    for m, v in raw.items():
        a1 = v["std_of_mean_size"]
        rel = None
        if a_base is not None and math.isfinite(a1) and math.isfinite(a_base) and a_base > 0:
            rel = metric_improvement_rel(a1, a_base)
        orc = None
        if (a0 is not None and a_ref is not None and math.isfinite(a1)
                and math.isfinite(a0) and math.isfinite(a_ref) and a_ref != a0):
            orc = metric_improvement_oracle(a1, a0, a_ref)
        out[m] = MethodSummary(improvement_rel=rel, improvement_oracle=orc, **v)
    return out


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Run every repeat and fold the records in repeat order.

    With ``threads > 1`` repeats are spread over a process pool; the output
    does not depend on the worker count.
    """
    jobs = [(cfg, r) for r in range(cfg.repeats)]
    if threads > 1 and cfg.repeats > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_repeat_job, jobs, chunksize=max(1, cfg.repeats // (4 * threads))))
    else:
        chunks = [_repeat_job(j) for j in jobs]
    records = [rec for chunk in chunks for rec in chunk]
    return ExperimentReport(cfg, records, aggregate(records, cfg.methods, cfg.alpha))
