"""Walk through a single calibration split by hand.

We draw one synthetic split, fit a GLCP score on the source data, and
compare the thresholds produced by the plain conformal quantile, the
direct plug-in of the source score model, and the aligned model at a few
penalty strengths. Small penalties reproduce the conformal threshold;
large ones pull it toward the plug-in value.

Run with ``python demos/01_one_repeat.py``.
"""

from __future__ import annotations

from stcp import AlignmentConfig, LambdaSelectionConfig, align, conformal_quantile, dp_quantile
from stcp import select_lambda, stcp_quantile
from stcp.simlab import ExperimentConfig, prepare_repeat

cfg = ExperimentConfig(methods=("base", "stcp"), repeats=1, base_seed=3)
ctx = prepare_repeat(cfg, 0)
xu = ctx.bundle.x_unlabeled

print(f"{ctx.bundle.n} labeled target points, {ctx.bundle.m} unlabeled, {ctx.bundle.N} source points")
print(f"target level 1 - alpha_n = {ctx.levels.target_level:.4f}\n")

base = conformal_quantile(ctx.scores, cfg.alpha)
plug_in = dp_quantile(ctx.theta_hat, ctx.levels, xu)
print(f"conformal threshold     {base:.5f}")
print(f"plug-in threshold       {plug_in:.5f}\n")

print("lambda   aligned threshold   converged")
for lam in (0.0, 0.1, 1.0, 10.0, 1000.0):
    res = align(ctx.theta_hat, lam, ctx.scores, xu, ctx.levels, AlignmentConfig(lam=lam))
    print(f"{lam:>6g}   {stcp_quantile(res.theta, ctx.levels, xu):.5f}             {res.converged}")

sel = select_lambda(ctx.theta_hat, LambdaSelectionConfig(), ctx.levels, ctx.scores, xu)
print(f"\nselected lambda {sel.lambda_hat:g}; admissible band [{sel.q_lower:.5f}, {sel.q_upper:.5f}]")
print(f"threshold after selection {sel.q_sel:.5f}")
