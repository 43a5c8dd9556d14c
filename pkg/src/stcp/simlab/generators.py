"""Heteroscedastic linear-Gaussian source/target generators."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..data import DataBundle

__all__ = ["FAMILIES", "SyntheticSetting", "sigma", "gen_bundle"]

FAMILIES = ("LogAbs", "Quad", "Softplus")

_G = {
    "LogAbs": lambda t: np.log1p(np.abs(t)),
    "Quad": lambda t: t * t,
    "Softplus": lambda t: np.logaddexp(0.0, t),
}


@dataclass(frozen=True)
class SyntheticSetting:
    """Covariate-shifted linear model with covariate-dependent noise scale.

    Source covariates are standard normal; target covariates are shifted to
    mean ``1 / (2 sqrt(d))`` in every coordinate. Slopes are ``3/d``
    (source) and ``2/d`` (target) per coordinate.
    """

    family: str = "LogAbs"
    d: int = 5
    gamma_s: float = 1.2
    gamma_t: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.d < 1:
            raise ValueError("d must be positive")
        if self.gamma_s <= 0 or self.gamma_t <= 0:
            raise ValueError("gamma values must be positive")

    @property
    def mu_s(self) -> np.ndarray:
        return np.zeros(self.d)

    @property
    def mu_t(self) -> np.ndarray:
        return np.full(self.d, 0.5 / math.sqrt(self.d))

    @property
    def slope_s(self) -> float:
        return 3.0 / self.d

    @property
    def slope_t(self) -> float:
        return 2.0 / self.d


def sigma(family: str, x, gamma: float):
    """``sqrt(gamma) * sum_j g(x_j) / sqrt(d)`` with the family's ``g``.

    ``x`` may be one covariate vector or a ``(rows, d)`` array.
    """
    if family not in _G:
        raise ValueError(f"unknown family {family!r}")
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    out = math.sqrt(gamma) * _G[family](x).sum(axis=-1) / math.sqrt(d)
    return float(out) if np.ndim(out) == 0 else out


def _draw(stream, size, mean, slope, family, gamma):
    x = stream.standard_normal((size, mean.size)) + mean
    eps = stream.standard_normal(size) * sigma(family, x, gamma)
    return x, slope * x.sum(axis=1) + eps


def gen_bundle(setting: SyntheticSetting, n: int, m: int, N: int, n_test: int,
               oracle_extra: int, stream: np.random.Generator) -> DataBundle:
    """Draw one data split.

    Draw order is fixed: source block, target calibration block, unlabeled
    covariates, test block, then the extra labeled target block. Within a
    labeled block the covariate matrix is drawn first, then the noise vector.
    """
    for name, v in (("n", n), ("m", m), ("N", N)):
        if v < 1:
            raise ValueError(f"{name} must be positive")
    if n_test < 0 or oracle_extra < 0:
        raise ValueError("n_test and oracle_extra must be non-negative")
    fam, mu_t = setting.family, setting.mu_t
    xs, ys = _draw(stream, N, setting.mu_s, setting.slope_s, fam, setting.gamma_s)
    xt, yt = _draw(stream, n, mu_t, setting.slope_t, fam, setting.gamma_t)
    xu = stream.standard_normal((m, setting.d)) + mu_t
    xe, ye = _draw(stream, n_test, mu_t, setting.slope_t, fam, setting.gamma_t)
    xo, yo = _draw(stream, oracle_extra, mu_t, setting.slope_t, fam, setting.gamma_t)
    return DataBundle(xt, yt, xu, xs, ys, xe, ye, xo, yo)
