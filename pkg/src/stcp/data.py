"""Core value types, the four-way data split and the seeding protocol.

Randomness
----------
Every stream is a :class:`numpy.random.Generator` backed by PCG64. The
per-repeat stream is derived from ``(base_seed, repeat_index)`` through
:class:`numpy.random.SeedSequence` with ``entropy=base_seed`` and
``spawn_key=(repeat_index,)``; SeedSequence mixes both through its documented
integer hash, so distinct repeat indices give independent streams and the
same pair always gives the same stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionMismatch, EmptyInput

__all__ = [
    "LabeledSample",
    "DataBundle",
    "SeedSpec",
    "derive_stream",
    "derive_substream",
    "standard_normal",
]


@dataclass(frozen=True)
class LabeledSample:
    x: np.ndarray
    y: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        if x.size == 0 or not np.all(np.isfinite(x)):
            raise ValueError("x must be a nonempty finite vector")
        if not np.isfinite(self.y):
            raise ValueError("y must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", float(self.y))

    @property
    def dim(self) -> int:
        return self.x.size


def _as_design(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be a 2-D covariate array")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class DataBundle:
    """Target calibration, target unlabeled, source and test data.

    Covariates are stored row-wise as ``(size, dim)`` arrays.
    """

    x_target: np.ndarray
    y_target: np.ndarray
    x_unlabeled: np.ndarray
    x_source: np.ndarray
    y_source: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    x_extra: np.ndarray = field(default=None)
    y_extra: np.ndarray = field(default=None)

    def __post_init__(self):
        arrays = {}
        for name in ("x_target", "x_unlabeled", "x_source", "x_test"):
            arrays[name] = _as_design(getattr(self, name), name)
        dims = {a.shape[1] for a in arrays.values()}
        if self.x_extra is not None:
            arrays["x_extra"] = _as_design(self.x_extra, "x_extra")
            dims.add(arrays["x_extra"].shape[1])
        if len(dims) != 1:
            raise DimensionMismatch(f"covariate dimensions differ: {sorted(dims)}")
        for name in ("x_target", "x_unlabeled", "x_source"):
            if arrays[name].shape[0] < 1:
                raise EmptyInput(f"{name} must hold at least one row")
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)
        for xname, yname in (("x_target", "y_target"), ("x_source", "y_source"),
                             ("x_test", "y_test"), ("x_extra", "y_extra")):
            y = getattr(self, yname)
            if y is None and xname == "x_extra" and self.x_extra is None:
                continue
            y = np.asarray(y, dtype=float).reshape(-1)
            if y.shape[0] != arrays[xname].shape[0]:
                raise DimensionMismatch(f"{yname} length does not match {xname}")
            object.__setattr__(self, yname, y)

    @property
    def dim(self) -> int:
        return self.x_target.shape[1]

    @property
    def n(self) -> int:
        return self.x_target.shape[0]

    @property
    def m(self) -> int:
        return self.x_unlabeled.shape[0]

    @property
    def N(self) -> int:
        return self.x_source.shape[0]

    @classmethod
    def from_samples(cls, target, unlabeled, source, test) -> "DataBundle":
        """Build a bundle from lists of :class:`LabeledSample` (and raw vectors
        for the unlabeled part)."""

        def stack(samples):
            if not samples:
                return np.empty((0, 0)), np.empty(0)
            return np.vstack([s.x for s in samples]), np.array([s.y for s in samples])

        xt, yt = stack(target)
        xs, ys = stack(source)
        xe, ye = stack(test)
        xu = np.vstack([np.asarray(u, dtype=float).reshape(-1) for u in unlabeled]) if len(unlabeled) else np.empty((0, 0))
        if xe.size == 0:
            xe = np.empty((0, xt.shape[1]))
        return cls(xt, yt, xu, xs, ys, xe, ye)


@dataclass(frozen=True)
class SeedSpec:
    base_seed: int
    repeat_index: int = 0

    def __post_init__(self):
        if not 0 <= int(self.base_seed) < 2**64:
            raise ValueError("base_seed must be an unsigned 64-bit integer")
        if int(self.repeat_index) < 0:
            raise ValueError("repeat_index must be non-negative")


def derive_stream(seed: SeedSpec) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed.base_seed), spawn_key=(int(seed.repeat_index),))
    return np.random.Generator(np.random.PCG64(ss))


def derive_substream(seed: SeedSpec, tag: int) -> np.random.Generator:
    """Auxiliary stream for the same repeat, independent of :func:`derive_stream`.

    Used for randomness that must not depend on how many draws the main
    stream has already served (for example, clustering after an optional
    data block).
    """
    ss = np.random.SeedSequence(entropy=int(seed.base_seed),
                                spawn_key=(int(seed.repeat_index), int(tag)))
    return np.random.Generator(np.random.PCG64(ss))


def standard_normal(stream: np.random.Generator, size=None):
    return stream.standard_normal(size)
