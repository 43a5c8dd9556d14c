from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stcp.data import (
    DataBundle,
    LabeledSample,
    SeedSpec,
    derive_stream,
    derive_substream,
    standard_normal,
)
from stcp.exceptions import DimensionMismatch, EmptyInput


class TestDeriveStream:
    def test_same_seed_same_draws(self):
        a = derive_stream(SeedSpec(7, 0)).random(1000)
        b = derive_stream(SeedSpec(7, 0)).random(1000)
        assert np.array_equal(a, b)

    def test_repeat_index_separates_streams(self):
        a = derive_stream(SeedSpec(7, 0)).random(1000)
        b = derive_stream(SeedSpec(7, 1)).random(1000)
        assert np.any(a != b)

    def test_uniform_mean(self):
        u = derive_stream(SeedSpec(7, 0)).random(100_000)
        assert abs(u.mean() - 0.5) <= 0.01

    def test_substream_differs_from_main(self):
        seed = SeedSpec(3, 2)
        assert np.any(derive_stream(seed).random(50) != derive_substream(seed, 1).random(50))
        assert np.array_equal(derive_substream(seed, 1).random(50), derive_substream(seed, 1).random(50))

    @pytest.mark.parametrize("base, rep", [(-1, 0), (2**64, 0), (0, -1)])
    def test_seed_range(self, base, rep):
        with pytest.raises(ValueError):
            SeedSpec(base, rep)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**64 - 1), st.integers(0, 10_000))
    def test_pure_function_of_seed(self, base, rep):
        a = derive_stream(SeedSpec(base, rep)).integers(0, 2**63, 8)
        b = derive_stream(SeedSpec(base, rep)).integers(0, 2**63, 8)
        assert np.array_equal(a, b)


@pytest.fixture(scope="module")
def draws():
    return standard_normal(derive_stream(SeedSpec(11, 0)), 1_000_000)


class TestStandardNormal:
    def test_mean(self, draws):
        assert abs(draws.mean()) <= 0.005

    def test_variance(self, draws):
        assert 0.99 <= draws.var(ddof=1) <= 1.01

    def test_symmetry(self, draws):
        assert abs(np.mean(draws <= 0) - 0.5) <= 0.005

    def test_replay(self):
        a = standard_normal(derive_stream(SeedSpec(5, 3)), 100)
        b = standard_normal(derive_stream(SeedSpec(5, 3)), 100)
        assert np.array_equal(a, b)

    def test_scalar_draw(self):
        assert isinstance(standard_normal(derive_stream(SeedSpec(1))), float)


def _bundle(d_t=3, d_u=3, n=4, m=5, N=6):
    rng = np.random.default_rng(0)
    return DataBundle(
        rng.normal(size=(n, d_t)), rng.normal(size=n),
        rng.normal(size=(m, d_u)),
        rng.normal(size=(N, 3)), rng.normal(size=N),
        rng.normal(size=(2, 3)), rng.normal(size=2),
    )


class TestDataBundle:
    def test_sizes(self):
        b = _bundle()
        assert (b.dim, b.n, b.m, b.N) == (3, 4, 5, 6)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            _bundle(d_u=2)

    def test_label_length_mismatch(self):
        rng = np.random.default_rng(1)
        with pytest.raises(DimensionMismatch):
            DataBundle(rng.normal(size=(4, 2)), rng.normal(size=3), rng.normal(size=(2, 2)),
                       rng.normal(size=(2, 2)), rng.normal(size=2),
                       rng.normal(size=(1, 2)), rng.normal(size=1))

    @pytest.mark.parametrize("field", ["n", "m", "N"])
    def test_empty_parts_rejected(self, field):
        sizes = {"n": 4, "m": 5, "N": 6, field: 0}
        with pytest.raises(EmptyInput):
            _bundle(**sizes)

    def test_from_samples(self):
        t = [LabeledSample([0.0, 1.0], 2.0), LabeledSample([1.0, 1.0], 3.0)]
        s = [LabeledSample([0.5, 0.5], 1.0)]
        b = DataBundle.from_samples(t, [[0.0, 0.0]], s, [])
        assert b.n == 2 and b.m == 1 and b.N == 1 and b.x_test.shape == (0, 2)

    def test_from_samples_mixed_dims(self):
        t = [LabeledSample([0.0, 1.0], 2.0)]
        with pytest.raises(DimensionMismatch):
            DataBundle.from_samples(t, [[0.0, 0.0, 0.0]], t, t)


class TestLabeledSample:
    def test_valid(self):
        s = LabeledSample([1, 2, 3], 4)
        assert s.dim == 3 and s.y == 4.0

    @pytest.mark.parametrize("x, y", [([np.nan], 1.0), ([1.0], np.inf), ([], 0.0)])
    def test_rejects_nonfinite(self, x, y):
        with pytest.raises(ValueError):
            LabeledSample(x, y)
