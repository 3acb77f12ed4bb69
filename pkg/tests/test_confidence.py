"""Tests for the path-consistency and uniqueness terms and the confidence map."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import small_view
from sweepsgm.confidence import (
    DEFAULT_CONFIDENCE,
    ConfidenceParams,
    confidence_from_terms,
    confidence_map,
    path_consistency,
    path_consistency_map,
    uniqueness,
    uniqueness_map,
)
from sweepsgm.geometry import SamplingPlaneSet
from sweepsgm.matching import CostVolume
from sweepsgm.sgm import AggregatedVolume, PenaltyConfig, VariantSpec, aggregate_paths


def _from_paths(paths):
    """Aggregated volume for a single pixel from explicit per-path cost vectors."""
    paths = [np.asarray(p, dtype=np.float64).reshape(1, 1, -1) for p in paths]
    summed = sum(paths)
    n = summed.shape[2]
    return AggregatedVolume(
        summed=summed,
        path_min_sum=sum(p.min(axis=2) for p in paths),
        start=np.zeros((1, 1), dtype=np.int32),
        length=np.full((1, 1), n, dtype=np.int32),
        n_planes=n,
        paths=paths,
    )


def _from_summed(values):
    return _from_paths([values])


def _random_agg(seed, h=8, w=9, n=7):
    rng = np.random.default_rng(seed)
    S = rng.uniform(0, 255, (h, w, n))
    return aggregate_paths(
        CostVolume.full(S),
        rng.uniform(0, 255, (h, w)),
        PenaltyConfig(P1=20.0, P2=80.0, p2_mode="line"),
        VariantSpec("fp"),
        SamplingPlaneSet(1.0 + 0.1 * np.arange(n)),
        small_view(w, h),
        lines=np.zeros((h, w), dtype=np.uint8),
    )


PARAMS = ConfidenceParams(phi=80.0, tau=10.0)


class TestParams:
    def test_defaults(self):
        assert DEFAULT_CONFIDENCE["ncc"] == ConfidenceParams(phi=80.0, tau=10.0)
        assert DEFAULT_CONFIDENCE["census"] == ConfidenceParams(phi=650.0, tau=80.0)

    @pytest.mark.parametrize("phi,tau", [(0.0, 1.0), (-1.0, 1.0), (1.0, -0.5)])
    def test_invalid(self, phi, tau):
        with pytest.raises(ValueError):
            ConfidenceParams(phi=phi, tau=tau)


class TestPathConsistency:
    def test_aligned_minima(self):
        agg = _from_paths([[1, 4, 6], [2, 5, 9], [0, 3, 3]] + [[7, 8, 9]] * 5)
        assert path_consistency(agg, (0, 0)) == 0.0

    def test_two_path_hand_example(self):
        agg = _from_paths([[3, 5], [6, 4]])
        assert agg.summed[0, 0].min() == 9
        assert agg.path_min_sum[0, 0] == 7
        assert path_consistency(agg, (0, 0)) == 2.0
        assert path_consistency_map(agg)[0, 0] == 2.0

    @pytest.mark.parametrize("seed", range(10))
    def test_lower_bound_on_random_volumes(self, seed):
        assert path_consistency_map(_random_agg(seed)).min() >= -1e-9

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.lists(st.floats(0, 100), min_size=4, max_size=4), min_size=1, max_size=8))
    def test_non_negative_property(self, paths):
        assert path_consistency(_from_paths(paths), (0, 0)) >= -1e-9


class TestUniqueness:
    def test_duplicated_minimum(self):
        assert uniqueness(_from_summed([9, 9, 12]), (0, 0)) == 0.0

    def test_hand_example(self):
        assert uniqueness(_from_summed([9, 14, 12]), (0, 0)) == 3.0

    def test_map_matches_sort_oracle(self):
        agg = _random_agg(3)
        expected = np.sort(agg.summed, axis=2)
        np.testing.assert_array_equal(uniqueness_map(agg), expected[..., 1] - expected[..., 0])

    def test_single_plane(self, caplog):
        agg = _from_summed([5.0])
        with caplog.at_level("DEBUG"):
            assert uniqueness(agg, (0, 0)) == 0.0
        assert "single plane" in caplog.text
        assert np.isnan(uniqueness_map(agg)[0, 0])

    def test_respects_dynamic_range(self):
        agg = _from_summed([9.0, 14.0, 1.0])
        agg = AggregatedVolume(agg.summed, agg.path_min_sum, agg.start, np.full((1, 1), 2, np.int32), 3)
        assert uniqueness(agg, (0, 0)) == 5.0
        assert uniqueness_map(agg)[0, 0] == 5.0


class TestConfidence:
    def test_saturates_to_one(self):
        assert confidence_from_terms(0.0, 10.0, PARAMS) == 1.0
        assert confidence_from_terms(0.0, 500.0, PARAMS) == 1.0

    def test_decay_point(self):
        assert confidence_from_terms(80.0, 20.0, PARAMS) == pytest.approx(math.exp(-1), abs=1e-12)

    def test_uniqueness_point(self):
        assert confidence_from_terms(0.0, 9.0, PARAMS) == pytest.approx(math.exp(-1), abs=1e-12)

    def test_one_iff_both_conditions(self):
        rng = np.random.default_rng(0)
        up = np.r_[0.0, 1e-10, rng.uniform(0, 50, 200)]
        uu = np.r_[10.0, 10.0, rng.uniform(0, 20, 200)]
        c = confidence_from_terms(up, uu, PARAMS)
        np.testing.assert_array_equal(c == 1.0, (up <= 1e-9) & (uu >= 10.0))

    def test_single_plane_keeps_decay(self):
        assert confidence_from_terms(80.0, np.nan, PARAMS) == pytest.approx(math.exp(-1))

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0, 1e4), st.floats(0, 1e4), st.floats(0, 1e3), st.floats(0, 1e3))
    def test_range_and_monotonicity(self, up, dup, uu, duu):
        c = float(confidence_from_terms(up, uu, PARAMS))
        assert 0.0 <= c <= 1.0
        assert float(confidence_from_terms(up + dup, uu, PARAMS)) <= c
        assert float(confidence_from_terms(up, uu + duu, PARAMS)) >= c

    def test_map_in_unit_interval(self):
        for seed in range(5):
            c = confidence_map(_random_agg(seed), DEFAULT_CONFIDENCE["census"])
            assert np.all((c >= 0.0) & (c <= 1.0))

    def test_map_on_hand_example(self):
        agg = _from_paths([[3, 5], [6, 4]])
        assert confidence_map(agg, ConfidenceParams(phi=2.0, tau=0.0))[0, 0] == pytest.approx(math.exp(-1))
