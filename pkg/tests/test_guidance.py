import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from guidedmvs.errors import NonIntegerResolution, NonPositiveHint, ResolutionMismatch
from guidedmvs.guidance import (
    GuidanceParams,
    SparseDepthMap,
    downsample_hints,
    modulate_stage,
    modulate_volume,
    modulation_factor,
)
from guidedmvs.sweep import CostVolume, make_hypotheses


def volume(rng, H=6, W=7, D=9, z=(2.0, 6.0), costs=None):
    hyps = make_hypotheses(z[0], z[1], D, "linear")
    c = rng.uniform(0.1, 2.0, size=(H, W, D)) if costs is None else costs
    depths = np.broadcast_to(hyps.values, (H, W, D))
    return CostVolume(c, np.full((H, W, D), 3), depths, hyps)


def one_hint(H, W, y, x, z):
    d = np.zeros((H, W))
    m = np.zeros((H, W), bool)
    d[y, x], m[y, x] = z, True
    return SparseDepthMap(d, m)


class TestSparseDepthMap:
    def test_density(self):
        h = one_hint(4, 5, 1, 1, 3.0)
        assert h.count == 1 and h.density == 1 / 20

    def test_non_positive_rejected_on_use(self, rng):
        h = one_hint(6, 7, 1, 1, -1.0)
        with pytest.raises(NonPositiveHint):
            modulate_volume(volume(rng), h, GuidanceParams())

    def test_off_mask_zeroed(self):
        h = SparseDepthMap(np.full((2, 2), 5.0), np.array([[True, False], [False, False]]))
        assert h.depth[1, 1] == 0 and h.depth[0, 0] == 5


class TestParams:
    def test_defaults(self):
        p = GuidanceParams()
        assert (p.k, p.c) == (10.0, 0.01)

    @pytest.mark.parametrize("k,c", [(1.0, 0.1), (10.0, 0.0), (0.5, 1.0)])
    def test_invalid(self, k, c):
        with pytest.raises(ValueError):
            GuidanceParams(k, c)


class TestModulate:
    def test_empty_mask_bit_identical(self, rng):
        v = volume(rng)
        out = modulate_volume(v, SparseDepthMap.empty(7, 6), GuidanceParams())
        assert np.array_equal(out.costs, v.costs) and out.costs is not v.costs

    def test_zero_at_hint(self, rng):
        v = volume(rng)
        z = v.depths[0, 0, 4]
        out = modulate_volume(v, one_hint(6, 7, 2, 3, z), GuidanceParams())
        assert out.costs[2, 3, 4] == 0.0

    def test_scalar_example(self):
        f = modulation_factor(1.05, 1.0, 1.0, 10.0, 0.01)
        assert math.isclose(f, 10 * (1 - math.exp(-12.5)), rel_tol=1e-12)
        assert abs(f - 9.99996) < 1e-5

    def test_only_hinted_pixel_changes(self, rng):
        v = volume(rng)
        out = modulate_volume(v, one_hint(6, 7, 2, 3, 4.1), GuidanceParams(c=0.3))
        diff = np.any(out.costs != v.costs, axis=-1)
        assert diff[2, 3] and diff.sum() == 1

    def test_input_not_mutated(self, rng):
        v = volume(rng)
        before = v.costs.copy()
        modulate_volume(v, one_hint(6, 7, 0, 0, 3.0), GuidanceParams())
        assert np.array_equal(v.costs, before)

    def test_resolution_mismatch(self, rng):
        with pytest.raises(ResolutionMismatch):
            modulate_volume(volume(rng), SparseDepthMap.empty(3, 3), GuidanceParams())

    def test_sentinel_cell_zeroed_at_hint(self, rng):
        v = volume(rng, costs=np.full((6, 7, 9), 1e6))
        z = v.depths[0, 0, 2]
        out = modulate_volume(v, one_hint(6, 7, 1, 1, z), GuidanceParams())
        assert out.costs[1, 1, 2] == 0 and np.argmin(out.costs[1, 1]) == 2

    def test_twice_is_not_once(self, rng):
        v = volume(rng)
        h = one_hint(6, 7, 2, 2, 4.2)
        p = GuidanceParams(c=0.5)
        once = modulate_volume(v, h, p)
        twice = modulate_volume(once, h, p)
        off = np.abs(v.depths[2, 2] - 4.2) > 0
        assert np.all(twice.costs[2, 2][off] != once.costs[2, 2][off])

    def test_outside_range_switch(self, rng):
        v = volume(rng)
        h = one_hint(6, 7, 1, 1, 50.0)
        on = modulate_volume(v, h, GuidanceParams(c=0.1))
        off = modulate_volume(v, h, GuidanceParams(c=0.1, modulate_outside_range=False))
        assert np.allclose(on.costs[1, 1], 10 * v.costs[1, 1])
        assert np.array_equal(off.costs, v.costs)

    @given(
        z_star=st.floats(0.5, 10), k=st.floats(1.01, 100), c=st.floats(1e-3, 5),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_bounds_property(self, z_star, k, c, seed):
        rng = np.random.default_rng(seed)
        v = volume(rng, H=3, W=3, z=(1.0, 9.0))
        out = modulate_volume(v, one_hint(3, 3, 1, 1, z_star), GuidanceParams(k, c))
        assert np.all(out.costs >= 0)
        assert np.all(out.costs <= k * v.costs * (1 + 1e-12))

    @given(seed=st.integers(0, 2**32 - 1), j=st.integers(0, 15))
    def test_argmin_pinned_at_hint(self, seed, j):
        rng = np.random.default_rng(seed)
        v = volume(rng, H=2, W=2, D=16, costs=rng.uniform(1e-6, 1.0, size=(2, 2, 16)))
        z = v.depths[0, 0, j]
        out = modulate_volume(v, one_hint(2, 2, 1, 0, z), GuidanceParams(rng.uniform(1.1, 50), rng.uniform(1e-3, 2)))
        assert np.argmin(out.costs[1, 0]) == j

    def test_locality_under_permutation(self, rng):
        v = volume(rng, H=4, W=4)
        h = one_hint(4, 4, 0, 0, 3.3)
        p = GuidanceParams(c=0.2)
        perm = rng.permutation(16)
        perm = np.r_[0, perm[perm != 0]]  # keep the hinted pixel in place
        flat = v.costs.reshape(16, -1)[perm].reshape(v.costs.shape)
        shuffled = CostVolume(flat, v.support, v.depths, v.hypotheses)
        a = modulate_volume(v, h, p).costs.reshape(16, -1)[perm]
        b = modulate_volume(shuffled, h, p).costs.reshape(16, -1)
        assert np.array_equal(a, b)


class TestDownsample:
    def test_identity(self):
        h = one_hint(8, 8, 3, 3, 2.0)
        assert downsample_hints(h, 1.0) is h

    def test_dense(self):
        d = np.arange(1, 65, dtype=float).reshape(8, 8)
        h = downsample_hints(SparseDepthMap(d, np.ones((8, 8), bool)), 0.5)
        assert h.mask.all() and np.array_equal(h.depth, d[::2, ::2])

    def test_odd_pixel_hint_vanishes(self):
        h = downsample_hints(one_hint(16, 16, 7, 7, 2.0), 0.5)
        assert h.count == 0

    def test_even_pixel_hint_survives(self):
        h = downsample_hints(one_hint(16, 16, 6, 8, 2.0), 0.5)
        assert h.count == 1 and h.mask[3, 4] and h.depth[3, 4] == 2.0

    def test_non_integer(self):
        with pytest.raises(NonIntegerResolution):
            downsample_hints(one_hint(15, 16, 7, 7, 2.0), 0.5)

    def test_nearest_position_rule(self):
        # low-res pixel i reads full-res floor(i / s + 0.5)
        d = np.arange(1, 17, dtype=float)[None, :].repeat(4, axis=0)
        h = downsample_hints(SparseDepthMap(d, np.ones_like(d, bool)), 0.25)
        assert list(h.depth[0]) == [1.0, 5.0, 9.0, 13.0]


class TestStage:
    def test_full_scale_equals_volume_modulation(self, rng):
        v = volume(rng)
        h = one_hint(6, 7, 2, 2, 3.0)
        a = modulate_stage(v, h, 1.0, GuidanceParams())
        b = modulate_volume(v, h, GuidanceParams())
        assert np.array_equal(a.costs, b.costs)

    def test_no_surviving_hint_keeps_volume(self, rng):
        v = volume(rng, H=4, W=4)
        out = modulate_stage(v, one_hint(8, 8, 7, 7, 3.0), 0.5, GuidanceParams())
        assert np.array_equal(out.costs, v.costs)

    def test_low_res_hint_on_grid_gives_zero(self, rng):
        v = volume(rng, H=4, W=4)
        z = v.depths[0, 0, 5]
        out = modulate_stage(v, one_hint(8, 8, 2, 4, z), 0.5, GuidanceParams())
        assert out.costs[1, 2, 5] == 0
