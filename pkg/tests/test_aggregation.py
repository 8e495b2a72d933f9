import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from guidedmvs.aggregation import (
    FilterParams,
    HintPointSet,
    aggregate_hints,
    filter_hints,
    from_sparse_map,
    merge_hints,
    outlier_mask,
    project_hints,
    to_sparse_map,
)
from guidedmvs.geometry import Camera, Extrinsics, Intrinsics, backproject, project, transfer_points
from guidedmvs.guidance import SparseDepthMap
from guidedmvs.synthetic import generate_scene, sample_all_hints, standard_scene, two_plane_scene

from oracles import filter_oracle

K = Intrinsics(60.0, 60.0, 31.5, 23.5, 64, 48)


def random_hints(rng, H=48, W=64, n=40, lo=3.0, hi=9.0):
    d = np.zeros((H, W))
    m = np.zeros((H, W), bool)
    idx = rng.choice(H * W, n, replace=False)
    m.flat[idx] = True
    d.flat[idx] = rng.uniform(lo, hi, n)
    return SparseDepthMap(d, m)


def point_set(x, y, d, theta=None, phi=None, W=64, H=48):
    x, y, d = (np.asarray(a, dtype=float) for a in (x, y, d))
    theta = np.zeros_like(d) if theta is None else np.asarray(theta, float)
    phi = np.zeros_like(d) if phi is None else np.asarray(phi, float)
    return HintPointSet(x, y, d, theta, phi, W, H)


class TestProject:
    def test_same_camera_identity(self, rng):
        h = random_hints(rng)
        cam = Camera(K)
        ps = project_hints(h, cam, cam)
        back = to_sparse_map(ps)
        assert np.array_equal(back.mask, h.mask) and np.allclose(back.depth, h.depth)
        assert ps.dropped == 0

    def test_axial_translation(self):
        h = SparseDepthMap(np.zeros((48, 64)), np.zeros((48, 64), bool))
        d = h.depth.copy()
        m = h.mask.copy()
        # principal point rounds to pixel (32, 24); put the hint on the optical axis instead
        K2 = Intrinsics(60.0, 60.0, 32.0, 24.0, 64, 48)
        d[24, 32], m[24, 32] = 5.0, True
        ref = Camera(K2, Extrinsics(np.eye(3), [0.0, 0.0, 1.5]))
        ps = project_hints(SparseDepthMap(d, m), Camera(K2), ref)
        assert np.allclose([ps.x[0], ps.y[0], ps.depth[0]], [32.0, 24.0, 6.5])

    def test_lateral_rig_matches_composition_oracle(self, rng):
        src = Camera(K, Extrinsics(np.eye(3), [-0.4, 0.0, 0.0]))
        ref = Camera(K)
        h = random_hints(rng, n=20, lo=5.0, hi=8.0)
        ps = project_hints(h, src, ref)
        ys, xs = np.nonzero(h.mask)
        world = backproject(np.stack([xs, ys], -1).astype(float), h.depth[ys, xs], src)
        q, z = project(world, ref)
        inside = (q[:, 0] >= -0.5) & (q[:, 0] < 63.5) & (q[:, 1] >= -0.5) & (q[:, 1] < 47.5)
        assert len(ps) == inside.sum() and ps.dropped == 20 - inside.sum()
        assert np.allclose(ps.x, q[inside, 0], atol=1e-6) and np.allclose(ps.depth, z[inside], rtol=1e-6)

    def test_transfer_back_recovers_source(self, rng):
        src = Camera(K, Extrinsics(np.eye(3), [-0.3, 0.1, 0.2]))
        ref = Camera(K)
        h = random_hints(rng, n=60)
        ps = project_hints(h, src, ref)
        qs, ds, ok = transfer_points(np.stack([ps.x, ps.y], -1), ps.depth, ref, src)
        assert ok.all()
        xi, yi = np.rint(qs[:, 0]).astype(int), np.rint(qs[:, 1]).astype(int)
        assert np.allclose(qs, np.stack([xi, yi], -1), atol=1e-6)
        assert h.mask[yi, xi].all() and np.allclose(ds, h.depth[yi, xi], rtol=1e-6)

    def test_angles_follow_definition(self, rng):
        cam = Camera(K)
        h = random_hints(rng, n=10)
        ps = from_sparse_map(h, cam)
        xs = (ps.x - K.cx) / K.fx * ps.depth
        ys = (ps.y - K.cy) / K.fy * ps.depth
        assert np.allclose(ps.theta, np.arctan2(xs, ps.depth))
        assert np.allclose(ps.phi, np.arctan2(ys, np.hypot(xs, ps.depth)))


class TestMerge:
    def test_disjoint_union(self):
        ref = SparseDepthMap.empty(64, 48)
        ref_d = ref.depth.copy()
        ref_m = ref.mask.copy()
        ref_d[1, 1], ref_m[1, 1] = 4.0, True
        a = point_set([10.2, 20.0], [5.0, 6.4], [3.0, 7.0])
        m = merge_hints([a], SparseDepthMap(ref_d, ref_m), Camera(K))
        out = to_sparse_map(m)
        assert out.count == 3 and out.depth[5, 10] == 3.0 and out.depth[6, 20] == 7.0

    def test_min_depth_wins(self):
        a = point_set([10.2], [5.0], [5.0])
        b = point_set([9.8], [4.9], [2.0])
        m = merge_hints([a, b], SparseDepthMap.empty(64, 48), Camera(K))
        assert len(m) == 1 and m.depth[0] == 2.0 and m.stats["collisions"] == 1

    def test_reference_hint_kept_verbatim(self):
        d = np.zeros((48, 64))
        mk = np.zeros((48, 64), bool)
        d[5, 10], mk[5, 10] = 9.0, True
        m = merge_hints([point_set([10.1], [5.1], [2.0])], SparseDepthMap(d, mk), Camera(K))
        assert len(m) == 1 and m.depth[0] == 9.0

    def test_order_invariance(self, rng):
        sets = []
        for _ in range(4):
            n = 200
            sets.append(point_set(rng.uniform(-0.5, 63.4, n), rng.uniform(-0.5, 47.4, n), rng.uniform(1, 9, n),
                                  rng.normal(size=n), rng.normal(size=n)))
        ref = random_hints(rng)
        a = merge_hints(sets, ref, Camera(K))
        b = merge_hints(sets[::-1], ref, Camera(K))
        for f in ("x", "y", "depth", "theta", "phi"):
            assert np.array_equal(getattr(a, f), getattr(b, f))

    def test_one_entry_per_pixel(self, rng):
        n = 500
        s = point_set(rng.uniform(-0.5, 63.4, n), rng.uniform(-0.5, 47.4, n), rng.uniform(1, 9, n))
        m = merge_hints([s], random_hints(rng), Camera(K))
        keys = m.y * 64 + m.x
        assert np.unique(keys).size == keys.size


class TestFilter:
    def test_isolated_point_kept(self):
        ps = point_set([10, 30], [10, 30], [5.0, 50.0])
        assert len(filter_hints(ps, FilterParams())) == 2

    def test_depth_gap_removes_far_point(self):
        ps = point_set([10, 11], [10, 10], [5.0, 20.0], theta=[0.0, 0.1])
        out = filter_hints(ps, FilterParams())
        assert len(out) == 1 and out.depth[0] == 5.0 and out.stats["removed"] == 1

    def test_angular_inversion(self):
        # x grows but theta decreases: both points see an inversion
        ps = point_set([10, 11], [10, 10], [5.0, 5.0], theta=[0.2, 0.1])
        assert outlier_mask(ps, FilterParams()).all()

    def test_all_rule_needs_both_axes(self):
        ps = point_set([10, 11], [10, 10], [5.0, 5.0], theta=[0.2, 0.1])
        assert not outlier_mask(ps, FilterParams(angle_rule="all")).any()

    def test_no_cascade(self):
        # a removes b, b would remove c, but c only neighbours b: decisions use the unfiltered set
        ps = point_set([10, 12, 14], [10, 10, 10], [5.0, 10.0, 15.0], theta=[0.0, 0.1, 0.2])
        out = filter_hints(ps, FilterParams(radius=2))
        assert list(out.depth) == [5.0]

    @given(seed=st.integers(0, 2**32 - 1), rule=st.sampled_from(["any", "all"]), radius=st.integers(1, 3))
    def test_matches_pairwise_oracle(self, seed, rule, radius):
        rng = np.random.default_rng(seed)
        n = 60
        flat = rng.choice(20 * 16, n, replace=False)
        x, y = flat % 20, flat // 20
        d = rng.uniform(1, 12, n)
        th, ph = rng.normal(size=n), rng.normal(size=n)
        ps = point_set(x, y, d, th, ph, W=20, H=16)
        mask = outlier_mask(ps, FilterParams(3.0, radius, rule))
        if rule == "any":
            expected = filter_oracle(x, y, d, th, ph, 3.0, radius)
        else:
            expected = _oracle_all(x, y, d, th, ph, 3.0, radius)
        assert set(np.flatnonzero(mask)) == expected
        out = filter_hints(ps, FilterParams(3.0, radius, rule))
        assert len(out) == n - len(expected)

    @given(seed=st.integers(0, 2**32 - 1), z=st.floats(2, 30))
    def test_single_plane_never_filtered(self, seed, z):
        rng = np.random.default_rng(seed)
        ref = Camera(K)
        srcs = [Camera(K, Extrinsics(np.eye(3), rng.normal(size=3) * [0.5, 0.5, 0.1])) for _ in range(3)]
        hints = []
        for _ in range(4):
            m = rng.random((48, 64)) < 0.2
            hints.append(SparseDepthMap(np.where(m, z, 0.0), m))
        sets = [project_hints(h, c, ref) for h, c in zip(hints[1:], srcs)]
        merged = merge_hints(sets, hints[0], ref)
        assert not outlier_mask(merged, FilterParams()).any()

    def test_two_plane_intruders_removed(self):
        cfg = two_plane_scene(3)
        _, gt = generate_scene(cfg, 3)
        hints = sample_all_hints(gt, 0.05, seed=3)
        sets = [project_hints(h, c, gt.cameras[0]) for h, c in zip(hints[1:], gt.cameras[1:])]
        merged = merge_hints(sets, hints[0], gt.cameras[0])
        gtd = gt.depths[0].depth[merged.y.astype(int), merged.x.astype(int)]
        intruders = merged.depth > gtd + 3
        assert intruders.sum() > 5
        bad = outlier_mask(merged, FilterParams())
        assert bad[intruders].mean() >= 0.8


def _oracle_all(xs, ys, ds, th, ph, eps, radius):
    removed = set()
    for i in range(len(xs)):
        for j in range(len(xs)):
            if i == j or max(abs(xs[i] - xs[j]), abs(ys[i] - ys[j])) > radius:
                continue
            a = (xs[i] - xs[j]) * (th[i] - th[j]) < 0
            b = (ys[i] - ys[j]) * (ph[i] - ph[j]) < 0
            if (a and b) or ds[i] > ds[j] + eps:
                removed.add(i)
                break
    return removed


class TestRaster:
    def test_empty(self):
        out = to_sparse_map(point_set([], [], []))
        assert not out.mask.any()

    def test_rounding(self):
        out = to_sparse_map(point_set([10.4], [20.6], [3.0]))
        assert out.count == 1 and out.mask[21, 10]

    def test_round_trip(self, rng):
        h = random_hints(rng, n=100)
        back = to_sparse_map(from_sparse_map(h, Camera(K)))
        assert np.array_equal(back.mask, h.mask) and np.array_equal(back.depth, h.depth)


class TestAggregate:
    def test_modes(self, rng):
        cams = [Camera(K), Camera(K, Extrinsics(np.eye(3), [-0.3, 0, 0]))]
        hints = [random_hints(rng), random_hints(rng)]
        assert aggregate_hints(hints, cams, "unguided")[0] is None
        assert aggregate_hints(hints, cams, "g")[0] is hints[0]
        mvg, st_m = aggregate_hints(hints, cams, "mvg")
        fmvg, st_f = aggregate_hints(hints, cams, "fmvg")
        assert mvg.count >= hints[0].count and fmvg.count <= mvg.count
        assert "density_filtered" in st_f and "density_merged" in st_m
        assert np.all(fmvg.mask <= mvg.mask)

    def test_unknown_mode(self, rng):
        with pytest.raises(ValueError):
            aggregate_hints([random_hints(rng)], [Camera(K)], "dense")

    def test_density_after_five_view_aggregation(self):
        dens = []
        for seed in range(3):
            _, gt = generate_scene(standard_scene(seed), seed)
            hints = sample_all_hints(gt, 0.03, seed=seed)
            _, stats = aggregate_hints(hints, gt.cameras, "mvg")
            dens.append(stats["density_merged"])
        assert 0.10 <= np.mean(dens) <= 0.15
