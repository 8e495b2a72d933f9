import numpy as np
import pytest
from scipy import ndimage

from guidedmvs.guidance import GuidanceParams, SparseDepthMap, downsample_hints
from guidedmvs.inference import (
    Cascade,
    PipelineConfig,
    StageConfig,
    box_smooth,
    default_stages,
    plane_spacing,
    regress_depth,
    run_coarse_to_fine,
    run_single_stage,
    single_stage_config,
)
from guidedmvs.sweep import CostVolume, make_hypotheses
from guidedmvs.synthetic import Rect, generate_scene, plane_scene, sample_hints, standard_scene


def uniform_volume(costs, values):
    H, W, D = costs.shape
    depths = np.broadcast_to(np.asarray(values, float), (H, W, D))
    return CostVolume(costs, np.full((H, W, D), 3), depths)


@pytest.fixture(scope="module")
def scene():
    return generate_scene(standard_scene(5), 5)


class TestRegress:
    def test_unambiguous_minimum(self):
        costs = np.full((5, 5, 6), 100.0)
        costs[..., 3] = 0.0
        vals = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
        dm = regress_depth(uniform_volume(costs, vals))
        assert np.all(dm.depth == 4.0) and np.allclose(dm.confidence, 1.0)

    def test_constant_volume_ties_to_lowest(self):
        dm = regress_depth(uniform_volume(np.ones((4, 4, 5)), [1, 2, 3, 4, 5]))
        assert np.all(dm.depth == 1.0) and np.all(dm.confidence == 0)

    def test_parabolic_vertex_on_irregular_grid(self):
        vals = np.array([2.0, 2.7, 3.1, 3.9, 4.4, 5.6])
        z_star = 3.37
        costs = np.broadcast_to(0.5 + 2.0 * (vals - z_star) ** 2, (3, 3, 6)).copy()
        dm = regress_depth(uniform_volume(costs, vals))
        assert np.allclose(dm.depth, z_star, atol=1e-6)

    def test_refinement_clamped_to_neighbours(self, rng):
        costs = rng.uniform(0, 1, (6, 6, 7))
        vals = np.linspace(1, 4, 7)
        dm = regress_depth(uniform_volume(costs, vals))
        assert np.all(dm.depth >= 1.0) and np.all(dm.depth <= 4.0)

    def test_box_filter_is_applied(self):
        costs = np.full((5, 5, 3), 1.0)
        costs[2, 2, 0] = 0.5  # the raw argmin here is index 0; the neighbours favour index 2
        costs[:, :, 2] = 0.9
        assert np.argmin(costs[2, 2]) == 0
        dm = regress_depth(uniform_volume(costs, [1.0, 2.0, 3.0]))
        smoothed = ndimage.uniform_filter(costs, size=(3, 3, 1), mode="nearest")
        assert dm.depth[2, 2] == [1.0, 2.0, 3.0][int(np.argmin(smoothed[2, 2]))] == 3.0

    def test_box_smooth_matches_loop_and_is_local(self, rng):
        costs = rng.uniform(0, 1, (7, 9, 2))
        out = box_smooth(costs)
        for y in range(7):
            for x in range(9):
                taps = [costs[min(max(y + dy, 0), 6), min(max(x + dx, 0), 8)] for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
                assert np.allclose(out[y, x], np.mean(taps, axis=0), rtol=0, atol=1e-12)
        bumped = costs.copy()
        bumped[3, 1, 0] += 1e6
        diff = box_smooth(bumped) != out
        assert not diff[:, 3:].any() and not diff[:2].any() and not diff[5:].any()

    def test_validity_from_support(self):
        costs = np.ones((3, 3, 4))
        costs[..., 1] = 0.0
        support = np.full((3, 3, 4), 3)
        support[0, 0, 1] = 1
        vol = CostVolume(costs, support, np.broadcast_to(np.arange(1.0, 5.0), (3, 3, 4)))
        dm = regress_depth(vol)
        assert not dm.validity[0, 0] and dm.validity[1, 1]


class TestConfig:
    def test_default_stages(self):
        st = default_stages()
        assert [s.scale for s in st] == [0.25, 0.5, 1.0]
        assert [s.num_hypotheses for s in st] == [64, 16, 8]
        assert [s.half_width for s in st] == [None, 4.0, 2.0]

    def test_scales_must_increase(self):
        with pytest.raises(ValueError):
            PipelineConfig((StageConfig(0.5, 8), StageConfig(0.5, 8, 2.0)))

    def test_first_stage_full_range(self):
        with pytest.raises(ValueError):
            PipelineConfig((StageConfig(0.5, 8, 2.0),))

    def test_plane_spacing(self):
        assert plane_spacing((2.0, 8.0), StageConfig(1.0, 4)) == 2.0


class TestSingleStage:
    def test_no_hints_equals_empty_mask(self, scene):
        views, _ = scene
        cfg = single_stage_config(32, 0.5, depth_range=views.depth_range)
        a = run_single_stage(views, None, cfg)
        b = run_single_stage(views, SparseDepthMap.empty(160, 128), cfg)
        assert np.array_equal(a.depth, b.depth) and np.array_equal(a.confidence, b.confidence)

    def test_dense_grid_hints_pin_depth(self):
        cfg_scene = plane_scene(8.0, rects=(Rect((0.0, 0.0, 9.0), (0.15, -0.1, -1.0)),))
        views, gt = generate_scene(cfg_scene, 2)
        D = 48
        cfg = single_stage_config(D, 1.0, "linear", None, views.depth_range)
        hyps = make_hypotheses(*views.depth_range, D, "linear").values
        c = plane_spacing(views.depth_range, cfg.stages[0])
        full = sample_hints(gt, 0, 1.0, seed=0)
        snapped = hyps[np.abs(full.depth[..., None] - hyps).argmin(axis=-1)]
        hints = SparseDepthMap(np.where(full.mask, snapped, 0.0), full.mask)
        cfg = single_stage_config(D, 1.0, "linear", GuidanceParams(10.0, c), views.depth_range)
        est = run_single_stage(views, hints, cfg)
        err = np.abs(est.depth - hints.depth)[hints.mask]
        assert np.mean(err > 1.0) == 0.0

    def test_three_percent_hints_beat_unguided(self, scene):
        views, gt = scene
        cfg = single_stage_config(64, 1.0, "linear", None, views.depth_range)
        c = plane_spacing(views.depth_range, cfg.stages[0])
        cfg = single_stage_config(64, 1.0, "linear", GuidanceParams(10.0, c), views.depth_range)
        hints = sample_hints(gt, 0, 0.03, seed=5)
        g = gt.depths[0]
        e_u = np.mean(~(np.abs(run_single_stage(views, None, cfg).depth - g.depth)[g.validity] <= 1))
        e_g = np.mean(~(np.abs(run_single_stage(views, hints, cfg).depth - g.depth)[g.validity] <= 1))
        assert e_g < e_u

    def test_guidance_is_local(self, scene):
        views, gt = scene
        cfg = single_stage_config(24, 0.5, depth_range=views.depth_range, guidance=GuidanceParams(10.0, 0.3))
        hints = sample_hints(gt, 0, 0.01, seed=1)
        low = downsample_hints(hints, 0.5)
        a = run_single_stage(views, None, cfg)
        b = run_single_stage(views, hints, cfg)
        # the 3x3 box filter spreads each hint one low-res pixel; the bilinear upsample reads
        # low-res taps floor(y/2) and ceil(y/2)
        near = ndimage.binary_dilation(low.mask, structure=np.ones((3, 3), bool))
        ys, xs = np.mgrid[0:128, 0:160]
        near_full = np.zeros((128, 160), bool)
        for ty in (ys // 2, np.minimum((ys + 1) // 2, 63)):
            for tx in (xs // 2, np.minimum((xs + 1) // 2, 79)):
                near_full |= near[ty, tx]
        changed = a.depth != b.depth
        assert changed.any() and not changed[~near_full].any()


class TestCoarseToFine:
    def test_all_unguided_matches_hintless_run(self, scene):
        views, gt = scene
        cfg = PipelineConfig(depth_range=views.depth_range).with_guidance([False] * 3)
        hints = sample_hints(gt, 0, 0.03, seed=0)
        a = run_coarse_to_fine(views, hints, cfg)
        b = run_coarse_to_fine(views, None, PipelineConfig(depth_range=views.depth_range))
        assert np.array_equal(a.depth, b.depth)

    def test_single_stage_list_equals_single_stage(self, scene):
        views, _ = scene
        cfg = single_stage_config(16, 0.5, depth_range=views.depth_range)
        a = run_coarse_to_fine(views, None, cfg)
        b = run_single_stage(views, None, cfg)
        assert np.array_equal(a.depth, b.depth)

    def test_depth_inside_final_hypothesis_range(self, scene):
        views, gt = scene
        cfg = PipelineConfig(depth_range=views.depth_range)
        cascade = Cascade(views, cfg)
        results = cascade.run(sample_hints(gt, 0, 0.03, seed=2))
        last = results[-1]
        d = last.depth.depth
        assert np.all(d >= last.volume.depths[..., 0]) and np.all(d <= last.volume.depths[..., -1])

    def test_output_resolution(self, scene):
        views, _ = scene
        stages = (StageConfig(0.25, 32), StageConfig(0.5, 8, 3.0))
        out = run_coarse_to_fine(views, None, PipelineConfig(stages, depth_range=views.depth_range))
        assert out.depth.shape == (128, 160)

    def test_deterministic_across_runs_and_threads(self, scene):
        views, gt = scene
        hints = sample_hints(gt, 0, 0.03, seed=0)
        a = run_coarse_to_fine(views, hints, PipelineConfig(depth_range=views.depth_range, workers=1))
        b = run_coarse_to_fine(views, hints, PipelineConfig(depth_range=views.depth_range, workers=1))
        c = run_coarse_to_fine(views, hints, PipelineConfig(depth_range=views.depth_range, workers=3))
        assert np.array_equal(a.depth, b.depth) and np.array_equal(a.depth, c.depth)
        assert np.array_equal(a.confidence, c.confidence)

    def test_missing_range(self, scene):
        views, _ = scene
        from guidedmvs.geometry import ViewSet

        bare = ViewSet(views.reference, views.sources)
        with pytest.raises(ValueError):
            run_coarse_to_fine(bare, None, PipelineConfig())
