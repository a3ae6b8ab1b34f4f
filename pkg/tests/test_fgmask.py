import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

import oracles
from mlod.errors import DegenerateBox, InvalidDepthRange, ShapeMismatch
from mlod.fgmask import (MaskConfig, apply_mask, build_sparse_depth_map, cell_medians, compute_mask,
                         crop_resize_depth_nearest, foreground_mask)
from mlod.geometry import box_corners_3d, project_box_to_image
from mlod.kitti_io import CalibrationSet
from mlod.synth import generate_proposals, scene_corners_depth, silhouette_mask_oracle

# camera frame == LIDAR frame, centred pinhole
CALIB = CalibrationSet(np.array([[100.0, 0, 50, 0], [0, 100.0, 40, 0], [0, 0, 1, 0]]))


class TestSparseDepth:
    def test_empty(self):
        assert not build_sparse_depth_map(np.zeros((0, 4)), CALIB, (100, 80)).any()

    def test_principal_point(self):
        d = build_sparse_depth_map(np.array([[0.0, 0.0, 10.0, 0.3]]), CALIB, (100, 80))
        assert d[40, 50] == 10.0 and np.count_nonzero(d) == 1

    def test_nearest_wins(self):
        pts = np.array([[0.0, 0.0, 8.0, 0], [0.0, 0.0, 5.0, 0], [0.001, 0.0, 8.0, 0]])
        d = build_sparse_depth_map(pts, CALIB, (100, 80))
        assert d[40, 50] == 5.0

    def test_behind_and_outside_dropped(self):
        pts = np.array([[0.0, 0.0, -10.0, 0], [100.0, 0.0, 10.0, 0], [0.0, 0.0, 0.0, 0]])
        assert not build_sparse_depth_map(pts, CALIB, (100, 80)).any()


class TestNearestCrop:
    def test_identity(self, rng):
        cfg = MaskConfig(k=3, n=2)
        dm = rng.uniform(0, 30, size=(20, 20))
        np.testing.assert_array_equal(crop_resize_depth_nearest(dm, (4, 5, 10, 11), cfg), dm[5:11, 4:10])

    def test_constant(self):
        dm = np.full((50, 60), 7.5)
        assert np.all(crop_resize_depth_nearest(dm, (3.3, 2.1, 40.7, 33.9)) == 7.5)

    def test_replication(self):
        dm = np.zeros((10, 10))
        dm[2:4, 6:8] = [[1, 2], [3, 4]]
        out = crop_resize_depth_nearest(dm, (6, 2, 8, 4), MaskConfig(k=2, n=2))
        np.testing.assert_array_equal(out, [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])

    @given(st.floats(0, 40), st.floats(0, 40), st.floats(0.5, 20), st.floats(0.5, 20))
    def test_values_subset(self, left, top, w, h):
        dm = np.random.default_rng(0).choice([0.0, 3.0, 9.5, 20.0], size=(64, 64))
        out = crop_resize_depth_nearest(dm, (left, top, left + w, top + h))
        assert out.shape == (28, 28)
        assert set(np.unique(out)) <= {0.0, 3.0, 9.5, 20.0}

    def test_degenerate(self):
        with pytest.raises(DegenerateBox):
            crop_resize_depth_nearest(np.zeros((5, 5)), (2, 2, 2, 4))


class TestMedians:
    def test_fixed_cells(self):
        cfg = MaskConfig(k=3, n=2)
        grid = np.zeros((6, 6))
        grid[0:2, 2:4] = [[3, 0], [5, 0]]
        grid[2:4, 4:6] = 7
        grid[4:6, 0:2] = [[1, 2], [3, 0]]
        m = cell_medians(grid, cfg)
        assert m[0, 0] == 0.0 and m[0, 1] == 4.0 and m[1, 2] == 7.0 and m[2, 0] == 2.0

    @given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
    def test_matches_brute_force(self, k, n, seed):
        rng = np.random.default_rng(seed)
        grid = np.where(rng.random((k * n, k * n)) < 0.6, 0.0, rng.uniform(0.1, 80, (k * n, k * n)))
        assert np.array_equal(cell_medians(grid, MaskConfig(k=k, n=n)), oracles.brute_cell_medians(grid, k, n))

    def test_scale_consistent(self, rng):
        vals = rng.uniform(1, 50, size=(7, 7))
        for n in (1, 2, 4, 8):
            grid = np.kron(vals, np.ones((n, n)))
            np.testing.assert_array_equal(cell_medians(grid, MaskConfig(n=n)), vals)

    def test_shape_checked(self):
        with pytest.raises(ShapeMismatch):
            cell_medians(np.zeros((27, 28)))


class TestComputeMask:
    def test_fixture_values(self):
        m = compute_mask(np.array([[7.5, 15.0, 0.0]]), 6.8, 9.7)
        np.testing.assert_array_equal(m, [[1, 0, 1]])

    def test_closed_boundaries(self):
        m = compute_mask(np.array([6.3, 10.2, 0.1, 6.2999, 10.2001, 0.1001]), 6.8, 9.7)
        np.testing.assert_array_equal(m, [1, 1, 1, 0, 0, 0])

    def test_huge_eps_all_ones(self, rng):
        m = compute_mask(rng.uniform(0, 100, (7, 7)), 10, 12, MaskConfig(eps1=1e6))
        assert m.all()

    def test_invalid_range(self):
        with pytest.raises(InvalidDepthRange):
            compute_mask(np.zeros((7, 7)), 5.0, 4.0)

    @given(arrays(np.float64, (7, 7), elements=st.floats(0, 40)), st.floats(0, 30), st.floats(0, 10),
           st.floats(0, 2), st.floats(0, 1))
    def test_matches_direct_evaluation(self, med, d_min, span, e1, e2):
        cfg = MaskConfig(eps1=e1, eps2=e2)
        assert np.array_equal(compute_mask(med, d_min, d_min + span, cfg),
                              oracles.brute_mask(med, d_min, d_min + span, e1, e2))

    @given(arrays(np.float64, (7, 7), elements=st.floats(0, 40)), st.floats(0, 1), st.floats(0, 1),
           st.floats(0, 2), st.floats(0, 2))
    def test_monotone_in_buffers(self, med, e1, e2, g1, g2):
        small = compute_mask(med, 8.0, 11.0, MaskConfig(eps1=e1, eps2=e2))
        large = compute_mask(med, 8.0, 11.0, MaskConfig(eps1=e1 + g1, eps2=e2 + g2))
        assert np.all(large >= small)


class TestApplyMask:
    def test_cases(self, rng):
        f = rng.normal(size=(7, 7, 3))
        np.testing.assert_array_equal(apply_mask(f, np.ones((7, 7))), f)
        assert not apply_mask(f, np.zeros((7, 7))).any()
        m = np.ones((7, 7), dtype=np.uint8)
        m[2, 5] = 0
        out = apply_mask(f, m)
        assert np.all(out[2, 5] == 0)
        out[2, 5] = f[2, 5]
        np.testing.assert_array_equal(out, f)

    def test_shape(self):
        with pytest.raises(ShapeMismatch):
            apply_mask(np.zeros((7, 6, 3)), np.ones((7, 7)))


def _cell_surfaces(scene, bbox, cfg):
    """Surface id of every sample in each cell; -9 where the pixel touches a silhouette edge.

    A LIDAR return can land anywhere inside its pixel, so only pixels whose
    3 x 3 neighbourhood shows a single surface are unambiguous."""
    ids = scene.hit_ids.astype(np.float64)
    edge = ndimage.maximum_filter(ids, size=3) != ndimage.minimum_filter(ids, size=3)
    ids = crop_resize_depth_nearest(np.where(edge, -9.0, ids), bbox, cfg)
    k, n = cfg.k, cfg.n
    return ids.reshape(k, n, k, n).transpose(0, 2, 1, 3).reshape(k, k, n * n)


def test_mask_matches_silhouette_where_evidence_exists(small_scene):
    """Cells covered by the interior of a single box surface whose depth span lies
    wholly inside or wholly outside the widened depth interval agree with the
    dense-depth oracle."""
    scene = small_scene
    cfg = MaskConfig()
    depth = build_sparse_depth_map(scene.cloud, scene.calib, scene.image_size)
    surfaces = scene.surfaces
    props = generate_proposals(scene, 4, "perturb", seed=5)
    checked = 0
    for box in props.boxes:
        proj = project_box_to_image(box, scene.calib, scene.image_size)
        sparse_med = cell_medians(crop_resize_depth_nearest(depth, proj.bbox, cfg), cfg)
        mask = foreground_mask(depth, proj.bbox, proj.d_min, proj.d_max, cfg)
        oracle = silhouette_mask_oracle(scene, box, cfg)
        cells = _cell_surfaces(scene, proj.bbox, cfg)
        lo, hi = proj.d_min - cfg.eps1, proj.d_max + cfg.eps1
        for i in range(cfg.k):
            for j in range(cfg.k):
                if sparse_med[i, j] == 0:
                    assert mask[i, j] == 1   # no evidence -> preserved
                    continue
                sid = np.unique(cells[i, j])
                if len(sid) != 1 or sid[0] < 0:
                    continue
                d = scene_corners_depth(surfaces[int(sid[0])], scene.calib)
                if lo <= d.min() and d.max() <= hi or d.max() < lo or d.min() > hi:
                    assert mask[i, j] == oracle[i, j]
                    checked += 1
    assert checked > 50


def test_oracle_object_filling_crop(small_scene):
    scene = small_scene
    gt = scene.gts[0].box
    proj = project_box_to_image(gt, scene.calib, scene.image_size)
    l, t, r, b = proj.bbox
    # a thin box inside the gt silhouette: its crop sees only the gt surface at its depth
    cx, cy = 0.5 * (l + r), 0.5 * (t + b)
    inner = scene.calib.rect_to_lidar(scene.calib.backproject(np.array([[cx, cy]]), proj.d_min)[0])
    probe = type(gt)(inner, (0.3, 0.3, 0.3), 0.0)
    if np.any(scene_corners_depth(probe, scene.calib) <= 0):
        pytest.skip("probe behind camera")
    oracle = silhouette_mask_oracle(scene, probe, MaskConfig(eps1=3.0))
    assert oracle.all()


def test_oracle_background_only(small_scene):
    scene = small_scene
    # 1 m cube at 2 m range, 1 m above the ground: everything behind it is far away
    probe = type(scene.gts[0].box)((2.0, 0.0, -0.5), (1.0, 1.0, 1.0), 0.0)
    assert not silhouette_mask_oracle(scene, probe).any()
