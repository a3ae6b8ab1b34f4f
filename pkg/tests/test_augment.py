import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mlod.augment import (PcaBasis, draw_alphas, fit_pca_basis, flip_box, flip_calibration, flip_label,
                          flip_plane, flip_scene, pca_jitter)
from mlod.geometry import OrientedBox3D, bev_iou, box_corners_3d, project_box_to_image
from mlod.kitti_io import box_to_label, label_to_box
from mlod.labeling import GroundTruth, assign_labels
from mlod.synth import generate_proposals
from test_kitti_io import KITTI_CALIB

box_st = st.builds(
    OrientedBox3D,
    center=st.tuples(st.floats(5, 50), st.floats(-15, 15), st.floats(-1.5, 0.5)),
    dims=st.tuples(st.floats(0.4, 5), st.floats(0.4, 3), st.floats(0.4, 2.5)),
    yaw=st.floats(-math.pi, math.pi),
)


class TestFlip:
    def test_involution_bitwise(self, small_scene):
        s = small_scene
        boxes = [g.box for g in s.gts]
        once = flip_scene(s.cloud, s.image, s.calib, boxes)
        twice = flip_scene(once.cloud, once.image, once.calib, once.boxes)
        assert np.array_equal(twice.cloud, s.cloud)
        assert np.array_equal(twice.image, s.image)
        assert twice.boxes == boxes
        np.testing.assert_allclose(twice.calib.P2, s.calib.P2, atol=1e-9)
        np.testing.assert_allclose(twice.calib.Tr, s.calib.Tr, atol=1e-12)
        assert not np.array_equal(once.image, s.image)

    def test_cloud_lateral_negated(self, small_scene):
        f = flip_scene(small_scene.cloud, small_scene.image, small_scene.calib, []).cloud
        np.testing.assert_array_equal(f[:, 1], -small_scene.cloud[:, 1])
        np.testing.assert_array_equal(f[:, [0, 2, 3]], small_scene.cloud[:, [0, 2, 3]])

    @given(box_st)
    def test_corners_mirror(self, box):
        fc = box_corners_3d(flip_box(box))
        mirrored = box_corners_3d(box) * [1, -1, 1]
        assert {tuple(np.round(c, 9) + 0.0) for c in fc} == {tuple(np.round(c, 9) + 0.0) for c in mirrored}

    def test_projection_mirrors_bbox(self, rng):
        W, H = 1242, 375
        fcal = flip_calibration(KITTI_CALIB, W)
        for _ in range(50):
            box = OrientedBox3D((rng.uniform(8, 50), rng.uniform(-10, 10), rng.uniform(-1.5, 0)),
                                rng.uniform(0.5, 4, 3), rng.uniform(-math.pi, math.pi))
            a = project_box_to_image(box, KITTI_CALIB).bbox
            b = project_box_to_image(flip_box(box), fcal).bbox
            np.testing.assert_allclose([b.left, b.top, b.right, b.bottom], [W - a.right, a.top, W - a.left, a.bottom],
                                       atol=1e-6)

    @given(box_st, box_st)
    def test_bev_iou_invariant(self, a, b):
        assert bev_iou(flip_box(a), flip_box(b)) == pytest.approx(bev_iou(a, b), abs=1e-9)

    def test_labels_commute_with_flip(self, small_scene):
        s = small_scene
        props = generate_proposals(s, 6, "perturb", seed=8) + generate_proposals(s, 3, "depth_aligned", seed=8)
        f = flip_scene(s.cloud, s.image, s.calib, props.boxes)
        gts_f = [GroundTruth(flip_box(g.box), g.class_name) for g in s.gts]
        a = assign_labels(props.boxes, s.gts, s.calib, s.image_size)
        b = assign_labels(f.boxes, gts_f, f.calib, s.image_size)
        for view in ("bev", "img"):
            assert list(a.states(view)) == list(b.states(view))
            np.testing.assert_allclose([l.iou for l in getattr(a, view)], [l.iou for l in getattr(b, view)], atol=1e-9)

    def test_camera_label_flip_matches_lidar_flip(self, rng):
        W = 1242
        fcal = flip_calibration(KITTI_CALIB, W)
        for _ in range(20):
            box = OrientedBox3D((rng.uniform(8, 50), rng.uniform(-10, 10), -1.0), rng.uniform(0.5, 4, 3),
                                rng.uniform(-math.pi, math.pi))
            lab = box_to_label(box, KITTI_CALIB, "Car")
            back = label_to_box(flip_label(lab, W), fcal)
            ref = flip_box(box)
            np.testing.assert_allclose(back.center, ref.center, atol=1e-6)
            assert abs(math.remainder(back.yaw - ref.yaw, 2 * math.pi)) <= 1e-9
            twice = flip_label(flip_label(lab, W), W)
            assert twice.location == lab.location
            assert abs(math.remainder(twice.rotation_y - lab.rotation_y, 2 * math.pi)) <= 1e-12

    def test_plane_flip(self):
        from mlod.kitti_io import GroundPlane
        p = GroundPlane((0.1, 0.2, 0.97), 1.7)
        q = flip_plane(p)
        pt = np.array([3.0, 2.0, -1.0])
        assert q.height(pt * [1, -1, 1]) == pytest.approx(p.height(pt))


class TestPca:
    def test_constant_images(self):
        basis = fit_pca_basis([np.full((4, 5, 3), 77.0), np.full((2, 2, 3), 77.0)])
        np.testing.assert_allclose(basis.eigenvalues, [0, 0, 0], atol=1e-20)

    def test_red_only(self, rng):
        img = np.zeros((10, 10, 3))
        img[..., 0] = rng.uniform(0, 255, size=(10, 10))
        basis = fit_pca_basis(img)
        np.testing.assert_allclose(np.abs(basis.eigenvectors[:, 0]), [1, 0, 0], atol=1e-12)
        assert basis.eigenvalues[0] == pytest.approx((img[..., 0] / 255).var())
        np.testing.assert_allclose(basis.eigenvalues[1:], 0, atol=1e-15)

    def test_reconstruction(self, rng):
        imgs = [rng.uniform(0, 255, size=(8, 9, 3)) @ rng.normal(size=(3, 3)) for _ in range(3)]
        basis = fit_pca_basis(imgs, scale=1.0)
        pix = np.concatenate([i.reshape(-1, 3) for i in imgs])
        cov = np.cov(pix.T, bias=True)
        np.testing.assert_allclose(basis.covariance(), cov, atol=1e-9 * np.abs(cov).max())
        V = basis.eigenvectors
        np.testing.assert_allclose(V.T @ V, np.eye(3), atol=1e-6)
        assert np.all(np.diff(basis.eigenvalues) <= 0) and np.all(basis.eigenvalues >= 0)

    def test_jitter_identity_and_formula(self, rng):
        basis = PcaBasis(np.array([30.0, 5.0, 1.0]), np.linalg.qr(rng.normal(size=(3, 3)))[0], scale=1.0)
        img = rng.uniform(60, 190, size=(6, 6, 3))
        np.testing.assert_array_equal(pca_jitter(img, basis, [0, 0, 0]), img)
        out = pca_jitter(img, basis, [1, 0, 0])
        np.testing.assert_allclose(out - img, np.broadcast_to(30.0 * basis.eigenvectors[:, 0], img.shape), atol=1e-12)
        scaled = PcaBasis(basis.eigenvalues / 255, basis.eigenvectors, scale=255.0)
        np.testing.assert_allclose(pca_jitter(img, scaled, [1, 0, 0]), out, atol=1e-12)

    def test_default_sigma_gives_small_shifts(self, rng):
        basis = fit_pca_basis(rng.uniform(0, 255, size=(32, 32, 3)))
        img = np.full((4, 4, 3), 128.0)
        shifts = [np.abs(pca_jitter(img, basis, draw_alphas(rng, 0.1)) - img).max() for _ in range(200)]
        assert 0 < np.median(shifts) < 10

    def test_clamped(self, rng):
        basis = PcaBasis(np.array([1e4, 10.0, 1.0]), np.eye(3))
        out = pca_jitter(rng.uniform(0, 255, size=(5, 5, 3)), basis, [3.0, -2.0, 1.0])
        assert out.min() >= 0 and out.max() <= 255

    def test_mean_preserved(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(80, 170, size=(32, 32, 3))
        basis = fit_pca_basis(rng.uniform(0, 255, size=(16, 16, 3)))
        drift = np.mean([pca_jitter(img, basis, draw_alphas(rng, 0.01)).mean() - img.mean() for _ in range(400)])
        assert abs(drift) <= 0.5
