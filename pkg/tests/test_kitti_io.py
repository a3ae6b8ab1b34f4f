import math
import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mlod.errors import (LengthNotMultipleOf16, MissingKey, NonFiniteValue, NonOrthonormalRotation,
                         WrongArity, WrongFieldCount, ZeroNormal)
from mlod.geometry import OrientedBox3D, bev_iou
from mlod.kitti_io import (CalibrationSet, GroundTruthLabel, label_to_box, parse_calibration,
                           parse_ground_plane, parse_labels, parse_point_cloud, write_calibration,
                           write_detections, write_ground_plane, write_labels, write_point_cloud)

# two points, hand-encoded float32 little-endian:
# (1.0, -2.5, 0.25, 1.0) and (100.0, 0.0, -1.5, 0.0)
TWO_POINTS_HEX = ("0000803f" "000020c0" "0000803e" "0000803f"
                  "0000c842" "00000000" "0000c0bf" "00000000")


def pinhole_text(f=700.0, cx=600.0, cy=180.0):
    P = f"{f} 0 {cx} 0 0 {f} {cy} 0 0 0 1 0"
    return (f"P0: {P}\nP1: {P}\nP2: {P}\nP3: {P}\n"
            "R0_rect: 1 0 0 0 1 0 0 0 1\n"
            "Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n")


KITTI_CALIB = CalibrationSet(
    P2=np.array([[721.5377, 0, 609.5593, 44.85728], [0, 721.5377, 172.854, 0.2163791], [0, 0, 1, 0.002745884]]),
    R0=np.array([[0.9999239, 0.00983776, -0.007445048], [-0.009869795, 0.9999421, -0.004278459],
                 [0.007402527, 0.004351614, 0.9999631]]),
    Tr=np.array([[7.533745e-03, -9.999714e-01, -6.166020e-04, -4.069766e-03],
                 [1.480249e-02, 7.280733e-04, -9.998902e-01, -7.631618e-02],
                 [9.998621e-01, 7.523790e-03, 1.480755e-02, -2.717806e-01]]),
)


class TestPointCloud:
    def test_empty(self):
        assert parse_point_cloud(b"").shape == (0, 4)

    def test_single_point(self):
        blob = struct.pack("<4f", 1.0, 2.0, 3.0, 0.5)
        np.testing.assert_array_equal(parse_point_cloud(blob), [[1, 2, 3, 0.5]])

    def test_hex_fixture(self):
        pts = parse_point_cloud(bytes.fromhex(TWO_POINTS_HEX))
        np.testing.assert_array_equal(pts, [[1.0, -2.5, 0.25, 1.0], [100.0, 0.0, -1.5, 0.0]])

    def test_bad_length(self):
        with pytest.raises(LengthNotMultipleOf16):
            parse_point_cloud(b"\x00" * 17)

    def test_non_finite_reports_index(self):
        blob = struct.pack("<8f", 0, 0, 0, 0, 1, float("nan"), 0, 0)
        with pytest.raises(NonFiniteValue) as e:
            parse_point_cloud(blob)
        assert e.value.index == 1

    @given(st.lists(st.tuples(*[st.floats(-1e4, 1e4, width=32)] * 4), max_size=20),
           st.lists(st.tuples(*[st.floats(-1e4, 1e4, width=32)] * 4), max_size=20))
    def test_concatenation(self, a, b):
        ba = write_point_cloud(np.array(a, dtype=np.float64).reshape(-1, 4))
        bb = write_point_cloud(np.array(b, dtype=np.float64).reshape(-1, 4))
        joined = parse_point_cloud(ba + bb)
        np.testing.assert_array_equal(joined, np.vstack([parse_point_cloud(ba), parse_point_cloud(bb)]))
        assert write_point_cloud(joined) == ba + bb


class TestCalibration:
    def test_unit_pinhole(self):
        calib = parse_calibration(pinhole_text(1.0, 0.0, 0.0))
        uv, d = calib.project_lidar(np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(uv, [0.0, 0.0])
        assert d == 1.0

    def test_principal_point(self):
        calib = parse_calibration(pinhole_text())
        uv, d = calib.project_rect(np.array([0.0, 0.0, 10.0]))
        np.testing.assert_allclose(uv, [600.0, 180.0], atol=1e-12)
        # off-axis point: u = cx + f x / z
        uv, _ = calib.project_rect(np.array([1.0, -0.5, 10.0]))
        np.testing.assert_allclose(uv, [600.0 + 70.0, 180.0 - 35.0], atol=1e-12)

    def test_homogeneous_promotion(self):
        calib = parse_calibration(pinhole_text())
        assert calib.R0.shape == (4, 4) and calib.Tr.shape == (4, 4)
        np.testing.assert_array_equal(calib.R0[3], [0, 0, 0, 1])
        np.testing.assert_array_equal(calib.Tr[3], [0, 0, 0, 1])

    def test_missing_key(self):
        text = "\n".join(l for l in pinhole_text().splitlines() if not l.startswith("Tr_velo"))
        with pytest.raises(MissingKey) as e:
            parse_calibration(text)
        assert e.value.key == "Tr_velo_to_cam"

    def test_wrong_arity(self):
        text = pinhole_text().replace("R0_rect: 1 0 0 0 1 0 0 0 1", "R0_rect: 1 0 0 0 1 0 0 0")
        with pytest.raises(WrongArity):
            parse_calibration(text)

    def test_non_orthonormal_warns(self):
        text = pinhole_text().replace("R0_rect: 1 0 0 0 1 0 0 0 1", "R0_rect: 1.1 0 0 0 1 0 0 0 1")
        with pytest.warns(NonOrthonormalRotation):
            parse_calibration(text)

    def test_write_parse_round_trip(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            again = parse_calibration(write_calibration(KITTI_CALIB))
        np.testing.assert_allclose(again.P2, KITTI_CALIB.P2, rtol=1e-12)
        np.testing.assert_allclose(again.Tr, KITTI_CALIB.Tr, rtol=1e-12)

    @given(st.floats(-20, 20), st.floats(-5, 5), st.floats(0.5, 80))
    def test_backproject_recovers_depth(self, x, y, z):
        calib = parse_calibration(pinhole_text())
        p = np.array([x, y, z])
        uv, d = calib.project_rect(p)
        back = calib.backproject(uv, d)
        assert abs(back[2] - z) <= 1e-9
        np.testing.assert_allclose(back, p, atol=1e-9)

    def test_lidar_rect_inverse(self, rng):
        pts = rng.uniform(-30, 30, size=(50, 3))
        np.testing.assert_allclose(KITTI_CALIB.rect_to_lidar(KITTI_CALIB.lidar_to_rect(pts)), pts, atol=1e-3)


class TestGroundPlane:
    def test_already_normalized(self):
        p = parse_ground_plane("# Plane\nWidth 4\nHeight 1\n0 -1 0 1.65\n")
        assert p.normal == (0.0, -1.0, 0.0) and p.offset == 1.65

    def test_divide_by_norm(self):
        p = parse_ground_plane("0 -2 0 3.3")
        assert p.normal == (0.0, -1.0, 0.0)
        assert p.offset == pytest.approx(1.65, abs=1e-15)

    def test_zero_normal(self):
        with pytest.raises(ZeroNormal):
            parse_ground_plane("0 0 0 1")

    def test_orientation_fixed(self):
        # same plane written with the opposite sign
        p = parse_ground_plane("0 1 0 -1.65")
        assert p.normal == (-0.0, -1.0, -0.0) and p.offset == 1.65
        assert p.height(np.zeros(3)) >= 0

    @given(st.floats(-1, 1), st.floats(0.1, 2), st.floats(-1, 1), st.floats(-5, 5))
    def test_unit_normal_and_round_trip(self, a, b, c, d):
        p = parse_ground_plane(f"{a!r} {-b!r} {c!r} {d!r}")
        assert abs(np.linalg.norm(p.normal) - 1.0) <= 1e-9
        assert p.offset >= 0
        q = parse_ground_plane(write_ground_plane(p))
        np.testing.assert_allclose(q.normal, p.normal, atol=1e-11)
        assert q.offset == pytest.approx(p.offset, abs=1e-11)


CAR_LINE = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59"

label_st = st.builds(
    GroundTruthLabel,
    class_name=st.sampled_from(["Car", "Pedestrian", "Cyclist", "DontCare", "Van"]),
    truncation=st.floats(0, 1),
    occlusion=st.integers(0, 3),
    alpha=st.floats(-math.pi, math.pi),
    bbox2d=st.tuples(st.floats(0, 600), st.floats(0, 180), st.floats(601, 1240), st.floats(181, 370)),
    dimensions=st.tuples(st.floats(0.5, 5), st.floats(0.3, 3), st.floats(0.3, 6)),
    location=st.tuples(st.floats(-40, 40), st.floats(-3, 3), st.floats(1, 80)),
    rotation_y=st.floats(-math.pi, math.pi),
)


class TestLabels:
    def test_empty(self):
        assert parse_labels("") == []

    def test_car_line(self):
        (lab,) = parse_labels(CAR_LINE + "\n")
        assert lab.class_name == "Car" and lab.occlusion == 0
        assert lab.bbox2d == (587.01, 173.33, 614.12, 200.12)
        assert lab.dimensions == (1.65, 1.67, 3.64)
        assert lab.location == (-0.65, 1.71, 46.70)
        assert lab.rotation_y == -1.59 and lab.score is None
        assert write_labels([lab]).strip() == CAR_LINE

    def test_wrong_field_count(self):
        with pytest.raises(WrongFieldCount) as e:
            parse_labels(" ".join(CAR_LINE.split()[:14]))
        assert e.value.line == 1

    def test_dontcare_flagged(self):
        (lab,) = parse_labels("DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10")
        assert lab.is_dontcare

    @given(st.lists(label_st, max_size=6))
    def test_write_parse_round_trip(self, labels):
        back = parse_labels(write_labels(labels))
        assert len(back) == len(labels)
        for a, b in zip(labels, back):
            assert a.class_name == b.class_name and a.occlusion == b.occlusion
            flat_a = [a.truncation, a.alpha, *a.bbox2d, *a.dimensions, *a.location, a.rotation_y]
            flat_b = [b.truncation, b.alpha, *b.bbox2d, *b.dimensions, *b.location, b.rotation_y]
            np.testing.assert_allclose(flat_a, flat_b, atol=0.005 + 1e-9)


class TestDetections:
    def test_empty(self):
        assert write_detections([], KITTI_CALIB) == ""

    def test_one_box_sixteen_fields(self):
        box = OrientedBox3D((20.0, 2.0, -0.9), (3.9, 1.6, 1.5), 0.3)
        text = write_detections([(box, "Car", 0.87)], KITTI_CALIB)
        assert len(text.splitlines()) == 1 and len(text.split()) == 16

    @given(st.floats(5, 60), st.floats(-15, 15), st.floats(-1.5, 0.5), st.floats(1, 5), st.floats(0.5, 2.5),
           st.floats(0.5, 2.5), st.floats(-math.pi, math.pi), st.floats(0, 1))
    def test_round_trip_geometry(self, x, y, z, l, w, h, yaw, score):
        box = OrientedBox3D((x, y, z), (l, w, h), yaw)
        (lab,) = parse_labels(write_detections([(box, "Car", score)], KITTI_CALIB))
        back = label_to_box(lab, KITTI_CALIB)
        assert lab.score == pytest.approx(score, abs=1e-4)
        # two-decimal fields in the camera frame; the rotated calibration mixes rounding errors
        np.testing.assert_allclose(back.center, box.center, atol=1e-2)
        np.testing.assert_allclose(back.dims, box.dims, atol=1e-2)
        d = abs(math.remainder(back.yaw - box.yaw, 2 * math.pi))
        assert d <= 1e-2
